#include "inst4d/camera.hpp"

#include <Eigen/Geometry>
#include <fstream>

#include <json.hpp>

#include "inst4d/errors.hpp"

namespace inst4d {

using nlohmann::json;

void Camera::validate() const {
    if (fx <= 0 || fy <= 0) throw ConfigError("camera: fx and fy must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera: bad image size");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height) {
        throw ConfigError("camera: principal point outside the image");
    }
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                       int width, int height) {
    Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up).normalized();
    Vec3 down = forward.cross(right);
    Eigen::Matrix3d r_cw;  // rows are the camera axes in world coordinates
    r_cw.row(0) = right.transpose();
    r_cw.row(1) = down.transpose();
    r_cw.row(2) = forward.transpose();
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.width = width;
    cam.height = height;
    cam.world_to_cam = SE3(Quat::from_matrix(r_cw), -(r_cw * eye));
    return cam;
}

void save_cameras_json(const std::vector<Camera>& cams, const std::filesystem::path& path) {
    json doc;
    doc["format_version"] = 1;
    json arr = json::array();
    for (const Camera& c : cams) {
        Eigen::Matrix4d m = c.world_to_cam.matrix();
        std::vector<double> flat(16);
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col) flat[static_cast<size_t>(r) * 4 + col] = m(r, col);
        arr.push_back({{"fx", c.fx},
                       {"fy", c.fy},
                       {"cx", c.cx},
                       {"cy", c.cy},
                       {"width", c.width},
                       {"height", c.height},
                       {"world_to_cam", flat}});
    }
    doc["cameras"] = arr;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_cameras_json: cannot open " + path.string());
    out << doc.dump(2) << "\n";
}

std::vector<Camera> load_cameras_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_cameras_json: cannot open " + path.string());
    json doc = json::parse(in);
    if (doc.value("format_version", 0) != 1) {
        throw FormatError("cameras.json: unsupported format_version");
    }
    std::vector<Camera> cams;
    for (const json& j : doc.at("cameras")) {
        Camera c;
        c.fx = j.at("fx").get<double>();
        c.fy = j.at("fy").get<double>();
        c.cx = j.at("cx").get<double>();
        c.cy = j.at("cy").get<double>();
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
        auto flat = j.at("world_to_cam").get<std::vector<double>>();
        if (flat.size() != 16) throw FormatError("cameras.json: world_to_cam must have 16 entries");
        Eigen::Matrix4d m;
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col) m(r, col) = flat[static_cast<size_t>(r) * 4 + col];
        c.world_to_cam = SE3::from_matrix(m);
        c.validate();
        cams.push_back(c);
    }
    return cams;
}

}  // namespace inst4d
