#include "inst4d/dataset.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "inst4d/errors.hpp"

namespace inst4d {

using nlohmann::json;

namespace {

std::string view_dir(int v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "view_%03d", v);
    return buf;
}

std::string frame_name(int t) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "frame_%04d.ppm", t);
    return buf;
}

std::string label_name(int t) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "label_%04d.pgm", t);
    return buf;
}

json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPrerequisiteError("missing file: " + path.string());
    return json::parse(in);
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir, bool with_gt) {
    json manifest = load_json(dir / "manifest.json");
    if (manifest.value("format_version", 0) != 1) {
        throw FormatError("manifest.json: unsupported format_version");
    }
    Dataset ds;
    ds.num_instances = manifest.at("num_instances").get<int>();
    ds.timesteps = manifest.at("timesteps").get<int>();
    ds.width = manifest.at("width").get<int>();
    ds.height = manifest.at("height").get<int>();
    ds.reference_view = manifest.at("reference_view").get<int>();
    ds.test_views = manifest.value("test_views", std::vector<int>{});
    for (int k : manifest.value("dynamic_instances", std::vector<int>{})) {
        ds.dynamic_instances.insert(k);
    }

    auto cams = load_cameras_json(dir / "cameras.json");
    const int num_views = manifest.at("views").get<int>();
    if (static_cast<int>(cams.size()) != num_views) {
        throw FormatError("cameras.json: camera count does not match manifest");
    }
    ds.views.resize(static_cast<size_t>(num_views));
    for (int v = 0; v < num_views; ++v) {
        ViewData& view = ds.views[static_cast<size_t>(v)];
        view.camera = cams[static_cast<size_t>(v)];
        for (int t = 0; t < ds.timesteps; ++t) {
            view.frames.push_back(load_ppm(dir / view_dir(v) / frame_name(t)));
            view.labels.push_back(load_pgm(dir / view_dir(v) / label_name(t)));
        }
    }

    json seeds = load_json(dir / "gt" / "seed_points.json");
    if (seeds.value("format_version", 0) != 1) {
        throw FormatError("seed_points.json: unsupported format_version");
    }
    for (const json& p : seeds.at("points")) {
        SeedPoint sp;
        auto pos = p.at("pos").get<std::vector<double>>();
        auto col = p.at("color").get<std::vector<double>>();
        sp.pos = {pos[0], pos[1], pos[2]};
        sp.color = {col[0], col[1], col[2]};
        sp.label = p.at("label").get<int>();
        sp.unit = p.at("unit").get<int>();
        ds.seed_points.push_back(sp);
    }

    if (with_gt) {
        GroundTruth gt;
        json perms = load_json(dir / "gt" / "permutations.json");
        if (perms.value("format_version", 0) != 1) {
            throw FormatError("gt/permutations.json: unsupported format_version");
        }
        gt.permutations.resize(static_cast<size_t>(num_views));
        for (const json& e : perms.at("views")) {
            int v = e.at("view").get<int>();
            gt.permutations[static_cast<size_t>(v)] =
                e.at("canonical_to_local").get<std::vector<int>>();
        }
        gt.units = load_trajectories(dir / "gt" / "trajectories.bin",
                                     dir / "gt" / "trajectories.json");
        auto dropped_path = dir / "gt" / "dropped.json";
        if (std::filesystem::exists(dropped_path)) {
            json dropped = load_json(dropped_path);
            for (const json& e : dropped.at("frames")) {
                gt.dropped[{e.at("view").get<int>(), e.at("t").get<int>()}] =
                    e.at("pixels").get<std::vector<int>>();
            }
        }
        ds.gt = std::move(gt);
    }
    return ds;
}

void save_trajectories(const std::filesystem::path& bin_path,
                       const std::filesystem::path& header_path,
                       const std::vector<RigidUnit>& tracks) {
    const int n = static_cast<int>(tracks.size());
    const int t_count = n == 0 ? 0 : static_cast<int>(tracks[0].trajectory.size());
    json header;
    header["format_version"] = 1;
    header["tracks"] = n;
    header["timesteps"] = t_count;
    header["layout"] = "per track per timestep: float32 LE, quaternion wxyz then translation xyz";
    std::vector<int> labels;
    for (const RigidUnit& u : tracks) labels.push_back(u.instance_label);
    header["instance_labels"] = labels;
    std::ofstream hout(header_path);
    if (!hout) throw std::runtime_error("save_trajectories: cannot open " + header_path.string());
    hout << header.dump(2) << "\n";

    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw std::runtime_error("save_trajectories: cannot open " + bin_path.string());
    for (const RigidUnit& u : tracks) {
        if (static_cast<int>(u.trajectory.size()) != t_count) {
            throw std::invalid_argument("save_trajectories: ragged trajectories");
        }
        for (const SE3& pose : u.trajectory) {
            float vals[7] = {static_cast<float>(pose.rotation.w), static_cast<float>(pose.rotation.x),
                             static_cast<float>(pose.rotation.y), static_cast<float>(pose.rotation.z),
                             static_cast<float>(pose.translation[0]),
                             static_cast<float>(pose.translation[1]),
                             static_cast<float>(pose.translation[2])};
            out.write(reinterpret_cast<const char*>(vals), sizeof(vals));
        }
    }
}

std::vector<RigidUnit> load_trajectories(const std::filesystem::path& bin_path,
                                         const std::filesystem::path& header_path) {
    json header = load_json(header_path);
    if (header.value("format_version", 0) != 1) {
        throw FormatError("trajectories.json: unsupported format_version");
    }
    const int n = header.at("tracks").get<int>();
    const int t_count = header.at("timesteps").get<int>();
    auto labels = header.at("instance_labels").get<std::vector<int>>();
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw MissingPrerequisiteError("missing file: " + bin_path.string());
    std::vector<RigidUnit> tracks(static_cast<size_t>(n));
    for (int u = 0; u < n; ++u) {
        tracks[static_cast<size_t>(u)].instance_label = labels[static_cast<size_t>(u)];
        for (int t = 0; t < t_count; ++t) {
            float vals[7];
            in.read(reinterpret_cast<char*>(vals), sizeof(vals));
            if (in.gcount() != sizeof(vals)) throw FormatError("trajectories.bin: truncated");
            tracks[static_cast<size_t>(u)].trajectory.push_back(
                SE3(Quat(vals[0], vals[1], vals[2], vals[3]), Vec3(vals[4], vals[5], vals[6])));
        }
    }
    return tracks;
}

}  // namespace inst4d
