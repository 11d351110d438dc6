#pragma once

#include <filesystem>
#include <vector>

#include "inst4d/quat.hpp"

namespace inst4d {

// Pinhole camera. Extrinsic maps world points into camera space
// (+z forward, +x right, +y down).
struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    SE3 world_to_cam;
    int width = 0;
    int height = 0;

    void validate() const;

    // Camera-space coordinates of a world point.
    Vec3 to_camera(const Vec3& p) const { return world_to_cam.apply(p); }

    // A camera at `eye` looking at `target`; `up` fixes the roll.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                          int width, int height);
};

void save_cameras_json(const std::vector<Camera>& cams, const std::filesystem::path& path);
std::vector<Camera> load_cameras_json(const std::filesystem::path& path);

}  // namespace inst4d
