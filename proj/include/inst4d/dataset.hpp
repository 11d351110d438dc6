#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "inst4d/camera.hpp"
#include "inst4d/image.hpp"
#include "inst4d/quat.hpp"

namespace inst4d {

// One rigid group of the ground truth. Plain instances have exactly one
// unit; articulated instances have one per rigidly moving part.
struct RigidUnit {
    int instance_label = -1;
    std::vector<SE3> trajectory;  // length T, identity at t = 0
};

struct SeedPoint {
    Vec3 pos = Vec3::Zero();
    Vec3 color = Vec3::Zero();
    int label = -1;  // canonical instance id
    int unit = -1;   // rigid unit index
};

struct GroundTruth {
    std::vector<std::vector<int>> permutations;  // per view, canonical -> local
    std::vector<RigidUnit> units;
    // Dropped-object silhouettes: (view, t) -> flat pixel indices.
    std::map<std::pair<int, int>, std::vector<int>> dropped;
};

struct ViewData {
    Camera camera;
    std::vector<Image> frames;      // [t]
    std::vector<LabelMap> labels;   // [t], local label space
};

struct Dataset {
    int num_instances = 0;
    int timesteps = 0;
    int width = 0, height = 0;
    int reference_view = 0;
    std::vector<int> test_views;
    std::set<int> dynamic_instances;
    std::vector<ViewData> views;
    std::vector<SeedPoint> seed_points;
    std::optional<GroundTruth> gt;

    int num_views() const { return static_cast<int>(views.size()); }
    bool is_test_view(int v) const {
        for (int t : test_views)
            if (t == v) return true;
        return false;
    }
    std::vector<int> train_views() const {
        std::vector<int> out;
        for (int v = 0; v < num_views(); ++v)
            if (!is_test_view(v)) out.push_back(v);
        return out;
    }
};

// Reads a dataset directory (manifest.json, cameras.json, frames, labels,
// seed points). Ground truth files are loaded when with_gt is set.
Dataset load_dataset(const std::filesystem::path& dir, bool with_gt);

// Little-endian float32 trajectory blob + JSON header, shared by ground-truth
// units and learned bases: per track per timestep, quaternion wxyz then
// translation xyz.
void save_trajectories(const std::filesystem::path& bin_path,
                       const std::filesystem::path& header_path,
                       const std::vector<RigidUnit>& tracks);
std::vector<RigidUnit> load_trajectories(const std::filesystem::path& bin_path,
                                         const std::filesystem::path& header_path);

}  // namespace inst4d
