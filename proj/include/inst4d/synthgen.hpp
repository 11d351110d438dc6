#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "inst4d/dataset.hpp"
#include "inst4d/gaussians.hpp"
#include "inst4d/rng.hpp"

namespace inst4d {

// Configuration of the deterministic multi-view dataset generator.
struct SynthConfig {
    std::string name = "scene";
    int num_instances = 2;
    int gaussians_per_instance = 60;
    int timesteps = 2;
    int views = 2;
    int image_size = 64;
    // Motion family per instance: static | linear | circular | articulated.
    // A single entry applies to all instances; empty cycles the families.
    std::vector<std::string> motions;
    double label_noise_rate = 0.0;
    struct Drop {
        int instance = -1;  // -1 disables
        int view = -1;
        int frame_begin = 0;
        int frame_end = 0;  // exclusive
    } drop;
    uint64_t seed = 1;
    int reference_view = 0;
    std::vector<int> test_views;  // default: every 7th view (6, 13, ...)
    bool emit_gt_model = false;

    // Scene geometry knobs.
    double camera_radius = 3.6;
    double camera_height = 1.6;
    double instance_ring_radius = 0.9;
    double blob_radius = 0.26;
    double motion_span = 0.55;  // total displacement / rotation scale

    void validate() const;
    static SynthConfig from_json_file(const std::filesystem::path& path);
    std::string motion_of(int instance) const;
};

// Fully materialized synthetic scene.
struct SynthScene {
    GaussianSet gaussians;              // canonical labels; features one-hot(K+1)
    std::vector<int> unit_of_gaussian;  // rigid unit per Gaussian
    std::vector<Camera> cameras;
    GroundTruth gt;
    std::vector<std::vector<Image>> frames;        // [v][t]
    std::vector<std::vector<LabelMap>> canonical;  // [v][t]
    std::vector<std::vector<LabelMap>> local;      // [v][t], after noise/drop
    std::set<int> dynamic_instances;
};

// Deterministic scene synthesis; every random draw derives from config.seed.
SynthScene synthesize(const SynthConfig& config, int threads = 1);

// Independently corrupt labeled pixels to a uniformly random other label.
void corrupt_labels(LabelMap& map, int num_instances, double rate, Rng& rng);

// Replace the local label id of `local_id` with the sentinel; returns the
// flat indices of the dropped pixels.
std::vector<int> drop_object(LabelMap& map, int local_id);

// Write the dataset directory (manifest, cameras, frames, labels, gt).
void write_dataset(const SynthScene& scene, const SynthConfig& config,
                   const std::filesystem::path& dir);

// Checkpoint holding the ground-truth scene as a renderable model
// (one-hot features with an exact passthrough decoder).
void write_gt_model(const SynthScene& scene, const std::filesystem::path& dir);

}  // namespace inst4d
