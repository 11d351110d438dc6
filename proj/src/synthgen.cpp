#include "inst4d/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "inst4d/assignment.hpp"
#include "inst4d/errors.hpp"
#include "inst4d/parallel.hpp"
#include "inst4d/rasterizer.hpp"
#include "inst4d/serialization.hpp"

namespace inst4d {

using nlohmann::json;

namespace {

constexpr double kBackgroundBias = 0.5;  // instance weight needed to beat background

const std::vector<std::string> kMotionCycle = {"linear", "circular", "static", "articulated"};

Vec3 palette_color(int k, int total) {
    // Evenly spaced hues, full saturation, value 0.9.
    double h = 6.0 * k / std::max(1, total);
    double v = 0.9, s = 0.85;
    double c = v * s;
    double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    double m = v - c;
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    return {r + m, g + m, b + m};
}

// The decoder that turns one-hot features into labels for ground-truth
// rendering: exact passthrough plus a background floor.
IdentityDecoder gt_decoder(int k) {
    Eigen::VectorXd bias = Eigen::VectorXd::Zero(k + 1);
    bias[k] = kBackgroundBias;
    return IdentityDecoder::exact_identity(k + 1, bias);
}

}  // namespace

void SynthConfig::validate() const {
    if (num_instances < 1 || num_instances > 16) {
        throw ConfigError("num_instances: must be in [1, 16]");
    }
    if (gaussians_per_instance < 1) throw ConfigError("gaussians_per_instance: must be >= 1");
    if (timesteps < 1) throw ConfigError("timesteps: must be >= 1");
    if (views < 2) throw ConfigError("views: must be >= 2");
    if (image_size < 16 || image_size > 256) throw ConfigError("image_size: must be in [16, 256]");
    if (label_noise_rate < 0.0 || label_noise_rate > 1.0) {
        throw ConfigError("label_noise_rate: must be in [0, 1]");
    }
    if (reference_view < 0 || reference_view >= views) {
        throw ConfigError("reference_view: out of range");
    }
    for (int v : test_views) {
        if (v < 0 || v >= views) throw ConfigError("test_views: view id out of range");
        if (v == reference_view) throw ConfigError("test_views: reference view cannot be held out");
    }
    for (const std::string& m : motions) {
        if (m != "static" && m != "linear" && m != "circular" && m != "articulated") {
            throw ConfigError("motions: unknown family '" + m + "'");
        }
    }
    if (drop.instance >= 0) {
        if (drop.instance >= num_instances) throw ConfigError("drop.instance: out of range");
        if (drop.view < 0 || drop.view >= views) throw ConfigError("drop.view: out of range");
        if (drop.frame_begin < 0 || drop.frame_end > timesteps ||
            drop.frame_begin > drop.frame_end) {
            throw ConfigError("drop.frame range: invalid");
        }
    }
}

std::string SynthConfig::motion_of(int instance) const {
    if (motions.empty()) return kMotionCycle[static_cast<size_t>(instance) % kMotionCycle.size()];
    if (motions.size() == 1) return motions[0];
    if (instance < static_cast<int>(motions.size())) return motions[static_cast<size_t>(instance)];
    return "static";
}

SynthConfig SynthConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    SynthConfig c;
    c.name = j.value("name", c.name);
    c.num_instances = j.value("num_instances", c.num_instances);
    c.gaussians_per_instance = j.value("gaussians_per_instance", c.gaussians_per_instance);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.views = j.value("views", c.views);
    c.image_size = j.value("image_size", c.image_size);
    c.motions = j.value("motions", c.motions);
    c.label_noise_rate = j.value("label_noise_rate", c.label_noise_rate);
    c.seed = j.value("seed", c.seed);
    c.reference_view = j.value("reference_view", c.reference_view);
    if (j.contains("test_views")) {
        c.test_views = j.at("test_views").get<std::vector<int>>();
    } else {
        for (int v = 6; v < c.views; v += 7) c.test_views.push_back(v);
    }
    c.camera_radius = j.value("camera_radius", c.camera_radius);
    c.camera_height = j.value("camera_height", c.camera_height);
    c.instance_ring_radius = j.value("instance_ring_radius", c.instance_ring_radius);
    c.blob_radius = j.value("blob_radius", c.blob_radius);
    c.motion_span = j.value("motion_span", c.motion_span);
    if (j.contains("drop")) {
        const json& d = j.at("drop");
        c.drop.instance = d.value("instance", -1);
        c.drop.view = d.value("view", -1);
        c.drop.frame_begin = d.value("frame_begin", 0);
        c.drop.frame_end = d.value("frame_end", 0);
    }
    c.validate();
    return c;
}

void corrupt_labels(LabelMap& map, int num_instances, double rate, Rng& rng) {
    if (rate <= 0.0 || num_instances < 2) return;
    for (uint8_t& l : map.labels) {
        if (l == LabelMap::kUnlabeled) continue;
        if (rng.next_double() < rate) {
            int other = rng.next_int(num_instances - 1);
            if (other >= l) ++other;
            l = static_cast<uint8_t>(other);
        }
    }
}

std::vector<int> drop_object(LabelMap& map, int local_id) {
    std::vector<int> dropped;
    for (size_t p = 0; p < map.labels.size(); ++p) {
        if (map.labels[p] == local_id) {
            map.labels[p] = LabelMap::kUnlabeled;
            dropped.push_back(static_cast<int>(p));
        }
    }
    return dropped;
}

SynthScene synthesize(const SynthConfig& config, int threads) {
    config.validate();
    const int k_count = config.num_instances;
    const int t_count = config.timesteps;
    SynthScene scene;
    Rng master(config.seed);

    // --- rigid units and their trajectories ---
    std::vector<Vec3> centers(static_cast<size_t>(k_count));
    for (int k = 0; k < k_count; ++k) {
        double angle = 2.0 * M_PI * k / std::max(1, k_count);
        double ring = k_count == 1 ? 0.0 : config.instance_ring_radius;
        centers[static_cast<size_t>(k)] = {ring * std::cos(angle), ring * std::sin(angle), 0.0};
    }
    const double step_span = config.motion_span / std::max(1, t_count - 1);
    std::vector<std::vector<int>> units_of_instance(static_cast<size_t>(k_count));
    for (int k = 0; k < k_count; ++k) {
        Rng mrng = master.split(1000 + static_cast<uint64_t>(k));
        std::string family = config.motion_of(k);
        auto add_unit = [&](const std::function<SE3(int)>& pose_at) {
            RigidUnit u;
            u.instance_label = k;
            for (int t = 0; t < t_count; ++t) u.trajectory.push_back(pose_at(t));
            units_of_instance[static_cast<size_t>(k)].push_back(
                static_cast<int>(scene.gt.units.size()));
            scene.gt.units.push_back(std::move(u));
        };
        if (family == "static") {
            add_unit([](int) { return SE3::identity(); });
        } else if (family == "linear") {
            double az = mrng.next_uniform(0.0, 2.0 * M_PI);
            Vec3 dir(std::cos(az), std::sin(az), mrng.next_uniform(-0.15, 0.15));
            dir.normalize();
            Vec3 vel = step_span * dir;
            add_unit([vel](int t) { return SE3(Quat::identity(), t * vel); });
            scene.dynamic_instances.insert(k);
        } else if (family == "circular") {
            Vec3 pivot = centers[static_cast<size_t>(k)] +
                         Vec3(mrng.next_uniform(0.25, 0.4), 0.0, 0.0);
            double omega = (mrng.next_double() < 0.5 ? 1.0 : -1.0) * 2.2 * step_span;
            add_unit([pivot, omega](int t) {
                Quat q = Quat::from_axis_angle({0, 0, 1}, omega * t);
                return SE3(q, pivot - q.rotate(pivot));
            });
            scene.dynamic_instances.insert(k);
        } else {  // articulated: two halves hinged at the instance center
            Vec3 hinge = centers[static_cast<size_t>(k)];
            double omega = 1.6 * step_span;
            for (int half = 0; half < 2; ++half) {
                double sign = half == 0 ? 1.0 : -1.0;
                add_unit([hinge, omega, sign](int t) {
                    Quat q = Quat::from_axis_angle({0, 0, 1}, sign * omega * t);
                    return SE3(q, hinge - q.rotate(hinge));
                });
            }
            scene.dynamic_instances.insert(k);
        }
    }

    // --- Gaussians (features one-hot over K+1 channels) ---
    GaussianSet& g = scene.gaussians;
    g.resize(k_count * config.gaussians_per_instance, k_count + 1);
    g.num_instances = k_count;
    int gi = 0;
    for (int k = 0; k < k_count; ++k) {
        Rng prng = master.split(2000 + static_cast<uint64_t>(k));
        Vec3 base_color = palette_color(k, k_count);
        const auto& units = units_of_instance[static_cast<size_t>(k)];
        for (int j = 0; j < config.gaussians_per_instance; ++j, ++gi) {
            Vec3 offset(prng.next_normal(), prng.next_normal(), prng.next_normal());
            offset *= config.blob_radius * 0.55;
            int unit = units[static_cast<size_t>(j) % units.size()];
            if (units.size() == 2) {
                // Two-link instance: halves offset along x from the hinge.
                double side = (unit == units[0]) ? 1.0 : -1.0;
                offset[0] = side * (std::abs(offset[0]) * 0.8 + 0.12);
            }
            g.means[0][static_cast<size_t>(gi)] = centers[static_cast<size_t>(k)] + offset;
            Vec3 jitter(prng.next_uniform(-0.06, 0.06), prng.next_uniform(-0.06, 0.06),
                        prng.next_uniform(-0.06, 0.06));
            Vec3 col = base_color + jitter;
            g.colors[static_cast<size_t>(gi)] = col.cwiseMax(0.0).cwiseMin(1.0);
            g.opacity_logits[static_cast<size_t>(gi)] = prng.next_uniform(1.6, 2.4);
            double ls = std::log(config.blob_radius * 0.22) + prng.next_uniform(-0.25, 0.25);
            g.log_scales[static_cast<size_t>(gi)] = Vec3(ls, ls, ls) +
                Vec3(prng.next_uniform(-0.15, 0.15), prng.next_uniform(-0.15, 0.15),
                     prng.next_uniform(-0.15, 0.15));
            Quat q{prng.next_normal(), prng.next_normal(), prng.next_normal(), prng.next_normal()};
            g.rotations[static_cast<size_t>(gi)] = q.normalized().canonicalized();
            g.features(k, gi) = 1.0;
            g.labels[static_cast<size_t>(gi)] = k;
            scene.unit_of_gaussian.push_back(unit);
        }
    }
    g.rotations_t[0] = g.rotations;

    // Materialize every timestep from the unit trajectories.
    for (int t = 1; t < t_count; ++t) {
        g.materialize_through(t);
        for (int i = 0; i < g.size(); ++i) {
            const SE3& pose =
                scene.gt.units[static_cast<size_t>(scene.unit_of_gaussian[static_cast<size_t>(i)])]
                    .trajectory[static_cast<size_t>(t)];
            g.means[static_cast<size_t>(t)][static_cast<size_t>(i)] =
                pose.apply(g.means[0][static_cast<size_t>(i)]);
            g.rotations_t[static_cast<size_t>(t)][static_cast<size_t>(i)] =
                pose.rotation * g.rotations[static_cast<size_t>(i)];
        }
    }

    // --- cameras on a ring ---
    const double focal = 1.15 * config.image_size;
    for (int v = 0; v < config.views; ++v) {
        double angle = 2.0 * M_PI * v / config.views;
        Vec3 eye(config.camera_radius * std::cos(angle), config.camera_radius * std::sin(angle),
                 config.camera_height);
        scene.cameras.push_back(Camera::look_at(eye, {0, 0, 0}, {0, 0, 1}, focal,
                                                config.image_size, config.image_size));
    }

    // --- per-view permutations (reference forced to identity) ---
    scene.gt.permutations.resize(static_cast<size_t>(config.views));
    for (int v = 0; v < config.views; ++v) {
        std::vector<int> perm(static_cast<size_t>(k_count));
        for (int k = 0; k < k_count; ++k) perm[static_cast<size_t>(k)] = k;
        if (v != config.reference_view) {
            Rng vrng = master.split(3000 + static_cast<uint64_t>(v));
            vrng.shuffle(perm);
        }
        scene.gt.permutations[static_cast<size_t>(v)] = perm;
    }

    // --- render frames and label maps ---
    IdentityDecoder dec = gt_decoder(k_count);
    scene.frames.assign(static_cast<size_t>(config.views), {});
    scene.canonical.assign(static_cast<size_t>(config.views), {});
    scene.local.assign(static_cast<size_t>(config.views), {});
    for (int v = 0; v < config.views; ++v) {
        scene.frames[static_cast<size_t>(v)].resize(static_cast<size_t>(t_count));
        scene.canonical[static_cast<size_t>(v)].resize(static_cast<size_t>(t_count));
        scene.local[static_cast<size_t>(v)].resize(static_cast<size_t>(t_count));
    }
    parallel_for(static_cast<int64_t>(config.views) * t_count, threads, [&](int64_t idx) {
        const int v = static_cast<int>(idx / t_count);
        const int t = static_cast<int>(idx % t_count);
        RenderOutput out = rasterize(g, t, scene.cameras[static_cast<size_t>(v)]);
        scene.frames[static_cast<size_t>(v)][static_cast<size_t>(t)] = out.image;
        scene.frames[static_cast<size_t>(v)][static_cast<size_t>(t)].clamp01();
        scene.canonical[static_cast<size_t>(v)][static_cast<size_t>(t)] =
            render_label_map(out, config.image_size, config.image_size, dec);
    });

    for (int v = 0; v < config.views; ++v) {
        const auto& perm = scene.gt.permutations[static_cast<size_t>(v)];
        for (int t = 0; t < t_count; ++t) {
            LabelMap local = scene.canonical[static_cast<size_t>(v)][static_cast<size_t>(t)];
            for (uint8_t& l : local.labels) {
                if (l != LabelMap::kUnlabeled) l = static_cast<uint8_t>(perm[l]);
            }
            if (config.label_noise_rate > 0.0) {
                Rng crng = master.split(4000 + static_cast<uint64_t>(v) * 10007 +
                                        static_cast<uint64_t>(t));
                corrupt_labels(local, k_count, config.label_noise_rate, crng);
            }
            if (config.drop.instance >= 0 && v == config.drop.view &&
                t >= config.drop.frame_begin && t < config.drop.frame_end) {
                int local_id = perm[static_cast<size_t>(config.drop.instance)];
                auto pixels = drop_object(local, local_id);
                scene.gt.dropped[{v, t}] = std::move(pixels);
            }
            scene.local[static_cast<size_t>(v)][static_cast<size_t>(t)] = std::move(local);
        }
    }
    return scene;
}

void write_dataset(const SynthScene& scene, const SynthConfig& config,
                   const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "gt");

    const int t_count = config.timesteps;
    for (int v = 0; v < config.views; ++v) {
        char sub[16];
        std::snprintf(sub, sizeof(sub), "view_%03d", v);
        fs::create_directories(dir / sub);
        for (int t = 0; t < t_count; ++t) {
            char fn[32], ln[32];
            std::snprintf(fn, sizeof(fn), "frame_%04d.ppm", t);
            std::snprintf(ln, sizeof(ln), "label_%04d.pgm", t);
            save_ppm(scene.frames[static_cast<size_t>(v)][static_cast<size_t>(t)], dir / sub / fn);
            save_pgm(scene.local[static_cast<size_t>(v)][static_cast<size_t>(t)], dir / sub / ln);
        }
    }
    save_cameras_json(scene.cameras, dir / "cameras.json");

    json manifest;
    manifest["format_version"] = 1;
    manifest["name"] = config.name;
    manifest["num_instances"] = config.num_instances;
    manifest["views"] = config.views;
    manifest["timesteps"] = t_count;
    manifest["width"] = config.image_size;
    manifest["height"] = config.image_size;
    manifest["reference_view"] = config.reference_view;
    manifest["test_views"] = config.test_views;
    manifest["dynamic_instances"] = std::vector<int>(scene.dynamic_instances.begin(),
                                                     scene.dynamic_instances.end());
    json echo;
    echo["seed"] = config.seed;
    echo["gaussians_per_instance"] = config.gaussians_per_instance;
    json motions = json::array();
    for (int k = 0; k < config.num_instances; ++k) motions.push_back(config.motion_of(k));
    echo["motions"] = std::move(motions);
    echo["label_noise_rate"] = config.label_noise_rate;
    if (config.drop.instance >= 0) {
        echo["drop"] = {{"instance", config.drop.instance},
                        {"view", config.drop.view},
                        {"frame_begin", config.drop.frame_begin},
                        {"frame_end", config.drop.frame_end}};
    }
    echo["camera_radius"] = config.camera_radius;
    echo["camera_height"] = config.camera_height;
    echo["instance_ring_radius"] = config.instance_ring_radius;
    echo["blob_radius"] = config.blob_radius;
    echo["motion_span"] = config.motion_span;
    manifest["config"] = std::move(echo);
    manifest["files"] = {{"cameras", "cameras.json"},
                         {"frames", "view_{v:03}/frame_{t:04}.ppm"},
                         {"labels", "view_{v:03}/label_{t:04}.pgm"},
                         {"permutations", "gt/permutations.json"},
                         {"trajectories", "gt/trajectories.bin"},
                         {"seed_points", "gt/seed_points.json"},
                         {"dropped", "gt/dropped.json"}};
    std::ofstream mout(dir / "manifest.json");
    mout << manifest.dump(2) << "\n";

    json perms;
    perms["format_version"] = 1;
    json views = json::array();
    for (int v = 0; v < config.views; ++v) {
        views.push_back({{"view", v},
                         {"canonical_to_local", scene.gt.permutations[static_cast<size_t>(v)]}});
    }
    perms["views"] = std::move(views);
    std::ofstream pout(dir / "gt" / "permutations.json");
    pout << perms.dump(2) << "\n";

    save_trajectories(dir / "gt" / "trajectories.bin", dir / "gt" / "trajectories.json",
                      scene.gt.units);

    json seeds;
    seeds["format_version"] = 1;
    json points = json::array();
    const GaussianSet& g = scene.gaussians;
    for (int i = 0; i < g.size(); ++i) {
        points.push_back(
            {{"pos", {g.means[0][static_cast<size_t>(i)][0], g.means[0][static_cast<size_t>(i)][1],
                      g.means[0][static_cast<size_t>(i)][2]}},
             {"color", {g.colors[static_cast<size_t>(i)][0], g.colors[static_cast<size_t>(i)][1],
                        g.colors[static_cast<size_t>(i)][2]}},
             {"label", g.labels[static_cast<size_t>(i)]},
             {"unit", scene.unit_of_gaussian[static_cast<size_t>(i)]}});
    }
    seeds["points"] = std::move(points);
    std::ofstream sout(dir / "gt" / "seed_points.json");
    sout << seeds.dump(2) << "\n";

    json dropped;
    dropped["format_version"] = 1;
    json frames = json::array();
    for (const auto& [key, pixels] : scene.gt.dropped) {
        frames.push_back({{"view", key.first}, {"t", key.second}, {"pixels", pixels}});
    }
    dropped["frames"] = std::move(frames);
    std::ofstream dout(dir / "gt" / "dropped.json");
    dout << dropped.dump(2) << "\n";

    if (config.emit_gt_model) write_gt_model(scene, dir / "gt_model");
}

void write_gt_model(const SynthScene& scene, const std::filesystem::path& dir) {
    Checkpoint ckpt;
    ckpt.gaussians = scene.gaussians;
    ckpt.decoder = gt_decoder(scene.gaussians.num_instances);
    const int k = scene.gaussians.num_instances;
    for (size_t v = 0; v < scene.gt.permutations.size(); ++v) {
        PermutationRecord rec;
        rec.view = static_cast<int>(v);
        rec.z = Eigen::MatrixXd::Zero(k, k);
        const auto& canonical_to_local = scene.gt.permutations[v];
        for (int c = 0; c < k; ++c) rec.z(canonical_to_local[static_cast<size_t>(c)], c) = 10.0;
        rec.local_to_canonical = invert_permutation(canonical_to_local);
        rec.confidence = 1.0;
        ckpt.permutations.push_back(std::move(rec));
    }
    save_checkpoint(ckpt, dir);
}

}  // namespace inst4d
