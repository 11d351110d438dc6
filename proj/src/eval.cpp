#include "inst4d/eval.hpp"

#include <fstream>

#include <json.hpp>

#include "inst4d/assignment.hpp"
#include "inst4d/photometric.hpp"
#include "inst4d/rasterizer.hpp"

namespace inst4d {

using nlohmann::json;

namespace {

void dump_feature_map(const Eigen::MatrixXd& features, int height, int width,
                      const std::filesystem::path& base) {
    std::ofstream bin(base.string() + ".f32", std::ios::binary);
    for (int p = 0; p < features.cols(); ++p) {
        for (int c = 0; c < features.rows(); ++c) {
            float v = static_cast<float>(features(c, p));
            bin.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
    json sidecar;
    sidecar["format_version"] = 1;
    sidecar["channels"] = features.rows();
    sidecar["height"] = height;
    sidecar["width"] = width;
    sidecar["layout"] = "row-major pixels, channels interleaved, little-endian float32";
    std::ofstream side(base.string() + ".json");
    side << sidecar.dump(2) << "\n";
}

}  // namespace

EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& ds,
                               const std::string& scene_name, const EvalOptions& opts) {
    EvalResult result;
    SceneMetrics& m = result.metrics;
    m.name = scene_name;

    std::vector<int> eval_views;
    if (opts.views == "train") {
        eval_views = ds.train_views();
    } else if (opts.views == "all" || ds.test_views.empty()) {
        for (int v = 0; v < ds.num_views(); ++v) eval_views.push_back(v);
    } else {
        eval_views = ds.test_views;
    }

    const int horizon = std::min(ds.timesteps, ckpt.gaussians.timesteps());
    const int k = ds.num_instances;

    RenderOptions ropts;
    ropts.with_features = true;
    ropts.threads = opts.threads;

    double sq_err = 0.0;
    int64_t sq_count = 0;
    double ssim_sum = 0.0;
    int frame_count = 0;
    double miou_sum = 0.0, macc_sum = 0.0, mdyn_sum = 0.0;
    int miou_count = 0, macc_count = 0, mdyn_count = 0;

    for (int v : eval_views) {
        const ViewData& view = ds.views[static_cast<size_t>(v)];
        std::vector<LabelMap> canon_maps(static_cast<size_t>(horizon));
        std::vector<Image> renders(static_cast<size_t>(horizon));
        for (int t = 0; t < horizon; ++t) {
            RenderOutput out = rasterize(ckpt.gaussians, t, view.camera, ropts);
            renders[static_cast<size_t>(t)] = quantized(out.image);
            canon_maps[static_cast<size_t>(t)] =
                render_label_map(out, view.camera.height, view.camera.width, ckpt.decoder);
            if (opts.dump_features && !opts.dump_dir.empty()) {
                std::filesystem::create_directories(opts.dump_dir);
                char base[48];
                std::snprintf(base, sizeof(base), "features_v%03d_t%04d", v, t);
                dump_feature_map(out.features, view.camera.height, view.camera.width,
                                 opts.dump_dir / base);
            }
            const Image& ref = view.frames[static_cast<size_t>(t)];
            for (size_t i = 0; i < ref.data.size(); ++i) {
                double d = renders[static_cast<size_t>(t)].data[i] - ref.data[i];
                sq_err += d * d;
            }
            sq_count += static_cast<int64_t>(ref.data.size());
            ssim_sum += ssim_value(renders[static_cast<size_t>(t)], ref);
            ++frame_count;
        }

        // Per-view test-time alignment over the frame stream.
        std::vector<const LabelMap*> pred_stream, gt_stream;
        for (int t = 0; t < horizon; ++t) {
            pred_stream.push_back(&canon_maps[static_cast<size_t>(t)]);
            gt_stream.push_back(&view.labels[static_cast<size_t>(t)]);
        }
        std::vector<int> align = test_time_align(pred_stream, gt_stream, k);
        for (int t = 0; t < horizon; ++t) {
            LabelMap aligned = apply_label_permutation(canon_maps[static_cast<size_t>(t)], align);
            const LabelMap& gt_map = view.labels[static_cast<size_t>(t)];
            if (auto v1 = miou_instance(aligned, gt_map)) {
                miou_sum += *v1;
                ++miou_count;
            }
            if (auto v2 = macc(aligned, gt_map)) {
                macc_sum += *v2;
                ++macc_count;
            }
            if (auto v3 = miou_dynamic(aligned, gt_map)) {
                mdyn_sum += *v3;
                ++mdyn_count;
            }
        }
    }

    if (sq_count > 0) {
        double mse = sq_err / static_cast<double>(sq_count);
        if (mse > 0.0) m.psnr_db = 10.0 * std::log10(1.0 / mse);
    }
    if (frame_count > 0) m.ssim = ssim_sum / frame_count;
    if (miou_count > 0) m.miou_instance = miou_sum / miou_count;
    if (macc_count > 0) m.macc = macc_sum / macc_count;
    if (mdyn_count > 0) m.miou_dynamic = mdyn_sum / mdyn_count;

    if (ds.gt) {
        // Learned permutations against the ground-truth scrambles.
        if (!ckpt.permutations.empty()) {
            std::vector<std::vector<int>> learned(static_cast<size_t>(ds.num_views()));
            for (const PermutationRecord& rec : ckpt.permutations) {
                learned[static_cast<size_t>(rec.view)] = invert_permutation(rec.local_to_canonical);
            }
            m.perm_accuracy = perm_accuracy(learned, ds.gt->permutations);
        }

        if (ckpt.has_scaffold && !ckpt.scaffold.bases.empty()) {
            // Instance alignment from the reference view's rendered canonical
            // labels versus its local labels (identity permutation by
            // construction of the canonical space).
            const ViewData& ref = ds.views[static_cast<size_t>(ds.reference_view)];
            std::vector<LabelMap> ref_maps(static_cast<size_t>(horizon));
            std::vector<const LabelMap*> pred_stream, gt_stream;
            for (int t = 0; t < horizon; ++t) {
                RenderOutput out = rasterize(ckpt.gaussians, t, ref.camera, ropts);
                ref_maps[static_cast<size_t>(t)] =
                    render_label_map(out, ref.camera.height, ref.camera.width, ckpt.decoder);
                pred_stream.push_back(&ref_maps[static_cast<size_t>(t)]);
                gt_stream.push_back(&ref.labels[static_cast<size_t>(t)]);
            }
            std::vector<int> align = test_time_align(pred_stream, gt_stream, k);

            std::vector<RigidUnit> tracks;
            for (const MotionBase& b : ckpt.scaffold.bases) {
                RigidUnit u;
                u.instance_label = b.instance_label;
                u.trajectory = b.trajectory;
                tracks.push_back(std::move(u));
            }
            TrajectoryError te = traj_rmse(tracks, ds.gt->units, ds.seed_points, align);
            m.traj_rmse = te.rmse;
            result.traj_per_timestep = te.per_timestep;
        }
    }
    return result;
}

}  // namespace inst4d
