#include "inst4d/train.hpp"

#include <fstream>

#include <json.hpp>

#include "inst4d/assignment.hpp"
#include "inst4d/errors.hpp"
#include "inst4d/knn.hpp"
#include "inst4d/metrics.hpp"
#include "inst4d/photometric.hpp"
#include "inst4d/rasterizer.hpp"
#include "inst4d/rng.hpp"
#include "inst4d/sinkhorn.hpp"

namespace inst4d {

using nlohmann::json;

namespace {

constexpr double kOpacityLogitClip = 15.0;

// argmax over channels with ties resolved toward the background channel,
// then the lowest instance id.
LabelMap label_map_from_logits(const Eigen::MatrixXd& logits, int height, int width) {
    const int k = static_cast<int>(logits.rows()) - 1;
    LabelMap map(height, width);
    for (int p = 0; p < logits.cols(); ++p) {
        double best = logits(k, p);
        int arg = k;
        for (int c = 0; c < k; ++c) {
            if (logits(c, p) > best) {
                best = logits(c, p);
                arg = c;
            }
        }
        map.labels[static_cast<size_t>(p)] =
            arg == k ? LabelMap::kUnlabeled : static_cast<uint8_t>(arg);
    }
    return map;
}

std::vector<int> identity_perm(int k) {
    std::vector<int> p(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) p[static_cast<size_t>(i)] = i;
    return p;
}

// Flat-array marshalling for the Adam groups.
Eigen::ArrayXd flatten_vec3(const std::vector<Vec3>& v) {
    Eigen::ArrayXd out(3 * static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i)
        for (int k = 0; k < 3; ++k) out[3 * static_cast<Eigen::Index>(i) + k] = v[i][k];
    return out;
}

void unflatten_vec3(const Eigen::ArrayXd& flat, std::vector<Vec3>& v) {
    for (size_t i = 0; i < v.size(); ++i)
        for (int k = 0; k < 3; ++k) v[i][k] = flat[3 * static_cast<Eigen::Index>(i) + k];
}

Eigen::ArrayXd flatten_vec4(const std::vector<Vec4>& v) {
    Eigen::ArrayXd out(4 * static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i)
        for (int k = 0; k < 4; ++k) out[4 * static_cast<Eigen::Index>(i) + k] = v[i][k];
    return out;
}

Eigen::ArrayXd flatten_quats(const std::vector<Quat>& v) {
    Eigen::ArrayXd out(4 * static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) {
        Vec4 q = v[i].vec4();
        for (int k = 0; k < 4; ++k) out[4 * static_cast<Eigen::Index>(i) + k] = q[k];
    }
    return out;
}

void unflatten_quats(const Eigen::ArrayXd& flat, std::vector<Quat>& v) {
    for (size_t i = 0; i < v.size(); ++i) {
        v[i] = Quat(flat[4 * static_cast<Eigen::Index>(i)], flat[4 * static_cast<Eigen::Index>(i) + 1],
                    flat[4 * static_cast<Eigen::Index>(i) + 2], flat[4 * static_cast<Eigen::Index>(i) + 3]);
    }
}

// One Adam update on an arbitrary flat group. Returns false when skipped.
bool adam_group(TrainState& st, const std::string& name, Eigen::ArrayXd params,
                const Eigen::ArrayXd& grads, double lr,
                const std::function<void(const Eigen::ArrayXd&)>& commit) {
    AdamState& a = st.adam[name];
    if (a.m.size() != params.size()) a.init(params.size());
    AdamConfig cfg;
    cfg.lr = lr;
    if (!adam_step(params, grads, a, cfg)) {
        ++st.skipped_steps;
        return false;
    }
    commit(params);
    return true;
}

}  // namespace

void TrainConfig::validate() const {
    if (stage1_steps < 1 || steps_per_timestep < 1) throw ConfigError("steps: must be >= 1");
    if (lambda_l1 < 0 || lambda_ssim < 0) throw ConfigError("lambda: must be >= 0");
    if (s_th <= 0 || s_th > 1) throw ConfigError("s_th: must be in (0, 1]");
    if (activation_interval < 1) throw ConfigError("activation_interval: must be >= 1");
    if (sinkhorn_iters < 1) throw ConfigError("sinkhorn_iters: must be >= 1");
    if (feature_dim < 2 || decoder_hidden < 2) throw ConfigError("decoder dims: too small");
    if (bases_per_instance < 1 || knn_gaussian < 1 || knn_base_graph < 1) {
        throw ConfigError("scaffold counts: must be >= 1");
    }
    const double rates[] = {lr.mean, lr.color, lr.opacity, lr.scale,   lr.rotation,
                            lr.feature, lr.decoder, lr.latent, lr.traj_rot, lr.traj_trans};
    for (double r : rates) {
        if (r <= 0) throw ConfigError("lr: all learning rates must be > 0");
    }
}

std::string TrainConfig::to_json_string() const {
    json j;
    j["format_version"] = 1;
    j["stage1_steps"] = stage1_steps;
    j["steps_per_timestep"] = steps_per_timestep;
    j["lambda_l1"] = lambda_l1;
    j["lambda_ssim"] = lambda_ssim;
    j["s_th"] = s_th;
    j["activation_interval"] = activation_interval;
    j["sinkhorn_iters"] = sinkhorn_iters;
    j["feature_dim"] = feature_dim;
    j["decoder_hidden"] = decoder_hidden;
    j["bases_per_instance"] = bases_per_instance;
    j["knn_gaussian"] = knn_gaussian;
    j["knn_base_graph"] = knn_base_graph;
    j["w_coord"] = w_coord;
    j["w_len"] = w_len;
    j["w_iso"] = w_iso;
    j["finetune_appearance"] = finetune_appearance;
    j["seed"] = seed;
    j["threads"] = threads;
    j["checkpoint_interval"] = checkpoint_interval;
    j["lr"] = {{"mean", lr.mean},         {"color", lr.color},   {"opacity", lr.opacity},
               {"scale", lr.scale},       {"rotation", lr.rotation}, {"feature", lr.feature},
               {"decoder", lr.decoder},   {"latent", lr.latent}, {"traj_rot", lr.traj_rot},
               {"traj_trans", lr.traj_trans}};
    j["ablation"] = {{"no_sinkhorn", ablation.no_sinkhorn},
                     {"no_track_masking", ablation.no_track_masking},
                     {"no_progressive", ablation.no_progressive},
                     {"no_instance_grouping", ablation.no_instance_grouping},
                     {"no_motion_bases", ablation.no_motion_bases},
                     {"straight_through", ablation.straight_through}};
    return j.dump(2);
}

void TrainConfig::apply_json_overrides(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    stage1_steps = j.value("stage1_steps", stage1_steps);
    steps_per_timestep = j.value("steps_per_timestep", steps_per_timestep);
    lambda_l1 = j.value("lambda_l1", lambda_l1);
    lambda_ssim = j.value("lambda_ssim", lambda_ssim);
    s_th = j.value("s_th", s_th);
    activation_interval = j.value("activation_interval", activation_interval);
    sinkhorn_iters = j.value("sinkhorn_iters", sinkhorn_iters);
    feature_dim = j.value("feature_dim", feature_dim);
    decoder_hidden = j.value("decoder_hidden", decoder_hidden);
    bases_per_instance = j.value("bases_per_instance", bases_per_instance);
    knn_gaussian = j.value("knn_gaussian", knn_gaussian);
    knn_base_graph = j.value("knn_base_graph", knn_base_graph);
    w_coord = j.value("w_coord", w_coord);
    w_len = j.value("w_len", w_len);
    w_iso = j.value("w_iso", w_iso);
    finetune_appearance = j.value("finetune_appearance", finetune_appearance);
    seed = j.value("seed", seed);
    threads = j.value("threads", threads);
    checkpoint_interval = j.value("checkpoint_interval", checkpoint_interval);
    if (j.contains("lr")) {
        const json& l = j["lr"];
        lr.mean = l.value("mean", lr.mean);
        lr.color = l.value("color", lr.color);
        lr.opacity = l.value("opacity", lr.opacity);
        lr.scale = l.value("scale", lr.scale);
        lr.rotation = l.value("rotation", lr.rotation);
        lr.feature = l.value("feature", lr.feature);
        lr.decoder = l.value("decoder", lr.decoder);
        lr.latent = l.value("latent", lr.latent);
        lr.traj_rot = l.value("traj_rot", lr.traj_rot);
        lr.traj_trans = l.value("traj_trans", lr.traj_trans);
    }
    if (j.contains("ablation")) {
        const json& a = j["ablation"];
        ablation.no_sinkhorn = a.value("no_sinkhorn", ablation.no_sinkhorn);
        ablation.no_track_masking = a.value("no_track_masking", ablation.no_track_masking);
        ablation.no_progressive = a.value("no_progressive", ablation.no_progressive);
        ablation.no_instance_grouping = a.value("no_instance_grouping", ablation.no_instance_grouping);
        ablation.no_motion_bases = a.value("no_motion_bases", ablation.no_motion_bases);
        ablation.straight_through = a.value("straight_through", ablation.straight_through);
    }
    validate();
}

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    TrainConfig c;
    c.apply_json_overrides(text);
    return c;
}

void init_stage1(TrainState& st, const Dataset& ds) {
    st.config.validate();
    const int k = ds.num_instances;
    const int n = static_cast<int>(ds.seed_points.size());
    if (n == 0) throw MissingPrerequisiteError("dataset has no seed points");
    if (ds.views[static_cast<size_t>(ds.reference_view)].labels.empty()) {
        throw MissingPrerequisiteError("reference view has no labels at t = 0");
    }
    Rng rng(st.config.seed);

    GaussianSet& g = st.gaussians;
    g.resize(n, st.config.feature_dim);
    g.num_instances = k;
    std::vector<Vec3> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = ds.seed_points[static_cast<size_t>(i)].pos;
    KdTree3 tree(positions);
    Rng frng = rng.split(11);
    for (int i = 0; i < n; ++i) {
        const SeedPoint& sp = ds.seed_points[static_cast<size_t>(i)];
        g.means[0][static_cast<size_t>(i)] = sp.pos;
        g.colors[static_cast<size_t>(i)] = sp.color.cwiseMax(0.0).cwiseMin(1.0);
        g.opacity_logits[static_cast<size_t>(i)] = logit(0.8);
        auto nn = tree.nearest(sp.pos, 3, i);
        double mean_dist = 0.0;
        for (int m : nn) mean_dist += (positions[static_cast<size_t>(m)] - sp.pos).norm();
        mean_dist = nn.empty() ? 0.05 : mean_dist / static_cast<double>(nn.size());
        double ls = std::clamp(std::log(std::max(1e-4, 0.6 * mean_dist)), std::log(0.005),
                               std::log(0.3));
        g.log_scales[static_cast<size_t>(i)] = Vec3::Constant(ls);
        g.rotations[static_cast<size_t>(i)] = Quat::identity();
        g.labels[static_cast<size_t>(i)] = g.unassigned_label();
        for (int c = 0; c < st.config.feature_dim; ++c) g.features(c, i) = 0.05 * frng.next_normal();
    }
    g.rotations_t[0] = g.rotations;

    Rng drng = rng.split(12);
    st.decoder = IdentityDecoder::seeded(st.config.feature_dim, st.config.decoder_hidden, k + 1, drng);

    st.latents.assign(static_cast<size_t>(ds.num_views()), Eigen::MatrixXd::Zero(k, k));
    st.active = ActiveViewSet::with_reference(ds.reference_view, st.config.s_th);
    if (st.config.ablation.no_progressive) {
        for (int v = 0; v < ds.num_views(); ++v) st.active.active.insert(v);
    }
    st.global_step = 0;
}

Stage1StepInfo stage1_step(TrainState& st, const Dataset& ds) {
    const TrainConfig& cfg = st.config;
    const int num_views = ds.num_views();
    const int k = ds.num_instances;
    GaussianSet& g = st.gaussians;

    Stage1StepInfo info;
    info.view_ce.assign(static_cast<size_t>(num_views), 0.0);
    info.view_feature_grad_norm.assign(static_cast<size_t>(num_views), 0.0);
    info.view_latent_grad_norm.assign(static_cast<size_t>(num_views), 0.0);

    RasterGrads raster_total;
    raster_total.init(g.size(), g.feature_dim());
    DecoderGrads dec_grads;
    dec_grads.init_like(st.decoder);
    std::vector<Eigen::MatrixXd> latent_grads(static_cast<size_t>(num_views));
    std::vector<LabelMap> rendered(static_cast<size_t>(num_views));
    std::vector<Eigen::MatrixXd> soft(static_cast<size_t>(num_views));

    const double inv_v = 1.0 / num_views;
    for (int v = 0; v < num_views; ++v) {
        const ViewData& view = ds.views[static_cast<size_t>(v)];
        const bool is_ref = v == ds.reference_view;
        const bool is_active = st.active.is_active(v);

        RenderOptions ropts;
        ropts.with_features = true;
        ropts.threads = cfg.threads;
        RenderOutput out = rasterize(g, 0, view.camera, ropts);

        auto l1 = l1_loss(out.image, view.frames[0]);
        auto ss = ssim_loss(out.image, view.frames[0]);
        info.l1 += l1.loss * inv_v;
        info.ssim += ss.loss * inv_v;
        Image dimg(out.image.height, out.image.width);
        for (size_t i = 0; i < dimg.data.size(); ++i) {
            dimg.data[i] = inv_v * (cfg.lambda_l1 * l1.grad.data[i] + cfg.lambda_ssim * ss.grad.data[i]);
        }

        DecoderTape tape;
        Eigen::MatrixXd logits = decode_identity(st.decoder, out.features, &tape);
        rendered[static_cast<size_t>(v)] = label_map_from_logits(logits, view.camera.height, view.camera.width);

        Eigen::MatrixXd s;
        if (is_ref) {
            s = Eigen::MatrixXd::Identity(k, k);
        } else if (cfg.ablation.no_sinkhorn) {
            s = row_softmax(st.latents[static_cast<size_t>(v)]);
        } else {
            s = sinkhorn_normalize(st.latents[static_cast<size_t>(v)], cfg.sinkhorn_iters);
        }
        soft[static_cast<size_t>(v)] = s;
        Eigen::MatrixXd s_used = s;
        if (!is_ref && cfg.ablation.straight_through) {
            s_used = permutation_matrix(harden(s));
        }

        Eigen::MatrixXd local_logits = remap_logits(s_used, logits);
        Eigen::MatrixXd probs = softmax_channels(local_logits);

        std::vector<int> perm =
            is_ref ? identity_perm(k) : invert_permutation(harden(s));
        std::vector<uint8_t> mask;
        if (!cfg.ablation.no_track_masking) {
            mask = unseen_mask(rendered[static_cast<size_t>(v)], perm, view.labels[0]);
        }
        CeResult ce = instance_ce_loss(probs, view.labels[0], mask, /*background_as_class=*/true);
        info.ce += ce.loss * inv_v;
        info.view_ce[static_cast<size_t>(v)] = ce.loss;

        // Backward: CE -> local logits -> (canonical logits, soft permutation).
        Eigen::MatrixXd dlocal = ce.dlogits * inv_v;
        Eigen::MatrixXd dcanon, ds_soft;
        remap_logits_backward(s_used, logits, dlocal, is_active ? &dcanon : nullptr,
                              is_ref ? nullptr : &ds_soft);
        if (!is_ref) {
            latent_grads[static_cast<size_t>(v)] =
                cfg.ablation.no_sinkhorn
                    ? row_softmax_backward(st.latents[static_cast<size_t>(v)], ds_soft)
                    : sinkhorn_backward(st.latents[static_cast<size_t>(v)], cfg.sinkhorn_iters,
                                        ds_soft);
            info.view_latent_grad_norm[static_cast<size_t>(v)] =
                latent_grads[static_cast<size_t>(v)].norm();
        }

        Eigen::MatrixXd dfeatures;
        if (is_active) {
            dfeatures = decode_identity_backward(st.decoder, out.features, tape, dcanon,
                                                 &dec_grads, true);
            info.view_feature_grad_norm[static_cast<size_t>(v)] = dfeatures.norm();
        }
        RasterGrads rg = rasterize_backward(g, 0, view.camera, out, dimg, dfeatures);
        raster_total.accumulate(rg, 1.0);
    }
    info.total = info.ce + cfg.lambda_l1 * info.l1 + cfg.lambda_ssim * info.ssim;

    // --- parameter updates ---
    adam_group(st, "means0", flatten_vec3(g.means[0]), flatten_vec3(raster_total.means), cfg.lr.mean,
               [&](const Eigen::ArrayXd& p) { unflatten_vec3(p, g.means[0]); });
    adam_group(st, "colors", flatten_vec3(g.colors), flatten_vec3(raster_total.colors), cfg.lr.color,
               [&](const Eigen::ArrayXd& p) {
                   unflatten_vec3(p, g.colors);
                   for (Vec3& c : g.colors) c = c.cwiseMax(0.0).cwiseMin(1.0);
               });
    {
        Eigen::ArrayXd op = Eigen::Map<const Eigen::ArrayXd>(g.opacity_logits.data(), g.size());
        Eigen::ArrayXd go = Eigen::Map<const Eigen::ArrayXd>(raster_total.opacity_logits.data(), g.size());
        adam_group(st, "opacity", op, go, cfg.lr.opacity, [&](const Eigen::ArrayXd& p) {
            for (int i = 0; i < g.size(); ++i) {
                g.opacity_logits[static_cast<size_t>(i)] =
                    std::clamp(p[i], -kOpacityLogitClip, kOpacityLogitClip);
            }
        });
    }
    adam_group(st, "scales", flatten_vec3(g.log_scales), flatten_vec3(raster_total.log_scales),
               cfg.lr.scale, [&](const Eigen::ArrayXd& p) { unflatten_vec3(p, g.log_scales); });
    adam_group(st, "rotations", flatten_quats(g.rotations), flatten_vec4(raster_total.rotations),
               cfg.lr.rotation, [&](const Eigen::ArrayXd& p) {
                   unflatten_quats(p, g.rotations);
                   for (Quat& q : g.rotations) q = q.normalized();
                   g.rotations_t[0] = g.rotations;
               });
    {
        Eigen::ArrayXd fp = Eigen::Map<const Eigen::ArrayXd>(g.features.data(), g.features.size());
        Eigen::ArrayXd fg =
            Eigen::Map<const Eigen::ArrayXd>(raster_total.features.data(), raster_total.features.size());
        adam_group(st, "features", fp, fg, cfg.lr.feature, [&](const Eigen::ArrayXd& p) {
            Eigen::Map<Eigen::ArrayXd>(g.features.data(), g.features.size()) = p;
        });
    }
    {
        // Decoder parameters as one flat group.
        const auto sizes = {st.decoder.w1.size(), st.decoder.b1.size(), st.decoder.w2.size(),
                            st.decoder.b2.size()};
        Eigen::Index total = 0;
        for (auto s : sizes) total += s;
        Eigen::ArrayXd dp(total), dg(total);
        Eigen::Index off = 0;
        auto pack = [&off](Eigen::ArrayXd& dst, const double* src, Eigen::Index n) {
            for (Eigen::Index i = 0; i < n; ++i) dst[off + i] = src[i];
            off += n;
        };
        pack(dp, st.decoder.w1.data(), st.decoder.w1.size());
        pack(dp, st.decoder.b1.data(), st.decoder.b1.size());
        pack(dp, st.decoder.w2.data(), st.decoder.w2.size());
        pack(dp, st.decoder.b2.data(), st.decoder.b2.size());
        off = 0;
        pack(dg, dec_grads.dw1.data(), dec_grads.dw1.size());
        pack(dg, dec_grads.db1.data(), dec_grads.db1.size());
        pack(dg, dec_grads.dw2.data(), dec_grads.dw2.size());
        pack(dg, dec_grads.db2.data(), dec_grads.db2.size());
        adam_group(st, "decoder", dp, dg, cfg.lr.decoder, [&](const Eigen::ArrayXd& p) {
            Eigen::Index o = 0;
            auto unpack = [&o, &p](double* dst, Eigen::Index n) {
                for (Eigen::Index i = 0; i < n; ++i) dst[i] = p[o + i];
                o += n;
            };
            unpack(st.decoder.w1.data(), st.decoder.w1.size());
            unpack(st.decoder.b1.data(), st.decoder.b1.size());
            unpack(st.decoder.w2.data(), st.decoder.w2.size());
            unpack(st.decoder.b2.data(), st.decoder.b2.size());
        });
    }
    for (int v = 0; v < num_views; ++v) {
        if (v == ds.reference_view || latent_grads[static_cast<size_t>(v)].size() == 0) continue;
        Eigen::MatrixXd& z = st.latents[static_cast<size_t>(v)];
        Eigen::ArrayXd zp = Eigen::Map<const Eigen::ArrayXd>(z.data(), z.size());
        Eigen::ArrayXd zg = Eigen::Map<const Eigen::ArrayXd>(latent_grads[static_cast<size_t>(v)].data(),
                                                             latent_grads[static_cast<size_t>(v)].size());
        adam_group(st, "latent_" + std::to_string(v), zp, zg, cfg.lr.latent,
                   [&](const Eigen::ArrayXd& p) {
                       Eigen::Map<Eigen::ArrayXd>(z.data(), z.size()) = p;
                       z = z.cwiseMax(-PermutationLatent::kLatentClip)
                               .cwiseMin(PermutationLatent::kLatentClip);
                   });
    }

    // --- progressive activation ---
    st.global_step += 1;
    if (!cfg.ablation.no_progressive && st.global_step % cfg.activation_interval == 0) {
        std::vector<double> scores(static_cast<size_t>(num_views), 0.0);
        std::vector<bool> eligible(static_cast<size_t>(num_views), false);
        for (int v = 0; v < num_views; ++v) {
            if (st.active.is_active(v)) continue;
            std::vector<int> hardened = harden(soft[static_cast<size_t>(v)]);
            std::vector<int> perm = invert_permutation(hardened);
            scores[static_cast<size_t>(v)] = permutation_confidence(
                rendered[static_cast<size_t>(v)], ds.views[static_cast<size_t>(v)].labels[0], perm);
            Eigen::MatrixXd counts = label_cooccurrence(
                rendered[static_cast<size_t>(v)], ds.views[static_cast<size_t>(v)].labels[0], k);
            eligible[static_cast<size_t>(v)] = hardened == hungarian_assign(-counts);
        }
        st.active = update_active_set(st.active, scores, eligible);
    }

    LossRow row;
    row.stage = 1;
    row.step = st.global_step;
    row.timestep = 0;
    row.ce = info.ce;
    row.l1 = info.l1;
    row.ssim = info.ssim;
    row.total = info.total;
    row.active_views = static_cast<int>(st.active.active.size());
    st.log.push_back(row);
    return info;
}

void run_stage1(TrainState& st, const Dataset& ds, const std::filesystem::path* checkpoint_root) {
    for (int step = 0; step < st.config.stage1_steps; ++step) {
        stage1_step(st, ds);
        if (checkpoint_root && st.config.checkpoint_interval > 0 &&
            st.global_step % st.config.checkpoint_interval == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "step_%06lld",
                          static_cast<long long>(st.global_step));
            save_checkpoint(make_checkpoint(st, ds), *checkpoint_root / name);
        }
    }
}

void label_gaussians(GaussianSet& g, const IdentityDecoder& decoder) {
    Eigen::MatrixXd logits = decode_identity(decoder, g.features);
    const int k = decoder.out_dim() - 1;
    for (int i = 0; i < g.size(); ++i) {
        double best = logits(k, i);
        int arg = k;
        for (int c = 0; c < k; ++c) {
            if (logits(c, i) > best) {
                best = logits(c, i);
                arg = c;
            }
        }
        g.labels[static_cast<size_t>(i)] = arg == k ? g.unassigned_label() : arg;
    }
}

void init_stage2(TrainState& st, const Dataset& ds) {
    label_gaussians(st.gaussians, st.decoder);
    std::set<int> dynamic;
    for (int lab : ds.dynamic_instances) {
        for (int i = 0; i < st.gaussians.size(); ++i) {
            if (st.gaussians.labels[static_cast<size_t>(i)] == lab) {
                dynamic.insert(lab);
                break;
            }
        }
    }
    ScaffoldConfig scfg;
    scfg.bases_per_instance = st.config.bases_per_instance;
    scfg.knn_gaussian = st.config.knn_gaussian;
    scfg.knn_base_graph = st.config.knn_base_graph;
    scfg.ignore_labels = st.config.ablation.no_instance_grouping;
    scfg.per_gaussian_bases = st.config.ablation.no_motion_bases;
    Rng rng(st.config.seed);
    Rng srng = rng.split(21);
    st.scaffold = build_scaffold(st.gaussians, scfg, dynamic, srng);
    st.has_scaffold = true;
}

void run_stage2(TrainState& st, const Dataset& ds, const std::filesystem::path* checkpoint_root) {
    const TrainConfig& cfg = st.config;
    GaussianSet& g = st.gaussians;
    Scaffold& sc = st.scaffold;
    const auto train_views = ds.train_views();
    const double inv_v = 1.0 / static_cast<double>(train_views.size());
    const int nb = static_cast<int>(sc.bases.size());

    for (int t = 1; t < ds.timesteps; ++t) {
        // Constant-velocity initialization from the two previous steps.
        TrajParams params;
        params.rot.resize(static_cast<size_t>(nb));
        params.trans.resize(static_cast<size_t>(nb));
        for (int j = 0; j < nb; ++j) {
            const auto& traj = sc.bases[static_cast<size_t>(j)].trajectory;
            SE3 init;
            if (t == 1) {
                init = traj[0];
            } else {
                SE3 delta = se3_compose(traj[static_cast<size_t>(t) - 1],
                                        traj[static_cast<size_t>(t) - 2].inverse());
                init = se3_compose(delta, traj[static_cast<size_t>(t) - 1]);
            }
            params.rot[static_cast<size_t>(j)] = init.rotation.vec4();
            params.trans[static_cast<size_t>(j)] = init.translation;
        }
        st.adam.erase("traj_rot");
        st.adam.erase("traj_trans");

        for (int step = 0; step < cfg.steps_per_timestep; ++step) {
            ScaffoldFrameTape tape;
            scaffold_frame_forward(g, sc, params, t, &tape);

            std::vector<Vec3> d_means(static_cast<size_t>(g.size()), Vec3::Zero());
            std::vector<Vec4> d_rots(static_cast<size_t>(g.size()), Vec4::Zero());
            RasterGrads appearance;
            if (cfg.finetune_appearance) appearance.init(g.size(), 0);
            double l1_sum = 0.0, ssim_sum = 0.0;
            for (int v : train_views) {
                const ViewData& view = ds.views[static_cast<size_t>(v)];
                RenderOptions ropts;
                ropts.with_features = false;
                ropts.threads = cfg.threads;
                RenderOutput out = rasterize(g, t, view.camera, ropts);
                auto l1 = l1_loss(out.image, view.frames[static_cast<size_t>(t)]);
                auto ss = ssim_loss(out.image, view.frames[static_cast<size_t>(t)]);
                l1_sum += l1.loss * inv_v;
                ssim_sum += ss.loss * inv_v;
                Image dimg(out.image.height, out.image.width);
                for (size_t i = 0; i < dimg.data.size(); ++i) {
                    dimg.data[i] =
                        inv_v * (cfg.lambda_l1 * l1.grad.data[i] + cfg.lambda_ssim * ss.grad.data[i]);
                }
                RasterGrads rg = rasterize_backward(g, t, view.camera, out, dimg, {});
                for (int i = 0; i < g.size(); ++i) {
                    d_means[static_cast<size_t>(i)] += rg.means[static_cast<size_t>(i)];
                    d_rots[static_cast<size_t>(i)] += rg.rotations[static_cast<size_t>(i)];
                }
                if (cfg.finetune_appearance) appearance.accumulate(rg, 1.0);
            }

            RigidityResult rig = rigidity_loss(g, sc, params, t, cfg.w_coord, cfg.w_len, cfg.w_iso);
            for (int i = 0; i < g.size(); ++i) {
                d_means[static_cast<size_t>(i)] += rig.d_means_t[static_cast<size_t>(i)];
            }
            TrajGrads grads = scaffold_frame_backward(g, sc, params, tape, d_means, d_rots);
            grads.accumulate(rig.d_params, 1.0);

            adam_group(st, "traj_rot", flatten_vec4(params.rot), flatten_vec4(grads.rot),
                       cfg.lr.traj_rot, [&](const Eigen::ArrayXd& p) {
                           for (int j = 0; j < nb; ++j) {
                               Vec4 q(p[4 * j], p[4 * j + 1], p[4 * j + 2], p[4 * j + 3]);
                               params.rot[static_cast<size_t>(j)] = q.normalized();
                           }
                       });
            adam_group(st, "traj_trans", flatten_vec3(params.trans), flatten_vec3(grads.trans),
                       cfg.lr.traj_trans,
                       [&](const Eigen::ArrayXd& p) { unflatten_vec3(p, params.trans); });
            if (cfg.finetune_appearance) {
                adam_group(st, "colors", flatten_vec3(g.colors), flatten_vec3(appearance.colors),
                           cfg.lr.color, [&](const Eigen::ArrayXd& p) {
                               unflatten_vec3(p, g.colors);
                               for (Vec3& c : g.colors) c = c.cwiseMax(0.0).cwiseMin(1.0);
                           });
                Eigen::ArrayXd op = Eigen::Map<const Eigen::ArrayXd>(g.opacity_logits.data(), g.size());
                Eigen::ArrayXd go =
                    Eigen::Map<const Eigen::ArrayXd>(appearance.opacity_logits.data(), g.size());
                adam_group(st, "opacity", op, go, cfg.lr.opacity, [&](const Eigen::ArrayXd& p) {
                    for (int i = 0; i < g.size(); ++i) {
                        g.opacity_logits[static_cast<size_t>(i)] =
                            std::clamp(p[i], -kOpacityLogitClip, kOpacityLogitClip);
                    }
                });
                adam_group(st, "scales", flatten_vec3(g.log_scales), flatten_vec3(appearance.log_scales),
                           cfg.lr.scale, [&](const Eigen::ArrayXd& p) { unflatten_vec3(p, g.log_scales); });
            }

            st.global_step += 1;
            LossRow row;
            row.stage = 2;
            row.step = st.global_step;
            row.timestep = t;
            row.l1 = l1_sum;
            row.ssim = ssim_sum;
            row.coord = rig.coord;
            row.len = rig.len;
            row.iso = rig.iso;
            row.total = cfg.lambda_l1 * l1_sum + cfg.lambda_ssim * ssim_sum +
                        cfg.w_coord * rig.coord + cfg.w_len * rig.len + cfg.w_iso * rig.iso;
            row.active_views = static_cast<int>(st.active.active.size());
            st.log.push_back(row);
        }

        // Materialize the final poses for this timestep and append them.
        scaffold_frame_forward(g, sc, params, t);
        params.write_to(sc, t);

        if (checkpoint_root && cfg.checkpoint_interval > 0 &&
            (t % cfg.checkpoint_interval == 0 || t == ds.timesteps - 1)) {
            char name[32];
            std::snprintf(name, sizeof(name), "step_%06lld", static_cast<long long>(st.global_step));
            save_checkpoint(make_checkpoint(st, ds), *checkpoint_root / name);
        }
    }
}

Checkpoint make_checkpoint(const TrainState& st, const Dataset& ds) {
    Checkpoint ckpt;
    ckpt.gaussians = st.gaussians;
    ckpt.decoder = st.decoder;
    const int k = ds.num_instances;
    for (int v = 0; v < ds.num_views(); ++v) {
        PermutationRecord rec;
        rec.view = v;
        const bool is_ref = v == ds.reference_view;
        rec.z = is_ref ? Eigen::MatrixXd::Zero(k, k) : st.latents[static_cast<size_t>(v)];
        Eigen::MatrixXd s = is_ref ? Eigen::MatrixXd::Identity(k, k)
                            : st.config.ablation.no_sinkhorn
                                ? row_softmax(rec.z)
                                : sinkhorn_normalize(rec.z, st.config.sinkhorn_iters);
        rec.local_to_canonical = is_ref ? identity_perm(k) : harden(s);
        // Final confidence against the stage-1 rendered canonical labels.
        RenderOptions ropts;
        ropts.with_features = true;
        ropts.threads = st.config.threads;
        RenderOutput out = rasterize(st.gaussians, 0, ds.views[static_cast<size_t>(v)].camera, ropts);
        LabelMap rendered = render_label_map(out, ds.height, ds.width, st.decoder);
        rec.confidence = permutation_confidence(rendered, ds.views[static_cast<size_t>(v)].labels[0],
                                                invert_permutation(rec.local_to_canonical));
        ckpt.permutations.push_back(std::move(rec));
    }
    ckpt.scaffold = st.scaffold;
    ckpt.has_scaffold = st.has_scaffold;
    return ckpt;
}

void run_train(const std::filesystem::path& data_dir, const std::filesystem::path& run_dir,
               TrainConfig config, TrainStage stage) {
    config.validate();
    Dataset ds = load_dataset(data_dir, /*with_gt=*/false);

    std::filesystem::create_directories(run_dir);
    {
        json resolved = json::parse(config.to_json_string());
        resolved["data_dir"] = data_dir.string();
        resolved["stage"] = stage == TrainStage::kInit ? "init"
                            : stage == TrainStage::kSeq ? "seq"
                                                        : "all";
        std::ofstream out(run_dir / "config.json");
        out << resolved.dump(2) << "\n";
    }

    TrainState st;
    st.config = config;
    const std::filesystem::path ckpt_root = run_dir / "checkpoints";

    if (stage == TrainStage::kSeq) {
        if (!std::filesystem::exists(run_dir / "model" / "gaussians.json")) {
            throw MissingPrerequisiteError("--stage seq requires an existing stage-1 model in " +
                                           run_dir.string());
        }
        Checkpoint prev = load_checkpoint(run_dir / "model");
        st.gaussians = std::move(prev.gaussians);
        st.decoder = std::move(prev.decoder);
        st.latents.assign(static_cast<size_t>(ds.num_views()),
                          Eigen::MatrixXd::Zero(ds.num_instances, ds.num_instances));
        for (const PermutationRecord& rec : prev.permutations) {
            if (rec.view >= 0 && rec.view < ds.num_views()) {
                st.latents[static_cast<size_t>(rec.view)] = rec.z;
            }
        }
        st.active = ActiveViewSet::with_reference(ds.reference_view, config.s_th);
    } else {
        init_stage1(st, ds);
        run_stage1(st, ds, config.checkpoint_interval > 0 ? &ckpt_root : nullptr);
    }
    if (stage != TrainStage::kInit) {
        init_stage2(st, ds);
        run_stage2(st, ds, config.checkpoint_interval > 0 ? &ckpt_root : nullptr);
    }

    write_log_csv(st.log, run_dir / "log.csv");
    save_checkpoint(make_checkpoint(st, ds), run_dir / "model");
}

}  // namespace inst4d
