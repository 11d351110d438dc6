#include "inst4d/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "inst4d/assignment.hpp"
#include "inst4d/diff_geom.hpp"
#include "inst4d/parallel.hpp"
#include "inst4d/sinkhorn.hpp"

namespace inst4d {

namespace {

constexpr double kNearPlane = 1e-4;
constexpr double kBlurFloor = 0.3;       // px^2 added to the projected covariance
constexpr double kCutoffMahal = 9.0;     // 3-sigma footprint
constexpr double kMinTransmittance = 1e-4;

// Everything the projection of one Gaussian needs, kept for the backward pass.
struct ProjectionWork {
    Vec3 p_cam;
    Eigen::Matrix<double, 2, 3> jac;
    Eigen::Matrix3d m_cam;  // covariance in camera frame
    Eigen::Matrix3d q_rot;  // rotation matrix of the (normalized) quaternion
    Quat q_unit;
    Vec3 scale;
    Eigen::Matrix2d cov2d;
    Eigen::Vector2d mean2d;
};

ProjectionWork project_work(const GaussianSet& g, int i, int t, const Camera& cam) {
    ProjectionWork w;
    const Vec3& mu = g.means[static_cast<size_t>(t)][static_cast<size_t>(i)];
    w.p_cam = cam.world_to_cam.apply(mu);
    const double x = w.p_cam[0], y = w.p_cam[1], z = w.p_cam[2];
    w.mean2d = {cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy};
    w.jac << cam.fx / z, 0.0, -cam.fx * x / (z * z),
             0.0, cam.fy / z, -cam.fy * y / (z * z);
    w.q_unit = g.rotations_t[static_cast<size_t>(t)][static_cast<size_t>(i)].normalized();
    w.q_rot = w.q_unit.matrix();
    w.scale = g.scale(i);
    Eigen::Matrix3d sigma_world =
        w.q_rot * w.scale.cwiseProduct(w.scale).asDiagonal() * w.q_rot.transpose();
    Eigen::Matrix3d r_wc = cam.world_to_cam.rotation.matrix();
    w.m_cam = r_wc * sigma_world * r_wc.transpose();
    w.cov2d = w.jac * w.m_cam * w.jac.transpose();
    w.cov2d(0, 0) += kBlurFloor;
    w.cov2d(1, 1) += kBlurFloor;
    return w;
}

double cov2d_max_eigenvalue(const Eigen::Matrix2d& c) {
    double half_tr = 0.5 * (c(0, 0) + c(1, 1));
    double disc = std::sqrt(std::max(0.0, 0.25 * (c(0, 0) - c(1, 1)) * (c(0, 0) - c(1, 1)) +
                                              c(0, 1) * c(0, 1)));
    return half_tr + disc;
}

}  // namespace

void RasterGrads::init(int n, int feature_channels) {
    colors.assign(static_cast<size_t>(n), Vec3::Zero());
    opacity_logits.assign(static_cast<size_t>(n), 0.0);
    log_scales.assign(static_cast<size_t>(n), Vec3::Zero());
    rotations.assign(static_cast<size_t>(n), Vec4::Zero());
    means.assign(static_cast<size_t>(n), Vec3::Zero());
    features = Eigen::MatrixXd::Zero(feature_channels, n);
}

void RasterGrads::accumulate(const RasterGrads& o, double scale) {
    for (size_t i = 0; i < colors.size(); ++i) {
        colors[i] += scale * o.colors[i];
        opacity_logits[i] += scale * o.opacity_logits[i];
        log_scales[i] += scale * o.log_scales[i];
        rotations[i] += scale * o.rotations[i];
        means[i] += scale * o.means[i];
    }
    if (features.size() > 0 && o.features.size() > 0) features += scale * o.features;
}

bool RasterGrads::all_finite() const {
    for (size_t i = 0; i < colors.size(); ++i) {
        if (!colors[i].allFinite() || !std::isfinite(opacity_logits[i]) ||
            !log_scales[i].allFinite() || !rotations[i].allFinite() || !means[i].allFinite()) {
            return false;
        }
    }
    return features.size() == 0 || features.allFinite();
}

std::optional<Splat2D> project_gaussian(const GaussianSet& g, int i, int t, const Camera& cam) {
    const Vec3& mu = g.means[static_cast<size_t>(t)][static_cast<size_t>(i)];
    Vec3 p_cam = cam.world_to_cam.apply(mu);
    if (p_cam[2] <= kNearPlane) return std::nullopt;
    ProjectionWork w = project_work(g, i, t, cam);
    double radius = 3.0 * std::sqrt(cov2d_max_eigenvalue(w.cov2d));
    if (w.mean2d[0] + radius < 0.0 || w.mean2d[0] - radius > cam.width ||
        w.mean2d[1] + radius < 0.0 || w.mean2d[1] - radius > cam.height) {
        return std::nullopt;
    }
    Splat2D s;
    s.mean2d = w.mean2d;
    s.cov2d = w.cov2d;
    s.depth = p_cam[2];
    s.index = i;
    return s;
}

RenderOutput rasterize(const GaussianSet& g, int t, const Camera& cam,
                       const RenderOptions& opts) {
    if (t < 0 || t >= g.timesteps()) {
        throw std::invalid_argument("rasterize: timestep not materialized");
    }
    const int h = cam.height, w = cam.width;
    const int pixels = h * w;
    const int channels = g.feature_dim();

    RenderOutput out;
    out.image = Image(h, w);
    out.alpha.assign(static_cast<size_t>(pixels), 0.0);
    if (opts.with_features) out.features = Eigen::MatrixXd::Zero(channels, pixels);

    for (int i = 0; i < g.size(); ++i) {
        auto s = project_gaussian(g, i, t, cam);
        if (s) out.splats.push_back(*s);
    }
    std::stable_sort(out.splats.begin(), out.splats.end(), [](const Splat2D& a, const Splat2D& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
    });

    const int num_splats = static_cast<int>(out.splats.size());
    // Precompute inverse covariances, opacities and row spans.
    std::vector<Eigen::Matrix2d> inv_cov(static_cast<size_t>(num_splats));
    std::vector<double> opacity(static_cast<size_t>(num_splats));
    std::vector<double> x_lo(static_cast<size_t>(num_splats)), x_hi(static_cast<size_t>(num_splats));
    std::vector<std::vector<int>> row_bins(static_cast<size_t>(h));
    for (int k = 0; k < num_splats; ++k) {
        const Splat2D& s = out.splats[static_cast<size_t>(k)];
        double det = s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(1, 0);
        Eigen::Matrix2d inv;
        inv << s.cov2d(1, 1), -s.cov2d(0, 1), -s.cov2d(1, 0), s.cov2d(0, 0);
        inv_cov[static_cast<size_t>(k)] = inv / det;
        opacity[static_cast<size_t>(k)] = g.opacity(s.index);
        double radius = 3.0 * std::sqrt(cov2d_max_eigenvalue(s.cov2d));
        x_lo[static_cast<size_t>(k)] = s.mean2d[0] - radius;
        x_hi[static_cast<size_t>(k)] = s.mean2d[0] + radius;
        int y0 = std::max(0, static_cast<int>(std::floor(s.mean2d[1] - radius - 0.5)));
        int y1 = std::min(h - 1, static_cast<int>(std::ceil(s.mean2d[1] + radius - 0.5)));
        for (int y = y0; y <= y1; ++y) row_bins[static_cast<size_t>(y)].push_back(k);
    }

    out.contrib_offsets.assign(static_cast<size_t>(pixels) + 1, 0);
    std::vector<std::vector<int>> row_contrib_splat(static_cast<size_t>(h));
    std::vector<std::vector<double>> row_contrib_alpha(static_cast<size_t>(h));
    std::vector<double> row_margin(static_cast<size_t>(h), std::numeric_limits<double>::max());
    std::vector<double> row_min_t(static_cast<size_t>(h), 1.0);

    parallel_for(h, opts.threads, [&](int64_t yy) {
        const int y = static_cast<int>(yy);
        auto& cs = row_contrib_splat[static_cast<size_t>(y)];
        auto& ca = row_contrib_alpha[static_cast<size_t>(y)];
        double margin = std::numeric_limits<double>::max();
        double min_t = 1.0;
        const double py = y + 0.5;
        for (int x = 0; x < w; ++x) {
            const double px = x + 0.5;
            const int pix = y * w + x;
            double trans = 1.0;
            Vec3 rgb = Vec3::Zero();
            int count = 0;
            for (int k : row_bins[static_cast<size_t>(y)]) {
                if (px < x_lo[static_cast<size_t>(k)] || px > x_hi[static_cast<size_t>(k)]) continue;
                const Splat2D& s = out.splats[static_cast<size_t>(k)];
                Eigen::Vector2d d(px - s.mean2d[0], py - s.mean2d[1]);
                double mahal = d.dot(inv_cov[static_cast<size_t>(k)] * d);
                margin = std::min(margin, std::abs(mahal - kCutoffMahal));
                if (mahal > kCutoffMahal) continue;
                double alpha = opacity[static_cast<size_t>(k)] * std::exp(-0.5 * mahal);
                double weight = trans * alpha;
                rgb += weight * g.colors[static_cast<size_t>(s.index)];
                if (opts.with_features) out.features.col(pix) += weight * g.features.col(s.index);
                cs.push_back(k);
                ca.push_back(alpha);
                ++count;
                trans *= 1.0 - alpha;
                if (trans < kMinTransmittance) break;
            }
            out.image.at(y, x, 0) = rgb[0];
            out.image.at(y, x, 1) = rgb[1];
            out.image.at(y, x, 2) = rgb[2];
            out.alpha[static_cast<size_t>(pix)] = 1.0 - trans;
            out.contrib_offsets[static_cast<size_t>(pix) + 1] = count;
            min_t = std::min(min_t, trans);
        }
        row_margin[static_cast<size_t>(y)] = margin;
        row_min_t[static_cast<size_t>(y)] = min_t;
    });

    for (int p = 0; p < pixels; ++p) {
        out.contrib_offsets[static_cast<size_t>(p) + 1] += out.contrib_offsets[static_cast<size_t>(p)];
    }
    out.contrib_splat.reserve(static_cast<size_t>(out.contrib_offsets.back()));
    out.contrib_alpha.reserve(static_cast<size_t>(out.contrib_offsets.back()));
    for (int y = 0; y < h; ++y) {
        out.contrib_splat.insert(out.contrib_splat.end(), row_contrib_splat[static_cast<size_t>(y)].begin(),
                                 row_contrib_splat[static_cast<size_t>(y)].end());
        out.contrib_alpha.insert(out.contrib_alpha.end(), row_contrib_alpha[static_cast<size_t>(y)].begin(),
                                 row_contrib_alpha[static_cast<size_t>(y)].end());
    }
    out.boundary_margin = num_splats == 0 ? std::numeric_limits<double>::max()
                                          : *std::min_element(row_margin.begin(), row_margin.end());
    out.min_transmittance = *std::min_element(row_min_t.begin(), row_min_t.end());
    return out;
}

RasterGrads rasterize_backward(const GaussianSet& g, int t, const Camera& cam,
                               const RenderOutput& out, const Image& dimage,
                               const Eigen::MatrixXd& dfeatures) {
    if (out.contrib_offsets.empty()) {
        throw std::invalid_argument("rasterize_backward: render output has no contribution tape");
    }
    const int h = cam.height, w = cam.width;
    const int channels = g.feature_dim();
    const bool with_features = dfeatures.size() > 0;

    RasterGrads grads;
    grads.init(g.size(), channels);

    const int num_splats = static_cast<int>(out.splats.size());
    std::vector<Eigen::Matrix2d> inv_cov(static_cast<size_t>(num_splats));
    std::vector<double> opacity(static_cast<size_t>(num_splats));
    for (int k = 0; k < num_splats; ++k) {
        const Splat2D& s = out.splats[static_cast<size_t>(k)];
        double det = s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(1, 0);
        Eigen::Matrix2d inv;
        inv << s.cov2d(1, 1), -s.cov2d(0, 1), -s.cov2d(1, 0), s.cov2d(0, 0);
        inv_cov[static_cast<size_t>(k)] = inv / det;
        opacity[static_cast<size_t>(k)] = g.opacity(s.index);
    }

    // Per-splat screen-space gradient accumulators.
    std::vector<Eigen::Vector2d> d_mean2d(static_cast<size_t>(num_splats), Eigen::Vector2d::Zero());
    std::vector<Eigen::Matrix2d> d_cov2d(static_cast<size_t>(num_splats), Eigen::Matrix2d::Zero());
    std::vector<double> d_opacity(static_cast<size_t>(num_splats), 0.0);

    std::vector<double> t_prefix;
    std::vector<double> payload;
    for (int y = 0; y < h; ++y) {
        const double py = y + 0.5;
        for (int x = 0; x < w; ++x) {
            const int pix = y * w + x;
            const int begin = out.contrib_offsets[static_cast<size_t>(pix)];
            const int end = out.contrib_offsets[static_cast<size_t>(pix) + 1];
            if (begin == end) continue;
            const double px = x + 0.5;
            const Vec3 d_rgb(dimage.at(y, x, 0), dimage.at(y, x, 1), dimage.at(y, x, 2));

            const int m = end - begin;
            t_prefix.assign(static_cast<size_t>(m) + 1, 1.0);
            payload.assign(static_cast<size_t>(m), 0.0);
            for (int j = 0; j < m; ++j) {
                const int k = out.contrib_splat[static_cast<size_t>(begin + j)];
                const double alpha = out.contrib_alpha[static_cast<size_t>(begin + j)];
                const int gi = out.splats[static_cast<size_t>(k)].index;
                t_prefix[static_cast<size_t>(j) + 1] = t_prefix[static_cast<size_t>(j)] * (1.0 - alpha);
                double pl = d_rgb.dot(g.colors[static_cast<size_t>(gi)]);
                if (with_features) pl += dfeatures.col(pix).dot(g.features.col(gi));
                payload[static_cast<size_t>(j)] = pl;
                const double weight = t_prefix[static_cast<size_t>(j)] * alpha;
                grads.colors[static_cast<size_t>(gi)] += weight * d_rgb;
                if (with_features) grads.features.col(gi) += weight * dfeatures.col(pix);
            }
            double suffix = 0.0;
            for (int j = m - 1; j >= 0; --j) {
                const int k = out.contrib_splat[static_cast<size_t>(begin + j)];
                const double alpha = out.contrib_alpha[static_cast<size_t>(begin + j)];
                const double d_alpha =
                    t_prefix[static_cast<size_t>(j)] * payload[static_cast<size_t>(j)] -
                    suffix / (1.0 - alpha);
                suffix += t_prefix[static_cast<size_t>(j)] * alpha * payload[static_cast<size_t>(j)];

                const double o = opacity[static_cast<size_t>(k)];
                const double gval = alpha / o;
                d_opacity[static_cast<size_t>(k)] += d_alpha * gval;
                const double d_g = d_alpha * o;
                const double d_mahal = d_g * (-0.5) * gval;

                const Splat2D& s = out.splats[static_cast<size_t>(k)];
                Eigen::Vector2d diff(px - s.mean2d[0], py - s.mean2d[1]);
                Eigen::Vector2d pd = inv_cov[static_cast<size_t>(k)] * diff;
                d_mean2d[static_cast<size_t>(k)] += d_mahal * (-2.0) * pd;
                d_cov2d[static_cast<size_t>(k)] += d_mahal * (-(pd * pd.transpose()));
            }
        }
    }

    // Chain screen-space gradients back to 3D parameters.
    const Eigen::Matrix3d r_wc = cam.world_to_cam.rotation.matrix();
    for (int k = 0; k < num_splats; ++k) {
        const int gi = out.splats[static_cast<size_t>(k)].index;
        const double o = opacity[static_cast<size_t>(k)];
        grads.opacity_logits[static_cast<size_t>(gi)] +=
            d_opacity[static_cast<size_t>(k)] * o * (1.0 - o);

        if (d_mean2d[static_cast<size_t>(k)].isZero(0.0) &&
            d_cov2d[static_cast<size_t>(k)].isZero(0.0)) {
            continue;
        }
        ProjectionWork pw = project_work(g, gi, t, cam);
        const double x = pw.p_cam[0], y = pw.p_cam[1], z = pw.p_cam[2];
        const Eigen::Matrix2d& g2 = d_cov2d[static_cast<size_t>(k)];

        Eigen::Matrix<double, 2, 3> d_jac = (g2 + g2.transpose()) * pw.jac * pw.m_cam;
        Eigen::Matrix3d d_m = pw.jac.transpose() * g2 * pw.jac;
        Eigen::Matrix3d d_sigma_world = r_wc.transpose() * d_m * r_wc;

        const Vec3& sc = pw.scale;
        Eigen::Matrix3d d_q_rot = (d_sigma_world + d_sigma_world.transpose()) * pw.q_rot *
                                  sc.cwiseProduct(sc).asDiagonal();
        Eigen::Matrix3d dd = pw.q_rot.transpose() * d_sigma_world * pw.q_rot;
        for (int a = 0; a < 3; ++a) {
            grads.log_scales[static_cast<size_t>(gi)][a] += dd(a, a) * 2.0 * sc[a] * sc[a];
        }
        Vec4 dq_unit = rotation_matrix_vjp(pw.q_unit, d_q_rot);
        grads.rotations[static_cast<size_t>(gi)] += quat_normalize_vjp(
            g.rotations_t[static_cast<size_t>(t)][static_cast<size_t>(gi)], dq_unit);

        Vec3 d_p = Vec3::Zero();
        const Eigen::Vector2d& gm = d_mean2d[static_cast<size_t>(k)];
        d_p[0] += gm[0] * cam.fx / z;
        d_p[1] += gm[1] * cam.fy / z;
        d_p[2] += gm[0] * (-cam.fx * x / (z * z)) + gm[1] * (-cam.fy * y / (z * z));

        d_p[0] += d_jac(0, 2) * (-cam.fx / (z * z));
        d_p[1] += d_jac(1, 2) * (-cam.fy / (z * z));
        d_p[2] += d_jac(0, 0) * (-cam.fx / (z * z)) + d_jac(0, 2) * (2.0 * cam.fx * x / (z * z * z)) +
                  d_jac(1, 1) * (-cam.fy / (z * z)) + d_jac(1, 2) * (2.0 * cam.fy * y / (z * z * z));

        grads.means[static_cast<size_t>(gi)] += r_wc.transpose() * d_p;
    }
    return grads;
}

LabelMap render_label_map(const RenderOutput& out, int height, int width,
                          const IdentityDecoder& decoder, const Eigen::MatrixXd* soft_perm) {
    if (out.features.size() == 0) {
        throw std::invalid_argument("render_label_map: output was rendered without features");
    }
    Eigen::MatrixXd logits = decode_identity(decoder, out.features);
    const int k = decoder.out_dim() - 1;
    std::vector<int> canonical_to_local;
    if (soft_perm) canonical_to_local = invert_permutation(harden(*soft_perm));

    LabelMap map(height, width);
    for (int p = 0; p < logits.cols(); ++p) {
        double best = logits(k, p);  // background wins ties
        int arg = k;
        for (int c = 0; c < k; ++c) {
            if (logits(c, p) > best) {
                best = logits(c, p);
                arg = c;
            }
        }
        if (arg == k) {
            map.labels[static_cast<size_t>(p)] = LabelMap::kUnlabeled;
        } else {
            int id = soft_perm ? canonical_to_local[static_cast<size_t>(arg)] : arg;
            map.labels[static_cast<size_t>(p)] = static_cast<uint8_t>(id);
        }
    }
    return map;
}

}  // namespace inst4d
