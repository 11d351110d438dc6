#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "inst4d/camera.hpp"
#include "inst4d/decoder.hpp"
#include "inst4d/gaussians.hpp"
#include "inst4d/image.hpp"

namespace inst4d {

// Screen-space footprint of one Gaussian at one timestep.
struct Splat2D {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;  // after the low-pass floor
    double depth = 0.0;
    int index = -1;  // source Gaussian
};

struct RenderOutput {
    Image image;
    Eigen::MatrixXd features;   // C x (H*W); empty when rendered without features
    std::vector<double> alpha;  // accumulated opacity per pixel

    // Tape for the backward pass: depth-sorted splats plus, per pixel, the
    // ordered (splat, alpha) contributions that survived the footprint cutoff
    // and early termination.
    std::vector<Splat2D> splats;
    std::vector<int> contrib_offsets;  // size H*W+1
    std::vector<int> contrib_splat;
    std::vector<double> contrib_alpha;

    // Diagnostics for finite-difference harnesses: distance of evaluated
    // Mahalanobis terms to the 3-sigma cutoff, and the smallest remaining
    // transmittance over pixels (early termination triggers below 1e-4).
    double boundary_margin = 0.0;
    double min_transmittance = 1.0;
};

struct RenderOptions {
    bool with_features = true;
    int threads = 1;
};

struct RasterGrads {
    std::vector<Vec3> colors;
    std::vector<double> opacity_logits;
    std::vector<Vec3> log_scales;
    std::vector<Vec4> rotations;  // wrt the raw (w,x,y,z) parameter vector
    std::vector<Vec3> means;
    Eigen::MatrixXd features;  // C x N

    void init(int n, int feature_channels);
    void accumulate(const RasterGrads& o, double scale);
    bool all_finite() const;
};

// Pinhole projection with full covariance transport. Returns nullopt when the
// Gaussian is behind the near plane or its 3-sigma footprint misses the frame.
std::optional<Splat2D> project_gaussian(const GaussianSet& g, int i, int t, const Camera& cam);

// Front-to-back alpha compositing of all non-culled splats; colors and
// identity features share the same blend weights.
RenderOutput rasterize(const GaussianSet& g, int t, const Camera& cam,
                       const RenderOptions& opts = {});

// Exact reverse-mode gradients of the compositing equation. dfeatures may be
// empty (treated as zero). Requires the tape produced by rasterize().
RasterGrads rasterize_backward(const GaussianSet& g, int t, const Camera& cam,
                               const RenderOutput& out, const Image& dimage,
                               const Eigen::MatrixXd& dfeatures);

// Per-pixel argmax over decoded instance logits. Ties resolve toward the
// background channel, then the lowest instance id; background maps to the
// unlabeled sentinel. When a soft permutation is given, its hardened
// canonical->local relabeling is applied to the instance ids.
LabelMap render_label_map(const RenderOutput& out, int height, int width,
                          const IdentityDecoder& decoder,
                          const Eigen::MatrixXd* soft_perm = nullptr);

}  // namespace inst4d
