#include "inst4d/photometric.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace inst4d {

namespace {

constexpr int kWindow = 11;
constexpr int kHalf = kWindow / 2;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow>& gaussian_kernel() {
    static const std::array<double, kWindow> kernel = [] {
        std::array<double, kWindow> k{};
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            double d = i - kHalf;
            k[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / (kSigma * kSigma));
            sum += k[static_cast<size_t>(i)];
        }
        for (double& v : k) v /= sum;
        return k;
    }();
    return kernel;
}

using Grid = std::vector<double>;  // h*w scalars

// Separable 11-tap blur; entries within kHalf of the border are only valid
// inside the interior region and are never read there.
Grid blur(const Grid& src, int h, int w) {
    const auto& k = gaussian_kernel();
    Grid tmp(static_cast<size_t>(h) * w, 0.0), dst(static_cast<size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = kHalf; x < w - kHalf; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += k[static_cast<size_t>(i)] * src[static_cast<size_t>(y) * w + x - kHalf + i];
            tmp[static_cast<size_t>(y) * w + x] = acc;
        }
    }
    for (int y = kHalf; y < h - kHalf; ++y) {
        for (int x = kHalf; x < w - kHalf; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += k[static_cast<size_t>(i)] * tmp[(static_cast<size_t>(y) - kHalf + i) * w + x];
            dst[static_cast<size_t>(y) * w + x] = acc;
        }
    }
    return dst;
}

// Adjoint of blur restricted to the valid region: spreads each valid weight
// back over its window (the kernel is symmetric, so this is blur with
// zero-padded weights).
Grid spread(const Grid& weights, int h, int w) {
    const auto& k = gaussian_kernel();
    Grid tmp(static_cast<size_t>(h) * w, 0.0), dst(static_cast<size_t>(h) * w, 0.0);
    for (int y = kHalf; y < h - kHalf; ++y) {
        for (int x = kHalf; x < w - kHalf; ++x) {
            double v = weights[static_cast<size_t>(y) * w + x];
            if (v == 0.0) continue;
            for (int i = 0; i < kWindow; ++i) tmp[(static_cast<size_t>(y) - kHalf + i) * w + x] += k[static_cast<size_t>(i)] * v;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = tmp[static_cast<size_t>(y) * w + x];
            if (v == 0.0) continue;
            for (int i = 0; i < kWindow; ++i) dst[static_cast<size_t>(y) * w + x - kHalf + i] += k[static_cast<size_t>(i)] * v;
        }
    }
    return dst;
}

void check_dims(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) {
        throw std::invalid_argument("photometric: image dimension mismatch");
    }
}

struct SsimAccum {
    double total = 0.0;
    int count = 0;
};

// Evaluates SSIM per channel; when grad is non-null also accumulates
// dSSIM-sum/dx into it.
SsimAccum ssim_channels(const Image& img, const Image& ref, Image* grad) {
    const int h = img.height, w = img.width;
    if (h < kWindow || w < kWindow) {
        throw std::invalid_argument("ssim: images must be at least 11x11");
    }
    SsimAccum acc;
    Grid x(static_cast<size_t>(h) * w), y(static_cast<size_t>(h) * w);
    for (int c = 0; c < 3; ++c) {
        for (int p = 0; p < h * w; ++p) {
            x[static_cast<size_t>(p)] = img.data[static_cast<size_t>(p) * 3 + c];
            y[static_cast<size_t>(p)] = ref.data[static_cast<size_t>(p) * 3 + c];
        }
        Grid xx(x), yy(y), xy(x);
        for (int p = 0; p < h * w; ++p) {
            xx[static_cast<size_t>(p)] *= x[static_cast<size_t>(p)];
            yy[static_cast<size_t>(p)] *= y[static_cast<size_t>(p)];
            xy[static_cast<size_t>(p)] *= y[static_cast<size_t>(p)];
        }
        Grid mu_x = blur(x, h, w), mu_y = blur(y, h, w);
        Grid m_xx = blur(xx, h, w), m_yy = blur(yy, h, w), m_xy = blur(xy, h, w);

        Grid w_mu(static_cast<size_t>(h) * w, 0.0), w_xx(static_cast<size_t>(h) * w, 0.0),
            w_xy(static_cast<size_t>(h) * w, 0.0);
        for (int py = kHalf; py < h - kHalf; ++py) {
            for (int px = kHalf; px < w - kHalf; ++px) {
                size_t p = static_cast<size_t>(py) * w + px;
                double mx = mu_x[p], my = mu_y[p];
                double sx = m_xx[p] - mx * mx;
                double sy = m_yy[p] - my * my;
                double sxy = m_xy[p] - mx * my;
                double a1 = 2.0 * mx * my + kC1;
                double a2 = 2.0 * sxy + kC2;
                double b1 = mx * mx + my * my + kC1;
                double b2 = sx + sy + kC2;
                double ssim = (a1 * a2) / (b1 * b2);
                acc.total += ssim;
                ++acc.count;
                if (!grad) continue;
                // Partials wrt (mu_x, m_xx, m_xy); sigma terms expand through
                // sx = m_xx - mu_x^2 and sxy = m_xy - mu_x mu_y.
                double d_sx = -a1 * a2 / (b1 * b2 * b2);
                double d_sxy = 2.0 * a1 / (b1 * b2);
                double d_mux = 2.0 * my * a2 / (b1 * b2) - a1 * a2 * 2.0 * mx / (b1 * b1 * b2) +
                               d_sx * (-2.0 * mx) + d_sxy * (-my);
                w_mu[p] = d_mux;
                w_xx[p] = d_sx;
                w_xy[p] = d_sxy;
            }
        }
        if (grad) {
            Grid g_mu = spread(w_mu, h, w);
            Grid g_xx = spread(w_xx, h, w);
            Grid g_xy = spread(w_xy, h, w);
            for (int p = 0; p < h * w; ++p) {
                double v = g_mu[static_cast<size_t>(p)] +
                           g_xx[static_cast<size_t>(p)] * 2.0 * x[static_cast<size_t>(p)] +
                           g_xy[static_cast<size_t>(p)] * y[static_cast<size_t>(p)];
                grad->data[static_cast<size_t>(p) * 3 + c] += v;
            }
        }
    }
    return acc;
}

}  // namespace

PhotometricResult l1_loss(const Image& img, const Image& ref) {
    check_dims(img, ref);
    PhotometricResult res;
    res.grad = Image(img.height, img.width);
    const double n = static_cast<double>(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        double d = img.data[i] - ref.data[i];
        res.loss += std::abs(d);
        res.grad.data[i] = d > 0.0 ? 1.0 / n : (d < 0.0 ? -1.0 / n : 0.0);
    }
    res.loss /= n;
    return res;
}

PhotometricResult ssim_loss(const Image& img, const Image& ref) {
    check_dims(img, ref);
    PhotometricResult res;
    res.grad = Image(img.height, img.width);
    SsimAccum acc = ssim_channels(img, ref, &res.grad);
    res.loss = 1.0 - acc.total / acc.count;
    const double scale = -1.0 / acc.count;
    for (double& v : res.grad.data) v *= scale;
    return res;
}

double ssim_value(const Image& a, const Image& b) {
    check_dims(a, b);
    SsimAccum acc = ssim_channels(a, b, nullptr);
    return acc.total / acc.count;
}

}  // namespace inst4d
