#pragma once

#include "inst4d/image.hpp"

namespace inst4d {

struct PhotometricResult {
    double loss = 0.0;
    Image grad;  // dL/d(first argument)
};

// Mean absolute channel difference.
PhotometricResult l1_loss(const Image& img, const Image& ref);

// 1 - mean SSIM over the valid region of an 11x11 Gaussian window
// (sigma 1.5, C1 = 0.01^2, C2 = 0.03^2), averaged across channels.
// Requires images at least 11x11.
PhotometricResult ssim_loss(const Image& img, const Image& ref);

// Mean SSIM value (same windowing as ssim_loss).
double ssim_value(const Image& a, const Image& b);

}  // namespace inst4d
