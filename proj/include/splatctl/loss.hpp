#pragma once

#include "splatctl/core.hpp"
#include "splatctl/image.hpp"

#include <vector>

namespace splatctl {

struct LossConfig {
    double lambda_w = 0.2;     // D-SSIM weight in the reconstruction loss
    double lambda_alpha = 0.0; // opacity L1 weight
    int ssim_window = 11;
    double ssim_sigma = 1.5;
    double ssim_c1 = 0.01 * 0.01;
    double ssim_c2 = 0.03 * 0.03;

    // Throws ConfigError on out-of-range fields.
    void validate() const;
};

inline constexpr double kPsnrCap = 100.0;

struct ImageLoss {
    double value = 0.0;
    Image grad; // d(value)/d(rendered)
};

double l1_loss(const Image& rendered, const Image& target);
ImageLoss l1_loss_with_grad(const Image& rendered, const Image& target);

// Mean SSIM over channels and window positions fully inside the image.
double ssim(const Image& a, const Image& b, const LossConfig& cfg = {});
// 1 - SSIM with its gradient w.r.t. `rendered`.
ImageLoss dssim_loss(const Image& rendered, const Image& target, const LossConfig& cfg = {});

// (1 - lambda_w) L1 + lambda_w (1 - SSIM)
ImageLoss rgb_loss(const Image& rendered, const Image& target, const LossConfig& cfg);

// Sum of activated opacities over all Gaussians.
double opacity_l1(const GaussianSet& set);

struct TotalLoss {
    double value = 0.0;
    double rgb = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double opacity = 0.0;  // unweighted opacity L1
    Image dL_dimage;
    std::vector<double> dL_dopacity_logit; // regularization part only
};

// L_RGB + lambda_alpha * L_alpha. `lambda_alpha` is passed separately so the
// scheduler's live value can differ from the configured one.
TotalLoss total_loss(const Image& rendered, const Image& target, const GaussianSet& set, const LossConfig& cfg,
                     double lambda_alpha);
TotalLoss total_loss(const Image& rendered, const Image& target, const GaussianSet& set, const LossConfig& cfg);

double mse(const Image& a, const Image& b);
// 10 log10(1 / MSE), capped at kPsnrCap.
double psnr(const Image& rendered, const Image& target);

} // namespace splatctl
