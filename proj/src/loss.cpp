#include "splatctl/loss.hpp"

#include "splatctl/error.hpp"
#include "splatctl/kernels.hpp"

#include <cmath>
#include <string>

namespace splatctl {

void LossConfig::validate() const {
    if (!(lambda_w >= 0.0 && lambda_w <= 1.0)) throw ConfigError("lambda_w must lie in [0, 1]");
    if (!(lambda_alpha >= 0.0)) throw ConfigError("lambda_alpha must be non-negative");
    if (ssim_window < 1 || ssim_window % 2 == 0) throw ConfigError("ssim_window must be a positive odd integer");
    if (!(ssim_sigma > 0.0)) throw ConfigError("ssim_sigma must be positive");
    if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0)) throw ConfigError("SSIM constants must be positive");
}

namespace {

void require_same_shape(const Image& a, const Image& b) {
    if (!a.same_shape(b) || a.data.size() != b.data.size() || a.data.size() != a.pixel_count() * 3) {
        throw ShapeError("image shapes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                         std::to_string(b.width) + "x" + std::to_string(b.height));
    }
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size));
    const double center = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        w[i] = std::exp(-(i - center) * (i - center) / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Planar single-channel buffer.
struct Plane {
    int w = 0, h = 0;
    std::vector<double> v;
    Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0) {}
    double* row(int y) { return v.data() + static_cast<std::size_t>(y) * w; }
    const double* row(int y) const { return v.data() + static_cast<std::size_t>(y) * w; }
};

// Separable valid-region correlation with `win`.
Plane filter_valid(const Plane& src, const std::vector<double>& win) {
    const auto& kt = kernels::active();
    const int taps = static_cast<int>(win.size());
    const int wo = src.w - taps + 1, ho = src.h - taps + 1;
    Plane horiz(wo, src.h);
    for (int y = 0; y < src.h; ++y) {
        for (int k = 0; k < taps; ++k) kt.axpy(static_cast<std::size_t>(wo), win[k], src.row(y) + k, horiz.row(y));
    }
    Plane out(wo, ho);
    for (int y = 0; y < ho; ++y) {
        for (int k = 0; k < taps; ++k) kt.axpy(static_cast<std::size_t>(wo), win[k], horiz.row(y + k), out.row(y));
    }
    return out;
}

// Adjoint of filter_valid.
Plane filter_valid_adjoint(const Plane& g, const std::vector<double>& win, int w, int h) {
    const auto& kt = kernels::active();
    const int taps = static_cast<int>(win.size());
    Plane vert(g.w, h);
    for (int y = 0; y < g.h; ++y) {
        for (int k = 0; k < taps; ++k) kt.axpy(static_cast<std::size_t>(g.w), win[k], g.row(y), vert.row(y + k));
    }
    Plane out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int k = 0; k < taps; ++k) kt.axpy(static_cast<std::size_t>(g.w), win[k], vert.row(y), out.row(y) + k);
    }
    return out;
}

Plane channel(const Image& img, int c) {
    Plane p(img.width, img.height);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) p.v[i] = img.data[3 * i + c];
    return p;
}

Plane product(const Plane& a, const Plane& b) {
    Plane p(a.w, a.h);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
    return p;
}

// Mean SSIM; when `grad` is non-null it receives d(mean SSIM)/d(a).
double ssim_impl(const Image& a, const Image& b, const LossConfig& cfg, Image* grad) {
    require_same_shape(a, b);
    cfg.validate();
    if (a.width < cfg.ssim_window || a.height < cfg.ssim_window) {
        throw ShapeError("image smaller than the SSIM window");
    }
    const auto win = gaussian_window(cfg.ssim_window, cfg.ssim_sigma);
    const double c1 = cfg.ssim_c1, c2 = cfg.ssim_c2;
    const int wo = a.width - cfg.ssim_window + 1, ho = a.height - cfg.ssim_window + 1;
    const double count = 3.0 * wo * ho;
    if (grad) *grad = Image(a.width, a.height);

    long double total = 0.0L; // extended accumulators keep the loss smooth under tiny perturbations
    for (int c = 0; c < 3; ++c) {
        const Plane x = channel(a, c), y = channel(b, c);
        const Plane mx = filter_valid(x, win), my = filter_valid(y, win);
        const Plane exx = filter_valid(product(x, x), win);
        const Plane eyy = filter_valid(product(y, y), win);
        const Plane exy = filter_valid(product(x, y), win);

        Plane g_m(wo, ho), g_xx(wo, ho), g_xy(wo, ho);
        for (std::size_t i = 0; i < mx.v.size(); ++i) {
            const double ux = mx.v[i], uy = my.v[i];
            const double vx = exx.v[i] - ux * ux, vy = eyy.v[i] - uy * uy, cxy = exy.v[i] - ux * uy;
            const double num1 = 2.0 * ux * uy + c1, num2 = 2.0 * cxy + c2;
            const double den1 = ux * ux + uy * uy + c1, den2 = vx + vy + c2;
            const double s = (num1 * num2) / (den1 * den2);
            total += s;
            if (grad) {
                // Partial derivatives w.r.t. mu_x, E[x^2], E[xy], scaled for the mean.
                const double inv = 1.0 / (den1 * den2);
                const double ds_dmx = (2.0 * uy * num2 - 2.0 * uy * num1) * inv -
                                      s * (2.0 * ux * den2 - 2.0 * ux * den1) / (den1 * den2);
                g_m.v[i] = ds_dmx / count;
                g_xx.v[i] = -s / den2 / count;
                g_xy.v[i] = 2.0 * num1 * inv / count;
            }
        }
        if (grad) {
            const Plane t_m = filter_valid_adjoint(g_m, win, a.width, a.height);
            const Plane t_xx = filter_valid_adjoint(g_xx, win, a.width, a.height);
            const Plane t_xy = filter_valid_adjoint(g_xy, win, a.width, a.height);
            for (std::size_t i = 0; i < a.pixel_count(); ++i) {
                grad->data[3 * i + c] = t_m.v[i] + 2.0 * x.v[i] * t_xx.v[i] + y.v[i] * t_xy.v[i];
            }
        }
    }
    return static_cast<double>(total / count);
}

} // namespace

double l1_loss(const Image& rendered, const Image& target) {
    require_same_shape(rendered, target);
    long double sum = 0.0L;
    for (std::size_t i = 0; i < rendered.data.size(); ++i) sum += std::abs(rendered.data[i] - target.data[i]);
    return rendered.data.empty() ? 0.0 : static_cast<double>(sum / static_cast<long double>(rendered.data.size()));
}

ImageLoss l1_loss_with_grad(const Image& rendered, const Image& target) {
    ImageLoss out{l1_loss(rendered, target), Image(rendered.width, rendered.height)};
    const double scale = rendered.data.empty() ? 0.0 : 1.0 / static_cast<double>(rendered.data.size());
    for (std::size_t i = 0; i < rendered.data.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        out.grad.data[i] = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
    }
    return out;
}

double ssim(const Image& a, const Image& b, const LossConfig& cfg) { return ssim_impl(a, b, cfg, nullptr); }

ImageLoss dssim_loss(const Image& rendered, const Image& target, const LossConfig& cfg) {
    ImageLoss out;
    out.value = 1.0 - ssim_impl(rendered, target, cfg, &out.grad);
    for (double& g : out.grad.data) g = -g;
    return out;
}

ImageLoss rgb_loss(const Image& rendered, const Image& target, const LossConfig& cfg) {
    cfg.validate();
    ImageLoss l1 = l1_loss_with_grad(rendered, target);
    if (cfg.lambda_w == 0.0) return l1;
    const ImageLoss ds = dssim_loss(rendered, target, cfg);
    ImageLoss out;
    out.value = (1.0 - cfg.lambda_w) * l1.value + cfg.lambda_w * ds.value;
    out.grad = Image(rendered.width, rendered.height);
    for (std::size_t i = 0; i < out.grad.data.size(); ++i) {
        out.grad.data[i] = (1.0 - cfg.lambda_w) * l1.grad.data[i] + cfg.lambda_w * ds.grad.data[i];
    }
    return out;
}

double opacity_l1(const GaussianSet& set) {
    long double sum = 0.0L;
    for (double logit : set.opacity_logits) sum += sigmoid(logit);
    return static_cast<double>(sum);
}

TotalLoss total_loss(const Image& rendered, const Image& target, const GaussianSet& set, const LossConfig& cfg,
                     double lambda_alpha) {
    if (!(lambda_alpha >= 0.0)) throw ConfigError("lambda_alpha must be non-negative");
    TotalLoss out;
    const ImageLoss l1 = l1_loss_with_grad(rendered, target);
    out.l1 = l1.value;
    if (cfg.lambda_w > 0.0) {
        const ImageLoss ds = dssim_loss(rendered, target, cfg);
        out.dssim = ds.value;
        out.dL_dimage = Image(rendered.width, rendered.height);
        for (std::size_t i = 0; i < out.dL_dimage.data.size(); ++i) {
            out.dL_dimage.data[i] = (1.0 - cfg.lambda_w) * l1.grad.data[i] + cfg.lambda_w * ds.grad.data[i];
        }
        out.rgb = (1.0 - cfg.lambda_w) * out.l1 + cfg.lambda_w * out.dssim;
    } else {
        out.dL_dimage = l1.grad;
        out.rgb = out.l1;
    }
    out.opacity = opacity_l1(set);
    out.value = out.rgb + lambda_alpha * out.opacity;
    out.dL_dopacity_logit.assign(set.size(), 0.0);
    if (lambda_alpha > 0.0) {
        for (std::size_t i = 0; i < set.size(); ++i) {
            const double a = sigmoid(set.opacity_logits[i]);
            out.dL_dopacity_logit[i] = lambda_alpha * a * (1.0 - a);
        }
    }
    return out;
}

TotalLoss total_loss(const Image& rendered, const Image& target, const GaussianSet& set, const LossConfig& cfg) {
    return total_loss(rendered, target, set, cfg, cfg.lambda_alpha);
}

double mse(const Image& a, const Image& b) {
    require_same_shape(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return a.data.empty() ? 0.0 : sum / static_cast<double>(a.data.size());
}

double psnr(const Image& rendered, const Image& target) {
    const double m = mse(rendered, target);
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

} // namespace splatctl
