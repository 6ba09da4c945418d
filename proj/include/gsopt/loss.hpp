/// @file loss.hpp
/// @brief Photometric loss (L1 + DSSIM) with its image gradient, and the
/// coupled opacity/scale regularization gradients used by the baseline modes.

#pragma once

#include "gsopt/image.hpp"
#include "gsopt/primitives.hpp"
#include "gsopt/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace gsopt {

struct ImageLoss {
    double value = 0.0;
    Image grad;  // d value / d render
};

namespace detail {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::array<double, kSsimWindow>& ssim_kernel() {
    static const std::array<double, kSsimWindow> k = [] {
        std::array<double, kSsimWindow> w{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - kSsimWindow / 2;
            w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += w[i];
        }
        for (double& v : w) v /= sum;
        return w;
    }();
    return k;
}

/// Zero-padded "same" Gaussian filtering of one plane. The kernel is symmetric,
/// so this operator is its own adjoint.
inline std::vector<double> gaussian_filter(const std::vector<double>& in, int w, int h) {
    const auto& k = ssim_kernel();
    constexpr int r = kSsimWindow / 2;
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        const double* row = in.data() + static_cast<std::size_t>(y) * w;
        double* dst = tmp.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const int lo = std::max(-r, -x), hi = std::min(r, w - 1 - x);
            double s = 0.0;
            for (int j = lo; j <= hi; ++j) s += k[j + r] * row[x + j];
            dst[x] = s;
        }
    }
    for (int y = 0; y < h; ++y) {
        const int lo = std::max(-r, -y), hi = std::min(r, h - 1 - y);
        double* dst = out.data() + static_cast<std::size_t>(y) * w;
        for (int j = lo; j <= hi; ++j) {
            const double kj = k[j + r];
            const double* src = tmp.data() + static_cast<std::size_t>(y + j) * w;
            for (int x = 0; x < w; ++x) dst[x] += kj * src[x];
        }
    }
    return out;
}

}  // namespace detail

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), zero padding, and its
/// gradient with respect to `a`. Channels are treated independently.
inline ImageLoss ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ContractViolation("ssim: shape mismatch");
    if (a.width < detail::kSsimWindow || a.height < detail::kSsimWindow)
        throw DomainError("ssim: images must be at least 11x11");
    const int w = a.width, h = a.height, nc = a.channels;
    const std::size_t np = a.pixels();
    const double inv_n = 1.0 / static_cast<double>(np * nc);

    ImageLoss out;
    out.grad = Image(w, h, nc);
    std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
    for (int c = 0; c < nc; ++c) {
        for (std::size_t p = 0; p < np; ++p) {
            x[p] = a.data[p * nc + c];
            y[p] = b.data[p * nc + c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mx = detail::gaussian_filter(x, w, h);
        const auto my = detail::gaussian_filter(y, w, h);
        const auto fxx = detail::gaussian_filter(xx, w, h);
        const auto fyy = detail::gaussian_filter(yy, w, h);
        const auto fxy = detail::gaussian_filter(xy, w, h);

        // Partials of the SSIM map w.r.t. local mean, variance and covariance of a.
        std::vector<double> d_lin(np), d_var(np), d_cov(np);
        for (std::size_t p = 0; p < np; ++p) {
            const double vx = fxx[p] - mx[p] * mx[p];
            const double vy = fyy[p] - my[p] * my[p];
            const double cxy = fxy[p] - mx[p] * my[p];
            const double a1 = 2.0 * mx[p] * my[p] + detail::kSsimC1;
            const double a2 = 2.0 * cxy + detail::kSsimC2;
            const double b1 = mx[p] * mx[p] + my[p] * my[p] + detail::kSsimC1;
            const double b2 = vx + vy + detail::kSsimC2;
            const double s = a1 * a2 / (b1 * b2);
            out.value += s * inv_n;
            const double d_mu = (2.0 * my[p] * a2 / (b1 * b2) - s * 2.0 * mx[p] / b1) * inv_n;
            d_var[p] = -s / b2 * inv_n;
            d_cov[p] = 2.0 * a1 / (b1 * b2) * inv_n;
            d_lin[p] = d_mu - 2.0 * d_var[p] * mx[p] - d_cov[p] * my[p];
        }
        // var = G*(x^2) - mu^2 and cov = G*(xy) - mu_x mu_y, so
        // dS/dx = G^T[d_mu - 2 d_var mu_x - d_cov mu_y] + 2x G^T[d_var] + y G^T[d_cov].
        const auto t_lin = detail::gaussian_filter(d_lin, w, h);
        const auto t_var = detail::gaussian_filter(d_var, w, h);
        const auto t_cov = detail::gaussian_filter(d_cov, w, h);
        for (std::size_t p = 0; p < np; ++p)
            out.grad.data[p * nc + c] = t_lin[p] + 2.0 * x[p] * t_var[p] + y[p] * t_cov[p];
    }
    return out;
}

/// DSSIM = 1 - SSIM.
inline ImageLoss dssim(const Image& a, const Image& b) {
    ImageLoss s = ssim(a, b);
    s.value = 1.0 - s.value;
    for (double& g : s.grad.data) g = -g;
    return s;
}

/// Mean absolute error over all pixels and channels.
inline ImageLoss l1_loss(const Image& render, const Image& target) {
    if (!render.same_shape(target)) throw ContractViolation("l1_loss: shape mismatch");
    ImageLoss out;
    out.grad = Image(render.width, render.height, render.channels);
    const double inv_n = 1.0 / static_cast<double>(render.data.size());
    for (std::size_t i = 0; i < render.data.size(); ++i) {
        const double d = render.data[i] - target.data[i];
        out.value += std::abs(d) * inv_n;
        out.grad.data[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
    }
    return out;
}

/// (1 - lambda1) L1 + lambda1 DSSIM. The L1 mean already carries the 1/N_I normalisation.
inline ImageLoss photometric_loss(const Image& render, const Image& target, double lambda1) {
    if (!render.same_shape(target)) throw ContractViolation("photometric_loss: shape mismatch");
    if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) throw ConfigError("photometric_loss: lambda1 must lie in [0,1]");
    ImageLoss out = l1_loss(render, target);
    out.value *= (1.0 - lambda1);
    for (double& g : out.grad.data) g *= (1.0 - lambda1);
    if (lambda1 > 0.0) {
        const ImageLoss d = dssim(render, target);
        out.value += lambda1 * d.value;
        for (std::size_t i = 0; i < out.grad.data.size(); ++i) out.grad.data[i] += lambda1 * d.grad.data[i];
    }
    return out;
}

/// Gradients of lambda_o |o|_1 + lambda_s |s|_1 normalised by the visible count N_v.
/// Only opacity and scale groups are non-zero. With `all_rows` every live primitive
/// receives the term (synchronous optimizer); otherwise visible rows only.
inline PerAttr<double> coupled_reg_grad(const PrimitiveSet& set, const VisibilityMask& visibility,
                                        double lambda_o, double lambda_s, bool all_rows = false) {
    if (visibility.size() != set.size()) throw ContractViolation("coupled_reg_grad: mask size mismatch");
    PerAttr<double> g(set.size());
    const std::size_t n_v = visibility.count();
    if (n_v == 0 || (lambda_o == 0.0 && lambda_s == 0.0)) return g;
    const double inv_nv = 1.0 / static_cast<double>(n_v);
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!set.alive[i] || (!all_rows && !visibility[i])) continue;
        g.row(Attr::Opacity, i)[0] = lambda_o * opacity_derivative(set.logit(i)) * inv_nv;
        const Vec2 s = set.scale(i);
        auto gs = g.row(Attr::Scale, i);
        gs[0] = lambda_s * s.x * inv_nv;
        gs[1] = lambda_s * s.y * inv_nv;
    }
    return g;
}

/// lambda_o sum(o) + lambda_s sum(s) over live primitives.
inline double regularization_value(const PrimitiveSet& set, double lambda_o, double lambda_s) {
    double r = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!set.alive[i]) continue;
        const Vec2 s = set.scale(i);
        r += lambda_o * set.opacity(i) + lambda_s * (s.x + s.y);
    }
    return r;
}

struct LossReport {
    double total = 0.0;
    double photometric = 0.0;
    double regularization = 0.0;
    Image grad;
    PerAttr<double> reg_grads;
};

/// Evaluates the full objective for one viewpoint. Regularization enters the total
/// and the returned gradients only when `coupled` is set; decoupled optimizers
/// apply it inside their update rule instead.
inline LossReport evaluate_loss(const Image& render, const Image& target, double lambda1, const PrimitiveSet& set,
                                const VisibilityMask& visibility, double lambda_o, double lambda_s, bool coupled,
                                bool all_rows) {
    LossReport r;
    ImageLoss photo = photometric_loss(render, target, lambda1);
    r.photometric = photo.value;
    r.grad = std::move(photo.grad);
    r.total = r.photometric;
    if (coupled) {
        r.regularization = regularization_value(set, lambda_o, lambda_s);
        r.total += r.regularization;
        r.reg_grads = coupled_reg_grad(set, visibility, lambda_o, lambda_s, all_rows);
    } else {
        r.reg_grads = PerAttr<double>(set.size());
    }
    return r;
}

}  // namespace gsopt
