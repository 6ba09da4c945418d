/// @file metrics.hpp
/// @brief Image quality and primitive-count metrics recorded during training.

#pragma once

#include "gsopt/loss.hpp"
#include "gsopt/optimizer.hpp"
#include "gsopt/primitives.hpp"
#include "gsopt/renderer.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace gsopt {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for [0,1] images, capped for identical inputs.
inline double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ContractViolation("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// (N - N_base) / N_base.
inline double relative_change(double value, double baseline) {
    if (baseline == 0.0) return value == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (value - baseline) / baseline;
}

struct MetricsRecord {
    long iter = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::size_t np = 0;
    std::size_t na = 0;
    std::size_t nd = 0;
    /// Filled only when a baseline is known.
    std::optional<double> delta_na;
    /// Mean and max |m / sqrt(v)| over the opacity group.
    double mean_mv = 0.0;
    double max_mv = 0.0;

    bool operator==(const MetricsRecord&) const = default;
};

/// Renders every viewpoint and averages PSNR and SSIM against its target.
inline MetricsRecord compute_metrics(const PrimitiveSet& set, const std::vector<Viewpoint>& views,
                                     const std::vector<Image>& targets, const MomentState* state = nullptr,
                                     const MetricsRecord* baseline = nullptr, const RenderOptions& opt = {}) {
    if (views.size() != targets.size() || views.empty())
        throw ContractViolation("compute_metrics: one target per viewpoint required");
    MetricsRecord r;
    for (std::size_t k = 0; k < views.size(); ++k) {
        const Image img = set.empty() ? Image(views[k].width, views[k].height, 3) : render_forward(set, views[k], opt).image;
        r.psnr += psnr(img, targets[k]);
        r.ssim += ssim(img, targets[k]).value;
    }
    r.psnr /= static_cast<double>(views.size());
    r.ssim /= static_cast<double>(views.size());
    r.np = set.size();
    const ActiveCounts ac = classify_active(set);
    r.na = ac.active;
    r.nd = ac.dead;
    if (state) {
        const MomentStats ms = moment_stats(*state, Attr::Opacity);
        r.mean_mv = ms.mean_ratio;
        r.max_mv = ms.max_ratio;
    }
    if (baseline) r.delta_na = relative_change(static_cast<double>(r.na), static_cast<double>(baseline->na));
    return r;
}

}  // namespace gsopt
