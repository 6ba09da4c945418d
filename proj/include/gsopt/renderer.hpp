/// @file renderer.hpp
/// @brief Differentiable front-to-back alpha blending of 2D Gaussians.
///
/// A Viewpoint is a rectangular crop of the global canvas. Forward rendering
/// records every blended contribution per pixel (id, alpha, transmittance) so
/// the backward pass replays exactly the same blend without re-sorting.

#pragma once

#include "gsopt/image.hpp"
#include "gsopt/primitives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace gsopt {

struct Viewpoint {
    int origin_x = 0;
    int origin_y = 0;
    int width = 1;
    int height = 1;
    /// Scene-to-canvas transform: canvas = scale * scene + offset.
    double scale = 1.0;
    double offset_x = 0.0;
    double offset_y = 0.0;

    void validate() const {
        if (width < 1 || height < 1) throw ContractViolation("Viewpoint: crop must be at least 1x1");
        if (!(std::isfinite(scale) && scale != 0.0)) throw ContractViolation("Viewpoint: transform not invertible");
    }

    /// Crop-local pixel coordinates of a scene point. Pixel (x, y) has its center at (x, y).
    Vec2 to_pixel(Vec2 scene) const {
        return {scale * scene.x + offset_x - origin_x, scale * scene.y + offset_y - origin_y};
    }

    std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
};

struct RenderOptions {
    std::array<double, 3> background{0.0, 0.0, 0.0};
    /// Blending stops once transmittance drops below this value.
    double min_transmittance = 1e-4;
    /// Contributions with alpha below this are skipped; also the visibility floor.
    double alpha_floor = kActiveThreshold;
};

struct BlendEntry {
    std::uint32_t id = 0;
    double alpha = 0.0;
    double transmittance = 0.0;
};

/// Per-pixel front-to-back contribution lists in CSR layout.
struct BlendRecord {
    int width = 0;
    int height = 0;
    std::size_t set_size = 0;
    std::vector<std::size_t> offsets;  // pixels() + 1 entries
    std::vector<BlendEntry> entries;
    std::vector<double> final_transmittance;

    std::span<const BlendEntry> pixel(std::size_t p) const {
        return std::span(entries).subspan(offsets[p], offsets[p + 1] - offsets[p]);
    }
};

struct VisibilityMask {
    std::vector<bool> flags;

    std::size_t size() const { return flags.size(); }
    bool operator[](std::size_t i) const { return flags[i]; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true)); }

    static VisibilityMask all(std::size_t n, bool value = true) { return {std::vector<bool>(n, value)}; }
};

struct RenderResult {
    Image image;
    BlendRecord records;
    VisibilityMask visibility;
    /// Primitives dropped because their covariance could not be inverted.
    std::size_t singular_skipped = 0;
};

namespace detail {

/// A primitive in crop pixel space, ready to evaluate.
struct Splat {
    std::uint32_t id = 0;
    double opacity = 0.0;
    Vec2 mean;            // crop pixels
    double cos_r = 1.0;   // rotation
    double sin_r = 0.0;
    double inv_var1 = 0;  // 1 / sigma_1^2 in pixels
    double inv_var2 = 0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // pixel box where alpha can exceed the floor
    std::array<double, 3> color{};

    /// Mahalanobis distance squared of pixel (px, py); u holds the rotated offset.
    double mahalanobis(double px, double py, double& u1, double& u2) const {
        const double dx = px - mean.x;
        const double dy = py - mean.y;
        u1 = cos_r * dx + sin_r * dy;
        u2 = -sin_r * dx + cos_r * dy;
        return u1 * u1 * inv_var1 + u2 * u2 * inv_var2;
    }
};

/// Builds the splat for primitive i; false if its covariance is not invertible.
inline bool make_splat(const PrimitiveSet& set, std::size_t i, const Viewpoint& vp, double floor, Splat& s) {
    s.id = static_cast<std::uint32_t>(i);
    s.opacity = set.opacity(i);
    s.mean = vp.to_pixel(set.position(i));
    const Vec2 kappa = set.log_scale(i);
    const double sx = std::abs(vp.scale) * std::exp(kappa.x);
    const double sy = std::abs(vp.scale) * std::exp(kappa.y);
    s.inv_var1 = 1.0 / (sx * sx);
    s.inv_var2 = 1.0 / (sy * sy);
    if (!(std::isfinite(s.inv_var1) && std::isfinite(s.inv_var2) && sx * sx > 0.0 && sy * sy > 0.0 &&
          std::isfinite(sx * sx) && std::isfinite(sy * sy)))
        return false;
    const double rot = set.rotation(i);
    s.cos_r = std::cos(rot);
    s.sin_r = std::sin(rot);
    auto col = set.params.row(Attr::Color, i);
    for (int c = 0; c < 3; ++c) s.color[c] = std::clamp(col[c], 0.0, 1.0);

    // alpha > floor  <=>  q < 2 ln(o / floor)
    const double r2 = 2.0 * std::log(s.opacity / floor);
    if (!(r2 > 0.0)) {
        s.x1 = s.x0 - 1;
        return true;
    }
    const double var_x = s.cos_r * s.cos_r * sx * sx + s.sin_r * s.sin_r * sy * sy;
    const double var_y = s.sin_r * s.sin_r * sx * sx + s.cos_r * s.cos_r * sy * sy;
    const double ex = std::sqrt(r2 * var_x);
    const double ey = std::sqrt(r2 * var_y);
    const double lo_x = std::max(std::ceil(s.mean.x - ex), 0.0);
    const double hi_x = std::min(std::floor(s.mean.x + ex), static_cast<double>(vp.width - 1));
    const double lo_y = std::max(std::ceil(s.mean.y - ey), 0.0);
    const double hi_y = std::min(std::floor(s.mean.y + ey), static_cast<double>(vp.height - 1));
    if (lo_x > hi_x || lo_y > hi_y) {
        s.x1 = s.x0 - 1;
        return true;
    }
    s.x0 = static_cast<int>(lo_x);
    s.x1 = static_cast<int>(hi_x);
    s.y0 = static_cast<int>(lo_y);
    s.y1 = static_cast<int>(hi_y);
    return true;
}

/// Visible iff some crop pixel lies inside the 3-sigma ellipse with alpha above the floor.
inline bool splat_visible(const Splat& s, double floor) {
    if (s.x1 < s.x0) return false;
    for (int y = s.y0; y <= s.y1; ++y)
        for (int x = s.x0; x <= s.x1; ++x) {
            double u1, u2;
            const double q = s.mahalanobis(x, y, u1, u2);
            if (q <= 9.0 && s.opacity * std::exp(-0.5 * q) > floor) return true;
        }
    return false;
}

struct PreparedView {
    std::vector<Splat> splats;  // visible only, front to back
    VisibilityMask visibility;
    std::size_t singular = 0;
};

inline PreparedView prepare_view(const PrimitiveSet& set, const Viewpoint& vp, const RenderOptions& opt) {
    vp.validate();
    if (!set.consistent()) throw ContractViolation("render: inconsistent PrimitiveSet");
    PreparedView pv;
    pv.visibility = VisibilityMask::all(set.size(), false);
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!set.alive[i]) continue;
        if (!(set.opacity(i) > opt.alpha_floor)) continue;
        Splat s;
        if (!make_splat(set, i, vp, opt.alpha_floor, s)) {
            ++pv.singular;
            continue;
        }
        if (!splat_visible(s, opt.alpha_floor)) continue;
        pv.visibility.flags[i] = true;
        pv.splats.push_back(s);
    }
    std::stable_sort(pv.splats.begin(), pv.splats.end(), [&](const Splat& a, const Splat& b) {
        return set.depth[a.id] < set.depth[b.id];
    });
    return pv;
}

inline constexpr int kTile = 16;

}  // namespace detail

/// Visibility of every primitive in one viewpoint.
inline VisibilityMask compute_visibility(const PrimitiveSet& set, const Viewpoint& vp,
                                         const RenderOptions& opt = {}) {
    if (set.empty()) throw ContractViolation("compute_visibility: empty set");
    return detail::prepare_view(set, vp, opt).visibility;
}

/// C(p) = sum_i c_i a_i prod_{j<i} (1 - a_j) + T_final * background.
inline RenderResult render_forward(const PrimitiveSet& set, const Viewpoint& vp, const RenderOptions& opt = {}) {
    detail::PreparedView pv = detail::prepare_view(set, vp, opt);
    RenderResult out;
    out.image = Image(vp.width, vp.height, 3);
    out.visibility = std::move(pv.visibility);
    out.singular_skipped = pv.singular;

    BlendRecord& rec = out.records;
    rec.width = vp.width;
    rec.height = vp.height;
    rec.set_size = set.size();
    rec.offsets.assign(vp.pixels() + 1, 0);
    rec.final_transmittance.assign(vp.pixels(), 1.0);

    // Bin splats into tiles; each tile list stays in depth order.
    const int tiles_x = (vp.width + detail::kTile - 1) / detail::kTile;
    const int tiles_y = (vp.height + detail::kTile - 1) / detail::kTile;
    std::vector<std::vector<std::uint32_t>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::uint32_t k = 0; k < pv.splats.size(); ++k) {
        const auto& s = pv.splats[k];
        if (s.x1 < s.x0) continue;
        for (int ty = s.y0 / detail::kTile; ty <= s.y1 / detail::kTile; ++ty)
            for (int tx = s.x0 / detail::kTile; tx <= s.x1 / detail::kTile; ++tx)
                bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(k);
    }

    for (int y = 0; y < vp.height; ++y) {
        for (int x = 0; x < vp.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * vp.width + x;
            const auto& bin = bins[static_cast<std::size_t>(y / detail::kTile) * tiles_x + x / detail::kTile];
            double T = 1.0;
            std::array<double, 3> c{0.0, 0.0, 0.0};
            for (std::uint32_t k : bin) {
                const auto& s = pv.splats[k];
                if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
                double u1, u2;
                const double q = s.mahalanobis(x, y, u1, u2);
                const double alpha = s.opacity * std::exp(-0.5 * q);
                if (alpha < opt.alpha_floor) continue;
                for (int ch = 0; ch < 3; ++ch) c[ch] += s.color[ch] * alpha * T;
                rec.entries.push_back({s.id, alpha, T});
                T *= (1.0 - alpha);
                if (T < opt.min_transmittance) break;
            }
            for (int ch = 0; ch < 3; ++ch) out.image.at(x, y, ch) = c[ch] + T * opt.background[ch];
            rec.final_transmittance[p] = T;
            rec.offsets[p + 1] = rec.entries.size();
        }
    }
    return out;
}

/// Gradients of the loss with respect to every raw parameter, plus the
/// crop-pixel positional gradient used by densification statistics.
struct RenderGradients {
    PerAttr<double> params;
    std::vector<Vec2> pixel_position;
};

/// Analytic adjoint of render_forward. Accumulation runs in pixel-major order.
inline RenderGradients render_backward(const BlendRecord& rec, const PrimitiveSet& set, const Viewpoint& vp,
                                       const Image& dL_dC, const RenderOptions& opt = {}) {
    if (rec.set_size != set.size()) throw ContractViolation("render_backward: record/set size mismatch");
    if (rec.width != vp.width || rec.height != vp.height || dL_dC.width != vp.width ||
        dL_dC.height != vp.height || dL_dC.channels != 3)
        throw ContractViolation("render_backward: image gradient shape mismatch");
    if (rec.offsets.size() != vp.pixels() + 1) throw ContractViolation("render_backward: malformed record");

    RenderGradients g;
    g.params.resize(set.size());
    g.pixel_position.assign(set.size(), Vec2{});

    // Splat geometry is recomputed per referenced primitive, once.
    std::vector<detail::Splat> splats(set.size());
    std::vector<bool> ready(set.size(), false);
    const double scale = vp.scale;

    for (std::size_t p = 0; p < vp.pixels(); ++p) {
        const auto entries = rec.pixel(p);
        if (entries.empty()) continue;
        const int x = static_cast<int>(p % vp.width);
        const int y = static_cast<int>(p / vp.width);
        const std::array<double, 3> dC{dL_dC.data[3 * p], dL_dC.data[3 * p + 1], dL_dC.data[3 * p + 2]};
        if (dC[0] == 0.0 && dC[1] == 0.0 && dC[2] == 0.0) continue;

        // R = colour accumulated behind the current entry, normalised by its transmittance.
        std::array<double, 3> behind = opt.background;
        for (std::size_t k = entries.size(); k-- > 0;) {
            const BlendEntry& e = entries[k];
            const std::size_t i = e.id;
            if (!ready[i]) {
                detail::make_splat(set, i, vp, opt.alpha_floor, splats[i]);
                ready[i] = true;
            }
            const detail::Splat& s = splats[i];
            auto raw_color = set.params.row(Attr::Color, i);

            double dL_dalpha = 0.0;
            auto gc = g.params.row(Attr::Color, i);
            for (int ch = 0; ch < 3; ++ch) {
                dL_dalpha += dC[ch] * e.transmittance * (s.color[ch] - behind[ch]);
                if (raw_color[ch] >= 0.0 && raw_color[ch] <= 1.0) gc[ch] += dC[ch] * e.alpha * e.transmittance;
            }
            for (int ch = 0; ch < 3; ++ch) behind[ch] = s.color[ch] * e.alpha + (1.0 - e.alpha) * behind[ch];

            double u1, u2;
            s.mahalanobis(x, y, u1, u2);
            // alpha = o * exp(-q/2)
            g.params.row(Attr::Opacity, i)[0] += dL_dalpha * e.alpha * (1.0 - s.opacity);
            const double dL_dq = dL_dalpha * (-0.5 * e.alpha);

            // q = (u1/s1)^2 + (u2/s2)^2 with u = R^T (p - mean)
            const double a1 = u1 * s.inv_var1;
            const double a2 = u2 * s.inv_var2;
            // dq/dmean = -2 Sigma^{-1} d
            const double dq_dmx = -2.0 * (s.cos_r * a1 - s.sin_r * a2);
            const double dq_dmy = -2.0 * (s.sin_r * a1 + s.cos_r * a2);
            g.pixel_position[i].x += dL_dq * dq_dmx;
            g.pixel_position[i].y += dL_dq * dq_dmy;
            auto gp = g.params.row(Attr::Position, i);
            gp[0] += dL_dq * dq_dmx * scale;
            gp[1] += dL_dq * dq_dmy * scale;
            auto gs = g.params.row(Attr::Scale, i);
            gs[0] += dL_dq * (-2.0 * u1 * a1);
            gs[1] += dL_dq * (-2.0 * u2 * a2);
            g.params.row(Attr::Rotation, i)[0] += dL_dq * 2.0 * u1 * u2 * (s.inv_var1 - s.inv_var2);
        }
    }
    return g;
}

/// D(p) = sum_i d_i a_i T_i using each primitive's depth key; uncovered pixels are 0.
inline Image render_depth(const PrimitiveSet& set, const Viewpoint& vp, const RenderOptions& opt = {}) {
    Image depth(vp.width, vp.height, 1);
    if (set.empty()) return depth;
    const RenderResult r = render_forward(set, vp, opt);
    for (std::size_t p = 0; p < vp.pixels(); ++p) {
        double d = 0.0;
        for (const BlendEntry& e : r.records.pixel(p)) d += set.depth[e.id] * e.alpha * e.transmittance;
        depth.data[p] = d;
    }
    return depth;
}

}  // namespace gsopt
