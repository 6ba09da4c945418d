/// @file scene.hpp
/// @brief Synthetic scenes: a ground-truth primitive set, targets rendered through
/// overlapping crops of the canvas, and a redundant low-opacity initialization.

#pragma once

#include "gsopt/pipeline.hpp"
#include "gsopt/primitives.hpp"
#include "gsopt/renderer.hpp"
#include "gsopt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace gsopt {

struct SceneSpec {
    int canvas = 128;
    std::size_t gt_count = 50;
    /// Extra initial primitives per ground-truth primitive.
    double redundancy = 3.0;
    int crop = 16;
    int stride = 16;
    /// Drop the crop centred on the canvas (it is covered by its neighbours).
    bool skip_center = true;
    double min_scale = 3.0;
    double max_scale = 12.0;
    /// Position jitter of the initialization, in pixels.
    double jitter = 2.0;
    double init_opacity = kInitOpacity;
    /// Amplitude of a fixed per-pixel texture multiplied into the targets; it is shared by
    /// all viewpoints and cannot be represented exactly by the primitives.
    double texture = 0.15;
    /// Per-view exposure spread: each target is scaled by its own gain in [1 - e, 1 + e].
    double exposure = 0.0;

    void validate() const {
        if (canvas < 32) throw ConfigError("scene: canvas must be at least 32x32");
        if (gt_count == 0) throw ConfigError("scene: at least one ground-truth primitive required");
        if (redundancy < 0.0) throw ConfigError("scene: redundancy must be >= 0");
        if (crop < 11 || crop > canvas) throw ConfigError("scene: crop must lie in [11, canvas]");
        if (stride <= 0) throw ConfigError("scene: stride must be positive");
        if ((canvas - crop) % stride != 0) throw ConfigError("scene: crops must tile the canvas exactly");
        if (!(min_scale > 0.0 && max_scale >= min_scale)) throw ConfigError("scene: bad scale range");
        if (!(init_opacity > 0.0 && init_opacity < 1.0)) throw ConfigError("scene: init_opacity in (0,1)");
        if (!(texture >= 0.0 && texture < 1.0)) throw ConfigError("scene: texture in [0,1)");
        if (!(exposure >= 0.0 && exposure < 1.0)) throw ConfigError("scene: exposure in [0,1)");
    }

    std::size_t initial_count() const {
        return gt_count + static_cast<std::size_t>(std::llround(redundancy * static_cast<double>(gt_count)));
    }
};

inline std::vector<Viewpoint> make_viewpoints(const SceneSpec& spec) {
    std::vector<Viewpoint> views;
    const int steps = (spec.canvas - spec.crop) / spec.stride;
    for (int gy = 0; gy <= steps; ++gy)
        for (int gx = 0; gx <= steps; ++gx) {
            if (spec.skip_center && steps % 2 == 0 && gx == steps / 2 && gy == steps / 2 && steps > 0) continue;
            Viewpoint v;
            v.origin_x = gx * spec.stride;
            v.origin_y = gy * spec.stride;
            v.width = v.height = spec.crop;
            views.push_back(v);
        }
    return views;
}

inline Viewpoint canvas_view(const SceneSpec& spec) {
    Viewpoint v;
    v.width = v.height = spec.canvas;
    return v;
}

struct Scene {
    SceneSpec spec;
    PrimitiveSet ground_truth;
    TrainingScene training;
};

namespace detail {

inline PrimitiveSet random_ground_truth(const SceneSpec& spec, Rng& rng) {
    PrimitiveSet gt;
    const double margin = 0.08 * spec.canvas;
    for (std::size_t i = 0; i < spec.gt_count; ++i) {
        RawPrimitive p;
        p.mu = {rng.uniform(margin, spec.canvas - margin), rng.uniform(margin, spec.canvas - margin)};
        const double lo = std::log(spec.min_scale), hi = std::log(spec.max_scale);
        p.kappa = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
        p.rot = rng.uniform(0.0, 3.141592653589793);
        p.tau = opacity_logit(rng.uniform(0.6, 0.95));
        for (double& c : p.color) c = rng.uniform(0.1, 0.95);
        p.depth = rng.uniform();
        gt.add(p);
    }
    return gt;
}

}  // namespace detail

/// Builds targets and the initial set from a ground truth. The initialization places one
/// jittered copy per ground-truth primitive plus `redundancy` extra copies each, all
/// isotropic, at low opacity, coloured from the target canvas.
inline Scene build_scene(const SceneSpec& spec, PrimitiveSet ground_truth, std::uint64_t seed) {
    spec.validate();
    if (ground_truth.empty()) throw ConfigError("scene: ground truth is empty");
    Scene scene;
    scene.spec = spec;
    scene.ground_truth = std::move(ground_truth);
    TrainingScene& ts = scene.training;
    ts.views = make_viewpoints(spec);
    ts.canvas = canvas_view(spec);
    ts.extent = spec.canvas;
    Rng rng(seed, Stream::SceneInit);
    std::vector<double> grain(static_cast<std::size_t>(spec.canvas) * spec.canvas);
    for (double& g : grain) g = 1.0 + spec.texture * rng.uniform(-1.0, 1.0);
    for (const Viewpoint& v : ts.views) {
        Image img = render_forward(scene.ground_truth, v).image;
        const double gain = 1.0 + spec.exposure * rng.uniform(-1.0, 1.0);
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x) {
                const double g = gain * grain[static_cast<std::size_t>(v.origin_y + y) * spec.canvas + v.origin_x + x];
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(g * img.at(x, y, c), 0.0, 1.0);
            }
        ts.targets.push_back(std::move(img));
    }
    Image full = render_forward(scene.ground_truth, ts.canvas).image;
    for (std::size_t p = 0; p < full.pixels(); ++p)
        for (int c = 0; c < 3; ++c) full.data[3 * p + c] = std::clamp(full.data[3 * p + c] * grain[p], 0.0, 1.0);
    const std::size_t n_gt = scene.ground_truth.size();
    SceneSpec init_spec = spec;
    init_spec.gt_count = n_gt;
    const std::size_t n_init = init_spec.initial_count();
    for (std::size_t k = 0; k < n_init; ++k) {
        const std::size_t src = k % n_gt;
        const Vec2 mu = scene.ground_truth.position(src);
        const Vec2 ks = scene.ground_truth.log_scale(src);
        RawPrimitive p;
        p.mu = {std::clamp(mu.x + spec.jitter * rng.normal(), 0.0, spec.canvas - 1.0),
                std::clamp(mu.y + spec.jitter * rng.normal(), 0.0, spec.canvas - 1.0)};
        const double iso = 0.5 * (ks.x + ks.y) + rng.uniform(-0.2, 0.2);
        p.kappa = {iso, iso};
        p.rot = 0.0;
        p.tau = opacity_logit(spec.init_opacity);
        const int px = static_cast<int>(std::lround(p.mu.x));
        const int py = static_cast<int>(std::lround(p.mu.y));
        for (int c = 0; c < 3; ++c) p.color[c] = full.at(px, py, c);
        p.depth = rng.uniform();
        ts.initial.add(p);
    }
    return scene;
}

inline Scene gen_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed, Stream::Scene);
    return build_scene(spec, detail::random_ground_truth(spec, rng), seed);
}

}  // namespace gsopt
