/// @file optimizer.hpp
/// @brief Adam-family optimizers over primitive attributes and their state machinery.
///
/// Modes:
///   - coupled-adam:     synchronous Adam; every row steps every iteration, one global clock.
///   - sparse-adam:      rows outside the visibility mask keep moments, clock and parameters.
///   - adamw-const(-clip): sparse, moments see only the photometric gradient, and a constant
///                       penalty lambda * dR (optionally clipped) is added to the step.
///   - adamw-gs:         sparse, decoupled moments, and the attribute regularizer scaled by
///                       1/(sqrt(v_hat)+eps) and clipped (decoupled attribute regularization).
///
/// Re-state regularization (moment rescaling of sampled rows), artificial implicit updates,
/// opacity-gated position noise and row resets live here too.

#pragma once

#include "gsopt/attributes.hpp"
#include "gsopt/primitives.hpp"
#include "gsopt/renderer.hpp"
#include "gsopt/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gsopt {

enum class OptimizerMode { CoupledAdam, SparseAdam, AdamWConst, AdamWConstClip, AdamWGS };

inline constexpr std::array<std::pair<OptimizerMode, std::string_view>, 5> kModeNames{{
    {OptimizerMode::CoupledAdam, "coupled-adam"},
    {OptimizerMode::SparseAdam, "sparse-adam"},
    {OptimizerMode::AdamWConst, "adamw-const"},
    {OptimizerMode::AdamWConstClip, "adamw-const-clip"},
    {OptimizerMode::AdamWGS, "adamw-gs"},
}};

inline std::string_view to_string(OptimizerMode m) {
    for (auto [mode, name] : kModeNames)
        if (mode == m) return name;
    return "?";
}

inline OptimizerMode parse_mode(std::string_view s) {
    for (auto [mode, name] : kModeNames)
        if (name == s) return mode;
    throw ConfigError("unknown optimizer mode '" + std::string(s) + "'");
}

/// True for modes whose moments only ever see the photometric gradient.
constexpr bool decoupled(OptimizerMode m) {
    return m == OptimizerMode::AdamWConst || m == OptimizerMode::AdamWConstClip || m == OptimizerMode::AdamWGS;
}

struct NonFiniteGradient : std::runtime_error {
    NonFiniteGradient(std::size_t primitive, Attr attr)
        : std::runtime_error("non-finite " + std::string(attr_name(attr)) + " gradient at primitive " +
                             std::to_string(primitive)),
          primitive(primitive),
          attr(attr) {}
    std::size_t primitive;
    Attr attr;
};

struct OptimizerConfig {
    OptimizerMode mode = OptimizerMode::SparseAdam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Learning rate per attribute group, indexed by Attr.
    std::array<double, kNumAttrs> lr{1.6e-4 * 128.0, 5e-3, 1e-3, 0.05, 2.5e-3};
    /// Regularization weights. Coupled modes feed them into the gradient, the
    /// decoupled modes apply them inside the update.
    double lambda_o = 0.0;
    double lambda_s = 0.0;
    /// Upper bound of the per-step regularization term (opacity, scale).
    double clip_opacity = 10.0;
    double clip_scale = 10.0;
    /// Keep only the most significant digit of the pixel count and divide by ten.
    bool round_pixel_count = true;

    double learning_rate(Attr a) const { return lr[static_cast<std::size_t>(a)]; }

    void validate() const {
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("optimizer: betas must lie in [0,1)");
        if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
        if (!(clip_opacity > 0.0 && clip_scale > 0.0)) throw ConfigError("optimizer: clip C_t must be positive");
        for (double r : lr)
            if (!(r >= 0.0 && std::isfinite(r))) throw ConfigError("optimizer: learning rates must be finite and >= 0");
        if (lambda_o < 0.0 || lambda_s < 0.0) throw ConfigError("optimizer: lambdas must be >= 0");
    }
};

/// First/second moments per parameter and a step counter per (primitive, group).
struct MomentState {
    MomentState() = default;
    explicit MomentState(std::size_t n) { resize(n); }

    std::size_t size() const { return m.size(); }

    void resize(std::size_t n) {
        m.resize(n);
        v.resize(n);
        for (auto& c : t) c.resize(n, 0);
    }

    std::size_t append(std::size_t count) {
        const std::size_t first = size();
        resize(first + count);
        return first;
    }

    void compact(const std::vector<bool>& keep) {
        m.compact(keep);
        v.compact(keep);
        for (auto& c : t) {
            std::size_t out = 0;
            for (std::size_t i = 0; i < keep.size(); ++i)
                if (keep[i]) c[out++] = c[i];
            c.resize(out);
        }
    }

    std::int64_t& steps(Attr a, std::size_t i) { return t[static_cast<std::size_t>(a)][i]; }
    std::int64_t steps(Attr a, std::size_t i) const { return t[static_cast<std::size_t>(a)][i]; }

    bool operator==(const MomentState&) const = default;

    PerAttr<double> m;
    PerAttr<double> v;
    std::array<std::vector<std::int64_t>, kNumAttrs> t{};
    /// Clock used by the synchronous optimizer.
    std::int64_t global_t = 0;
};

// ---------------------------------------------------------------------------
// Scalar building blocks
// ---------------------------------------------------------------------------

/// Bias-corrected m_hat / (sqrt(v_hat) + eps); zero before the first step.
inline double adam_direction(double m, double v, std::int64_t t, double beta1, double beta2, double eps) {
    if (t <= 0) return 0.0;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    return (m / bc1) / (std::sqrt(v / bc2) + eps);
}

inline double bias_corrected_sqrt_v(double v, std::int64_t t, double beta2) {
    if (t <= 0) return 0.0;
    return std::sqrt(v / (1.0 - std::pow(beta2, static_cast<double>(t))));
}

/// Keeps the most significant digit of n and scales down one order: 1024 -> 1000 -> 100.
inline double rounded_pixel_count(std::size_t n) {
    if (n == 0) throw ConfigError("rounded_pixel_count: empty image");
    std::size_t mag = 1;
    while (n / mag >= 10) mag *= 10;
    return static_cast<double>((n / mag) * mag) / 10.0;
}

/// min(lambda * (dR / N_I') / (sqrt(v_hat) + eps), C_t). Lies in [0, C_t] for dR >= 0.
inline double dar_term(double reg_grad, double sqrt_v_hat, double lambda, double pixel_norm, double eps,
                       double clip) {
    return std::min(lambda * (reg_grad / pixel_norm) / (sqrt_v_hat + eps), clip);
}

namespace detail {

inline void check_finite(const PerAttr<double>& grads, std::size_t i) {
    for (Attr a : kAllAttrs)
        for (double g : grads.row(a, i))
            if (!std::isfinite(g)) throw NonFiniteGradient(i, a);
}

inline void check_shapes(const MomentState& state, const PrimitiveSet& set, const PerAttr<double>& grads) {
    if (state.size() != set.size() || grads.size() != set.size())
        throw ContractViolation("optimizer: state/set/gradient row counts differ");
}

/// One Adam moment update and parameter step for row i of group a at clock t.
inline void adam_row(MomentState& state, PrimitiveSet& set, const PerAttr<double>& grads, Attr a,
                       std::size_t i, std::int64_t t, const OptimizerConfig& cfg) {
    auto m = state.m.row(a, i);
    auto v = state.v.row(a, i);
    auto g = grads.row(a, i);
    auto th = set.params.row(a, i);
    const double lr = cfg.learning_rate(a);
    for (std::size_t k = 0; k < m.size(); ++k) {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
        th[k] -= lr * adam_direction(m[k], v[k], t, cfg.beta1, cfg.beta2, cfg.eps);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

/// Synchronous Adam: every row takes a step, zero-gradient rows included.
inline void adam_step_sync(MomentState& state, PrimitiveSet& set, const PerAttr<double>& grads,
                           const OptimizerConfig& cfg) {
    detail::check_shapes(state, set, grads);
    for (std::size_t i = 0; i < set.size(); ++i) detail::check_finite(grads, i);
    const std::int64_t t = ++state.global_t;
    for (std::size_t i = 0; i < set.size(); ++i)
        for (Attr a : kAllAttrs) {
            ++state.steps(a, i);
            detail::adam_row(state, set, grads, a, i, t, cfg);
        }
}

/// Sparse Adam: beta' = beta * V + (1 - V). Invisible rows are left bitwise untouched.
inline void sparse_adam_step(MomentState& state, PrimitiveSet& set, const PerAttr<double>& grads,
                             const VisibilityMask& vis, const OptimizerConfig& cfg) {
    detail::check_shapes(state, set, grads);
    if (vis.size() != set.size()) throw ContractViolation("sparse_adam_step: mask size mismatch");
    for (std::size_t i = 0; i < set.size(); ++i)
        if (vis[i]) detail::check_finite(grads, i);
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!vis[i]) continue;
        for (Attr a : kAllAttrs) detail::adam_row(state, set, grads, a, i, ++state.steps(a, i), cfg);
    }
}

/// Which regularized attributes are switched on for this iteration.
struct RegGate {
    bool opacity = true;
    bool scale = true;
};

/// Per-step summary of the decoupled regularization terms that were applied.
struct DecoupledReport {
    double max_opacity_term = 0.0;
    double max_scale_term = 0.0;
    std::size_t rows = 0;
};

namespace detail {

/// Shared body of the decoupled modes. `term` maps (dR, sqrt(v_hat), lambda, clip) to the
/// extra step added on top of the Adam direction.
template <class TermFn>
DecoupledReport decoupled_step(MomentState& state, PrimitiveSet& set, const PerAttr<double>& photo_grads,
                               const VisibilityMask& vis, const OptimizerConfig& cfg, RegGate gate, TermFn term) {
    cfg.validate();
    check_shapes(state, set, photo_grads);
    if (vis.size() != set.size()) throw ContractViolation("optimizer: mask size mismatch");
    for (std::size_t i = 0; i < set.size(); ++i)
        if (vis[i]) check_finite(photo_grads, i);

    DecoupledReport rep;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!vis[i]) continue;
        ++rep.rows;
        // The regularizer is evaluated at the pre-step parameters.
        const double dsig = opacity_derivative(set.logit(i));
        const Vec2 s = set.scale(i);
        const std::array<double, 2> ds{s.x, s.y};

        for (Attr a : {Attr::Position, Attr::Rotation, Attr::Color})
            adam_row(state, set, photo_grads, a, i, ++state.steps(a, i), cfg);

        {
            const std::int64_t t = ++state.steps(Attr::Opacity, i);
            adam_row(state, set, photo_grads, Attr::Opacity, i, t, cfg);
            if (gate.opacity && cfg.lambda_o > 0.0) {
                const double sv = bias_corrected_sqrt_v(state.v.row(Attr::Opacity, i)[0], t, cfg.beta2);
                const double extra = term(dsig, sv, cfg.lambda_o, cfg.clip_opacity);
                set.params.row(Attr::Opacity, i)[0] -= cfg.learning_rate(Attr::Opacity) * extra;
                rep.max_opacity_term = std::max(rep.max_opacity_term, extra);
            }
        }
        {
            const std::int64_t t = ++state.steps(Attr::Scale, i);
            adam_row(state, set, photo_grads, Attr::Scale, i, t, cfg);
            if (gate.scale && cfg.lambda_s > 0.0) {
                auto kappa = set.params.row(Attr::Scale, i);
                auto v = state.v.row(Attr::Scale, i);
                for (std::size_t k = 0; k < 2; ++k) {
                    const double sv = bias_corrected_sqrt_v(v[k], t, cfg.beta2);
                    const double extra = term(ds[k], sv, cfg.lambda_s, cfg.clip_scale);
                    kappa[k] -= cfg.learning_rate(Attr::Scale) * extra;
                    rep.max_scale_term = std::max(rep.max_scale_term, extra);
                }
            }
        }
    }
    return rep;
}

}  // namespace detail

/// Decoupled attribute regularization on opacity and scale:
/// theta -= lr * [ m_hat/(sqrt(v_hat)+eps) + min(lambda (dR/N_I') / (sqrt(v_hat)+eps), C_t) ],
/// with moments fed only the photometric gradient and only visible rows stepped.
inline DecoupledReport dar_step(MomentState& state, PrimitiveSet& set, const PerAttr<double>& photo_grads,
                                const VisibilityMask& vis, const OptimizerConfig& cfg, std::size_t pixel_count,
                                RegGate gate = {}) {
    const double norm = cfg.round_pixel_count ? rounded_pixel_count(pixel_count) : static_cast<double>(pixel_count);
    return detail::decoupled_step(state, set, photo_grads, vis, cfg, gate,
                                  [&](double dr, double sqrt_v, double lambda, double clip) {
                                      return dar_term(dr, sqrt_v, lambda, norm, cfg.eps, clip);
                                  });
}

/// AdamW-style constant penalty: theta -= lr * (m_hat/(sqrt(v_hat)+eps) + lambda dR), optionally
/// with the penalty clamped to `clip`.
inline DecoupledReport adamw_const_step(MomentState& state, PrimitiveSet& set, const PerAttr<double>& photo_grads,
                                        const VisibilityMask& vis, const OptimizerConfig& cfg,
                                        std::optional<double> clip, RegGate gate = {}) {
    if (clip && !(*clip > 0.0)) throw ConfigError("adamw_const_step: clip must be positive");
    return detail::decoupled_step(state, set, photo_grads, vis, cfg, gate,
                                  [&](double dr, double, double lambda, double) {
                                      const double p = lambda * dr;
                                      return clip ? std::min(p, *clip) : p;
                                  });
}

// ---------------------------------------------------------------------------
// State lifecycle
// ---------------------------------------------------------------------------

inline void check_indices(const MomentState& state, const std::vector<std::size_t>& indices) {
    for (std::size_t i : indices)
        if (i >= state.size()) throw ContractViolation("row index out of range");
}

/// Zeroes moments and clocks of the given rows; equivalent to a freshly created primitive.
inline void reset_rows(MomentState& state, const std::vector<std::size_t>& indices) {
    check_indices(state, indices);
    for (std::size_t i : indices) {
        state.m.set_row(i, 0.0);
        state.v.set_row(i, 0.0);
        for (auto& c : state.t) c[i] = 0;
    }
}

/// Zeroes the moments of one attribute group for every row; clocks are kept.
inline void zero_group_moments(MomentState& state, Attr a) {
    std::fill(state.m[a].begin(), state.m[a].end(), 0.0);
    std::fill(state.v[a].begin(), state.v[a].end(), 0.0);
}

/// Re-state regularization: m <- alpha1 m, v <- alpha2 v on the selected rows. Clocks unchanged.
inline void rsr_apply(MomentState& state, const std::vector<std::size_t>& indices, double alpha1, double alpha2) {
    if (!(alpha1 >= 0.0 && alpha1 < 1.0 && alpha2 >= 0.0 && alpha2 < 1.0))
        throw ConfigError("rsr_apply: alpha1 and alpha2 must lie in [0,1)");
    check_indices(state, indices);
    for (std::size_t i : indices)
        for (Attr a : kAllAttrs) {
            for (double& x : state.m.row(a, i)) x *= alpha1;
            for (double& x : state.v.row(a, i)) x *= alpha2;
        }
}

/// Piecewise-constant schedule: the value of the last milestone at or before the
/// iteration, zero before the first milestone.
struct MilestoneSchedule {
    std::vector<std::pair<long, double>> milestones;

    double at(long iteration) const {
        double value = 0.0;
        for (const auto& [it, v] : milestones) {
            if (it > iteration) break;
            value = v;
        }
        return value;
    }

    void validate(double lo, double hi, const char* what) const {
        for (std::size_t k = 0; k < milestones.size(); ++k) {
            if (k > 0 && milestones[k].first <= milestones[k - 1].first)
                throw ConfigError(std::string(what) + ": milestones must be strictly increasing");
            if (!(milestones[k].second >= lo && milestones[k].second <= hi))
                throw ConfigError(std::string(what) + ": value out of range");
        }
    }
};

/// State sampling schedule: sampling ratio milestones and a fixed sampling interval.
struct StSSchedule {
    long interval = 100;
    MilestoneSchedule ratio;

    void validate() const {
        if (interval <= 0) throw ConfigError("StSS: interval must be positive");
        ratio.validate(0.0, 1.0, "StSS");
    }
};

struct RsrConfig {
    double alpha1 = 0.2;
    double alpha2 = 0.04;
    /// Enforce alpha2 = alpha1^2 so m/sqrt(v) is preserved.
    bool tie_alphas = false;
    StSSchedule schedule;

    double effective_alpha2() const { return tie_alphas ? alpha1 * alpha1 : alpha2; }

    void validate() const {
        if (!(alpha1 >= 0.0 && alpha1 < 1.0 && effective_alpha2() >= 0.0 && effective_alpha2() < 1.0))
            throw ConfigError("RSR: alpha1 and alpha2 must lie in [0,1)");
        schedule.validate();
    }
};

/// Uniformly samples floor(ratio(iteration) * n) distinct rows at sampling iterations;
/// empty when the iteration is off the interval grid or the ratio is zero.
inline std::vector<std::size_t> stss_sample(const StSSchedule& schedule, long iteration, std::size_t n, Rng& rng) {
    std::vector<std::size_t> out;
    if (schedule.interval <= 0 || iteration % schedule.interval != 0) return out;
    const double ratio = schedule.ratio.at(iteration);
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
    if (k == 0) return out;
    // Partial Fisher-Yates over the index range.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t j = 0; j < k; ++j) {
        const std::size_t r = j + static_cast<std::size_t>(rng.below(n - j));
        std::swap(idx[j], idx[r]);
    }
    out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.begin(), out.end());
    return out;
}

struct AiuConfig {
    long start = 0;
    long end = -1;
    MilestoneSchedule probability;
    MilestoneSchedule step_scale;

    bool active(long iteration) const { return iteration >= start && iteration <= end; }
    void validate() const {
        probability.validate(0.0, 1.0, "AIU probability");
        step_scale.validate(0.0, 1e9, "AIU step scale");
    }
};

/// Artificial implicit update: each invisible row is drawn with the scheduled probability and
/// stepped by lr * eta_aiu * m_hat/(sqrt(v_hat)+eps) from its frozen moments. State untouched.
/// Returns the number of rows moved.
inline std::size_t aiu_apply(const MomentState& state, PrimitiveSet& set, const VisibilityMask& vis,
                             const AiuConfig& aiu, const OptimizerConfig& cfg, Rng& rng, long iteration) {
    if (!aiu.active(iteration)) return 0;
    if (vis.size() != set.size() || state.size() != set.size())
        throw ContractViolation("aiu_apply: size mismatch");
    const double p = aiu.probability.at(iteration);
    const double eta = aiu.step_scale.at(iteration);
    if (p <= 0.0 || eta == 0.0) return 0;
    std::size_t moved = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (vis[i] || !set.alive[i]) continue;
        if (!rng.bernoulli(p)) continue;
        ++moved;
        for (Attr a : kAllAttrs) {
            const std::int64_t t = state.steps(a, i);
            auto th = set.params.row(a, i);
            auto m = state.m.row(a, i);
            auto v = state.v.row(a, i);
            for (std::size_t k = 0; k < th.size(); ++k)
                th[k] -= cfg.learning_rate(a) * eta * adam_direction(m[k], v[k], t, cfg.beta1, cfg.beta2, cfg.eps);
        }
    }
    return moved;
}

struct NoiseConfig {
    bool enabled = false;
    /// Step scale of the noise regularizer relative to the position learning rate.
    double lr = 0.0;
    double lambda_mu = 100.0;
    double lambda_t = 0.005;
};

/// sigmoid(-lambda_mu (o - lambda_t)): ~1 for near-transparent primitives, ~0 for opaque ones.
inline double noise_gate(double opacity, const NoiseConfig& cfg) {
    return 1.0 / (1.0 + std::exp(cfg.lambda_mu * (opacity - cfg.lambda_t)));
}

/// Position perturbations -lr_pos * lr_noise * gate(o) * Sigma * gamma, gamma ~ N(0, I).
inline std::vector<Vec2> noise_perturb(const PrimitiveSet& set, double lr_position, const NoiseConfig& cfg, Rng& rng) {
    std::vector<Vec2> d(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double g1 = rng.normal();
        const double g2 = rng.normal();
        if (!set.alive[i]) continue;
        const Sym2 cov = build_covariance(set.scale(i), set.rotation(i));
        const double k = -lr_position * cfg.lr * noise_gate(set.opacity(i), cfg);
        d[i] = {k * (cov.xx * g1 + cov.xy * g2), k * (cov.xy * g1 + cov.yy * g2)};
    }
    return d;
}

inline void apply_position_delta(PrimitiveSet& set, const std::vector<Vec2>& delta) {
    if (delta.size() != set.size()) throw ContractViolation("apply_position_delta: size mismatch");
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto p = set.params.row(Attr::Position, i);
        p[0] += delta[i].x;
        p[1] += delta[i].y;
    }
}

// ---------------------------------------------------------------------------
// Moment statistics tap
// ---------------------------------------------------------------------------

struct MomentStats {
    Attr attr = Attr::Opacity;
    std::size_t rows = 0;
    double mean_sqrt_v = 0.0;
    double max_sqrt_v = 0.0;
    double mean_ratio = 0.0;  // |m / sqrt(v)|
    double max_ratio = 0.0;
};

/// Statistics over entries with v > 0.
inline MomentStats moment_stats(const MomentState& state, Attr a) {
    MomentStats s;
    s.attr = a;
    const auto m = state.m[a];
    const auto v = state.v[a];
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (!(v[k] > 0.0)) continue;
        const double sv = std::sqrt(v[k]);
        const double r = std::abs(m[k]) / sv;
        ++s.rows;
        s.mean_sqrt_v += sv;
        s.mean_ratio += r;
        s.max_sqrt_v = std::max(s.max_sqrt_v, sv);
        s.max_ratio = std::max(s.max_ratio, r);
    }
    if (s.rows > 0) {
        s.mean_sqrt_v /= static_cast<double>(s.rows);
        s.mean_ratio /= static_cast<double>(s.rows);
    }
    return s;
}

}  // namespace gsopt
