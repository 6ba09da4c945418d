/// @file pipeline.hpp
/// @brief Training orchestration: stage plan, adaptive density control (clone, split,
/// prune, opacity reset), relocation of dead primitives, and the training loop.

#pragma once

#include "gsopt/loss.hpp"
#include "gsopt/metrics.hpp"
#include "gsopt/optimizer.hpp"
#include "gsopt/primitives.hpp"
#include "gsopt/renderer.hpp"
#include "gsopt/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsopt {

enum class Framework { Vanilla, Mcmc };

inline std::string_view to_string(Framework f) { return f == Framework::Vanilla ? "vanilla" : "mcmc"; }

inline Framework parse_framework(std::string_view s) {
    if (s == "vanilla") return Framework::Vanilla;
    if (s == "mcmc") return Framework::Mcmc;
    throw ConfigError("unknown framework '" + std::string(s) + "' (vanilla|mcmc)");
}

enum class Stage { Warmup, Densify, PureOpt };

inline std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::Warmup: return "warmup";
        case Stage::Densify: return "densify";
        case Stage::PureOpt: return "pop";
    }
    return "?";
}

/// Iterations are numbered from 1. Warm-up covers [1, warmup_end], densification
/// (warmup_end, densify_end), pure optimization [densify_end, total_iters].
struct StagePlan {
    long warmup_end = 50;
    long densify_end = 1500;
    long total_iters = 3000;
    long densify_interval = 10;
    long reset_interval = 300;
    long relocate_interval = 10;
    /// Optimizer used during warm-up and densification.
    OptimizerMode densify_mode = OptimizerMode::CoupledAdam;
    /// Optimizer used after densification.
    OptimizerMode pop_mode = OptimizerMode::CoupledAdam;

    Stage stage_of(long iter) const {
        if (iter <= warmup_end) return Stage::Warmup;
        if (iter < densify_end) return Stage::Densify;
        return Stage::PureOpt;
    }
    OptimizerMode mode_at(long iter) const { return stage_of(iter) == Stage::PureOpt ? pop_mode : densify_mode; }

    void validate() const {
        if (!(0 <= warmup_end && warmup_end <= densify_end && densify_end <= total_iters))
            throw ConfigError("stage plan: need 0 <= warmup_end <= densify_end <= total_iters");
        if (densify_interval <= 0 || reset_interval <= 0 || relocate_interval <= 0)
            throw ConfigError("stage plan: intervals must be positive");
    }
};

struct DensifyConfig {
    /// Threshold on the mean view-space positional gradient norm.
    double grad_threshold = 2e-2;
    double prune_threshold = 0.005;
    /// Clone when max scale <= percent_dense * extent, split otherwise.
    double percent_dense = 0.01;
    double split_factor = 1.6;
    std::size_t max_primitives = 2000;
    bool opacity_correction = true;
    bool opacity_reset = true;
    double reset_floor = 0.01;

    void validate() const {
        if (!(grad_threshold > 0.0)) throw ConfigError("densify: grad_threshold must be positive");
        if (!(prune_threshold >= 0.0 && prune_threshold < 1.0)) throw ConfigError("densify: prune_threshold in [0,1)");
        if (!(split_factor > 1.0)) throw ConfigError("densify: split_factor must exceed 1");
        if (!(reset_floor > 0.0 && reset_floor < 1.0)) throw ConfigError("densify: reset_floor in (0,1)");
        if (max_primitives == 0) throw ConfigError("densify: max_primitives must be positive");
    }
};

/// Accumulated view-space positional gradient norms per primitive.
struct DensifyStats {
    std::vector<double> accum;
    std::vector<std::size_t> count;

    explicit DensifyStats(std::size_t n = 0) { reset(n); }

    void reset(std::size_t n) {
        accum.assign(n, 0.0);
        count.assign(n, 0);
    }

    /// Pixel gradients are rescaled by half the crop size, the analogue of normalized device coordinates.
    void add(const VisibilityMask& vis, const std::vector<Vec2>& pixel_grad, const Viewpoint& vp) {
        if (vis.size() != accum.size() || pixel_grad.size() != accum.size())
            throw ContractViolation("DensifyStats: size mismatch");
        const double hx = 0.5 * vp.width, hy = 0.5 * vp.height;
        for (std::size_t i = 0; i < accum.size(); ++i) {
            if (!vis[i]) continue;
            accum[i] += std::hypot(pixel_grad[i].x * hx, pixel_grad[i].y * hy);
            ++count[i];
        }
    }

    double mean(std::size_t i) const { return count[i] ? accum[i] / static_cast<double>(count[i]) : 0.0; }
};

/// FNV-1a over the affected row ids.
inline std::uint64_t hash_ids(const std::vector<std::size_t>& ids) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t id : ids) {
        for (int b = 0; b < 8; ++b) {
            h ^= (static_cast<std::uint64_t>(id) >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

struct Event {
    long iter = 0;
    std::string kind;
    std::size_t count = 0;
    std::uint64_t affected_ids_hash = 0;

    bool operator==(const Event&) const = default;
};

inline nlohmann::json to_json(const Event& e) {
    return {{"iter", e.iter}, {"kind", e.kind}, {"count", e.count}, {"affected_ids_hash", e.affected_ids_hash}};
}

/// o' with (1 - o')^2 = 1 - o: two stacked copies blend like the original.
inline double split_opacity(double o, std::size_t copies = 2) {
    return 1.0 - std::pow(1.0 - o, 1.0 / static_cast<double>(copies));
}

struct DensifyReport {
    std::vector<std::size_t> cloned;      // source rows (pre-compaction ids)
    std::vector<std::size_t> split;       // parent rows (pre-compaction ids)
    std::vector<std::size_t> pruned;      // rows removed, pre-compaction ids, split parents excluded
    bool skipped = false;
    std::size_t before = 0;
    std::size_t after = 0;
};

inline void check_aligned(const PrimitiveSet& set, const MomentState& state, const char* where) {
    if (!set.consistent() || state.size() != set.size())
        throw ContractViolation(std::string(where) + ": moment state no longer row-aligned with primitive set");
}

/// Offset of a split child: R diag(s) gamma with gamma ~ N(0, I) redrawn until |gamma| <= 3,
/// so children land inside the parent's 3-sigma ellipse.
inline Vec2 sample_in_footprint(Vec2 scale, double rot, Rng& rng) {
    double g1, g2;
    do {
        g1 = rng.normal();
        g2 = rng.normal();
    } while (g1 * g1 + g2 * g2 > 9.0);
    const double c = std::cos(rot), s = std::sin(rot);
    const double a = scale.x * g1, b = scale.y * g2;
    return {c * a - s * b, s * a + c * b};
}

/// Clone, split and prune. New rows start from a zero optimizer state.
inline DensifyReport densify_adc(PrimitiveSet& set, MomentState& state, DensifyStats& stats,
                                 const DensifyConfig& cfg, double extent, Rng& rng) {
    cfg.validate();
    check_aligned(set, state, "densify_adc");
    if (stats.accum.size() != set.size()) throw ContractViolation("densify_adc: stats not aligned");
    const std::size_t n = set.size();
    DensifyReport rep;
    rep.before = n;

    for (std::size_t i = 0; i < n; ++i) {
        if (!set.alive[i] || stats.mean(i) < cfg.grad_threshold) continue;
        const Vec2 s = set.scale(i);
        if (std::max(s.x, s.y) <= cfg.percent_dense * extent)
            rep.cloned.push_back(i);
        else
            rep.split.push_back(i);
    }
    if (n + rep.cloned.size() + rep.split.size() > cfg.max_primitives) {
        rep.skipped = true;
        rep.cloned.clear();
        rep.split.clear();
    }

    for (std::size_t i : rep.cloned) {
        const std::size_t j = set.duplicate(i);
        state.append(1);
        if (cfg.opacity_correction) {
            const double o = std::clamp(split_opacity(set.opacity(i)), 1e-12, 1.0 - 1e-12);
            set.params.row(Attr::Opacity, i)[0] = opacity_logit(o);
            set.params.row(Attr::Opacity, j)[0] = opacity_logit(o);
        }
    }
    std::vector<bool> keep(set.size(), true);
    const double shrink = std::log(cfg.split_factor);
    for (std::size_t i : rep.split) {
        const Vec2 s = set.scale(i);
        const double rot = set.rotation(i);
        for (int c = 0; c < 2; ++c) {
            const Vec2 d = sample_in_footprint(s, rot, rng);
            const std::size_t j = set.duplicate(i);
            state.append(1);
            keep.push_back(true);
            auto pos = set.params.row(Attr::Position, j);
            pos[0] += d.x;
            pos[1] += d.y;
            auto k = set.params.row(Attr::Scale, j);
            k[0] -= shrink;
            k[1] -= shrink;
        }
        keep[i] = false;
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!keep[i]) continue;
        if (set.opacity(i) < cfg.prune_threshold) {
            keep[i] = false;
            rep.pruned.push_back(i);
        }
    }
    set.compact(keep);
    state.compact(keep);
    stats.reset(set.size());
    check_aligned(set, state, "densify_adc");
    rep.after = set.size();
    return rep;
}

/// tau <- min(tau, logit(floor)) for every live primitive. Returns the rows lowered.
inline std::vector<std::size_t> opacity_reset(PrimitiveSet& set, double floor) {
    const double cap = opacity_logit(floor);
    std::vector<std::size_t> lowered;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!set.alive[i]) continue;
        double& tau = set.params.row(Attr::Opacity, i)[0];
        if (tau > cap) {
            tau = cap;
            lowered.push_back(i);
        }
    }
    return lowered;
}

struct SceneCollapse : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RelocateReport {
    std::vector<std::size_t> respawned;
    std::vector<std::size_t> targets;  // one per respawned row
};

/// Moves every dead primitive onto a live one drawn with probability proportional to
/// opacity. A target chosen k times shares its opacity with its k copies:
/// o' = 1 - (1 - o)^(1/(k+1)). Respawned rows restart from a zero optimizer state.
inline RelocateReport mcmc_relocate(PrimitiveSet& set, MomentState& state, Rng& rng,
                                    double threshold = kActiveThreshold) {
    check_aligned(set, state, "mcmc_relocate");
    RelocateReport rep;
    std::vector<std::size_t> live;
    std::vector<double> cdf;
    double total = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!set.alive[i]) continue;
        const double o = set.opacity(i);
        if (o <= threshold) {
            rep.respawned.push_back(i);
        } else {
            live.push_back(i);
            total += o;
            cdf.push_back(total);
        }
    }
    if (rep.respawned.empty()) return rep;
    if (live.empty()) throw SceneCollapse("mcmc_relocate: no live primitives left to relocate onto");

    std::vector<std::size_t> hits(set.size(), 0);
    for (std::size_t r = 0; r < rep.respawned.size(); ++r) {
        const double u = rng.uniform() * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.end()) --it;
        const std::size_t j = live[static_cast<std::size_t>(it - cdf.begin())];
        rep.targets.push_back(j);
        ++hits[j];
    }
    for (std::size_t j : live) {
        if (hits[j] == 0) continue;
        const double o = std::clamp(split_opacity(set.opacity(j), hits[j] + 1), 1e-12, 1.0 - 1e-12);
        set.params.row(Attr::Opacity, j)[0] = opacity_logit(o);
    }
    for (std::size_t r = 0; r < rep.respawned.size(); ++r) {
        const std::size_t i = rep.respawned[r], j = rep.targets[r];
        set.params.copy_row(i, set.params, j);
        set.depth[i] = set.depth[j];
    }
    reset_rows(state, rep.respawned);
    check_aligned(set, state, "mcmc_relocate");
    return rep;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Everything a training run consumes besides its configuration.
struct TrainingScene {
    std::vector<Viewpoint> views;
    std::vector<Image> targets;
    PrimitiveSet initial;
    /// Spatial extent used by the clone/split rule and the position learning rate.
    double extent = 128.0;
    /// Full-canvas viewpoint for checkpoint renders.
    Viewpoint canvas;
};

struct TrainingConfig {
    Framework framework = Framework::Vanilla;
    StagePlan plan;
    OptimizerConfig optim;
    /// Final position learning rate as a fraction of the initial one (exponential decay).
    double position_lr_final = 0.01;
    /// Opacity DAR / constant penalty starts at this iteration (inside densification).
    long reg_opacity_start = 300;
    /// Decoupled regularization runs only during densification; coupled regularization throughout.
    double lambda_dssim = 0.2;

    DensifyConfig densify;
    bool rsr_enabled = false;
    RsrConfig rsr{.alpha1 = 0.2, .alpha2 = 0.04, .tie_alphas = false, .schedule = {.interval = 10, .ratio = {}}};
    bool aiu_enabled = false;
    AiuConfig aiu;
    NoiseConfig noise;

    std::uint64_t seed = 0;
    long metrics_interval = 100;
    long checkpoint_interval = 1000;
    long tap_interval = 0;  // 0 disables the moment tap

    void validate() const {
        plan.validate();
        optim.validate();
        densify.validate();
        if (rsr_enabled) rsr.validate();
        if (aiu_enabled) aiu.validate();
        if (!(position_lr_final > 0.0)) throw ConfigError("position_lr_final must be positive");
        if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) throw ConfigError("lambda_dssim must lie in [0,1]");
        if (metrics_interval <= 0) throw ConfigError("metrics_interval must be positive");
        if (checkpoint_interval < 0 || tap_interval < 0) throw ConfigError("intervals must be >= 0");
        if (noise.enabled && !(noise.lr >= 0.0)) throw ConfigError("noise lr must be >= 0");
    }
};

struct MomentTap {
    long iter = 0;
    MomentStats stats;
};

struct TrainResult {
    PrimitiveSet set;
    MomentState state;
    std::vector<MetricsRecord> metrics;
    std::vector<Event> events;
    std::vector<double> loss;
    std::vector<std::pair<long, Image>> checkpoints;
    std::vector<MomentTap> taps;
    std::size_t relocated = 0;
};

struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& what, nlohmann::json diag)
        : std::runtime_error(what), diagnostic(std::move(diag)) {}
    nlohmann::json diagnostic;
};

inline double position_lr(const TrainingConfig& cfg, long iter) {
    const double lr0 = cfg.optim.learning_rate(Attr::Position);
    if (cfg.plan.total_iters <= 0) return lr0;
    const double t = std::clamp(static_cast<double>(iter) / static_cast<double>(cfg.plan.total_iters), 0.0, 1.0);
    return lr0 * std::pow(cfg.position_lr_final, t);
}

namespace detail {

inline nlohmann::json divergence_dump(long iter, double loss, const PrimitiveSet& set, std::size_t view) {
    std::size_t bad = 0;
    for (Attr a : kAllAttrs)
        for (double v : set.params[a])
            if (!std::isfinite(v)) ++bad;
    return {{"iter", iter}, {"loss", std::isfinite(loss) ? nlohmann::json(loss) : nlohmann::json("nan")},
            {"view", view}, {"np", set.size()}, {"non_finite_params", bad},
            {"primitives", primitives_to_json(set)["primitives"]}};
}

}  // namespace detail

/// Runs the configured optimization. `on_metrics` observes each metrics record as it is produced.
inline TrainResult run_training(const TrainingConfig& cfg, const TrainingScene& scene,
                                const std::function<void(const MetricsRecord&)>& on_metrics = {}) {
    cfg.validate();
    if (scene.views.size() != scene.targets.size() || scene.views.empty())
        throw ContractViolation("run_training: one target per viewpoint required");
    if (scene.initial.empty()) throw ContractViolation("run_training: empty initial set");

    TrainResult out;
    out.set = scene.initial;
    out.state = MomentState(out.set.size());
    PrimitiveSet& set = out.set;
    MomentState& state = out.state;
    if (cfg.plan.total_iters == 0) return out;

    Rng view_rng(cfg.seed, Stream::ViewOrder);
    Rng stss_rng(cfg.seed, Stream::StateSampling);
    Rng aiu_rng(cfg.seed, Stream::ImplicitUpdate);
    Rng noise_rng(cfg.seed, Stream::Noise);
    Rng densify_rng(cfg.seed, Stream::Densify);
    Rng reloc_rng(cfg.seed, Stream::Relocate);

    DensifyStats stats(set.size());
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    auto log_event = [&](long iter, std::string kind, const std::vector<std::size_t>& ids) {
        out.events.push_back({iter, std::move(kind), ids.size(), hash_ids(ids)});
    };
    auto record = [&](long iter) {
        MetricsRecord r = compute_metrics(set, scene.views, scene.targets, &state);
        r.iter = iter;
        out.metrics.push_back(r);
        if (on_metrics) on_metrics(r);
    };

    const long total = cfg.plan.total_iters;
    for (long iter = 1; iter <= total; ++iter) {
        const Stage stage = cfg.plan.stage_of(iter);
        const OptimizerMode mode = cfg.plan.mode_at(iter);
        OptimizerConfig oc = cfg.optim;
        oc.mode = mode;
        oc.lr[static_cast<std::size_t>(Attr::Position)] = position_lr(cfg, iter);

        if (cursor == order.size()) {
            order.resize(scene.views.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[view_rng.below(k)]);
            cursor = 0;
        }
        const std::size_t view = order[cursor++];
        const Viewpoint& vp = scene.views[view];

        const RenderResult rr = render_forward(set, vp);
        const ImageLoss photo = photometric_loss(rr.image, scene.targets[view], cfg.lambda_dssim);
        if (!std::isfinite(photo.value))
            throw TrainingDiverged("non-finite loss at iteration " + std::to_string(iter),
                                   detail::divergence_dump(iter, photo.value, set, view));
        out.loss.push_back(photo.value);
        RenderGradients rg = render_backward(rr.records, set, vp, photo.grad);
        if (cfg.framework == Framework::Vanilla && stage == Stage::Densify) stats.add(rr.visibility, rg.pixel_position, vp);

        const bool densifying = stage == Stage::Densify;
        const RegGate gate{densifying && iter >= cfg.reg_opacity_start, densifying};
        try {
            switch (mode) {
                case OptimizerMode::CoupledAdam: {
                    const PerAttr<double> reg = coupled_reg_grad(set, rr.visibility, oc.lambda_o, oc.lambda_s, true);
                    for (Attr a : {Attr::Opacity, Attr::Scale}) {
                        auto dst = rg.params[a];
                        auto src = reg[a];
                        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
                    }
                    adam_step_sync(state, set, rg.params, oc);
                    break;
                }
                case OptimizerMode::SparseAdam: {
                    const PerAttr<double> reg = coupled_reg_grad(set, rr.visibility, oc.lambda_o, oc.lambda_s, false);
                    for (Attr a : {Attr::Opacity, Attr::Scale}) {
                        auto dst = rg.params[a];
                        auto src = reg[a];
                        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
                    }
                    sparse_adam_step(state, set, rg.params, rr.visibility, oc);
                    break;
                }
                case OptimizerMode::AdamWConst:
                    adamw_const_step(state, set, rg.params, rr.visibility, oc, std::nullopt, gate);
                    break;
                case OptimizerMode::AdamWConstClip:
                    adamw_const_step(state, set, rg.params, rr.visibility, oc, oc.clip_opacity, gate);
                    break;
                case OptimizerMode::AdamWGS:
                    dar_step(state, set, rg.params, rr.visibility, oc, vp.pixels(), gate);
                    break;
            }
        } catch (const NonFiniteGradient& e) {
            throw TrainingDiverged(std::string(e.what()) + " at iteration " + std::to_string(iter),
                                   detail::divergence_dump(iter, photo.value, set, view));
        }

        if (cfg.aiu_enabled && mode != OptimizerMode::CoupledAdam) {
            const std::size_t moved = aiu_apply(state, set, rr.visibility, cfg.aiu, oc, aiu_rng, iter);
            if (moved > 0) out.events.push_back({iter, "aiu", moved, 0});
        }
        if (cfg.noise.enabled) apply_position_delta(set, noise_perturb(set, oc.learning_rate(Attr::Position), cfg.noise, noise_rng));

        if (cfg.rsr_enabled && densifying) {
            const auto rows = stss_sample(cfg.rsr.schedule, iter, set.size(), stss_rng);
            if (!rows.empty()) {
                rsr_apply(state, rows, cfg.rsr.alpha1, cfg.rsr.effective_alpha2());
                log_event(iter, "rsr", rows);
            }
        }

        if (densifying && cfg.framework == Framework::Vanilla && iter % cfg.plan.densify_interval == 0) {
            const DensifyReport rep = densify_adc(set, state, stats, cfg.densify, scene.extent, densify_rng);
            if (rep.skipped) log_event(iter, "densify_skipped", {});
            if (!rep.cloned.empty()) log_event(iter, "clone", rep.cloned);
            if (!rep.split.empty()) log_event(iter, "split", rep.split);
            if (!rep.pruned.empty()) log_event(iter, "prune", rep.pruned);
        }
        if (densifying && cfg.framework == Framework::Vanilla && cfg.densify.opacity_reset &&
            iter % cfg.plan.reset_interval == 0) {
            const auto rows = opacity_reset(set, cfg.densify.reset_floor);
            zero_group_moments(state, Attr::Opacity);
            log_event(iter, "opacity_reset", rows);
        }
        if (densifying && cfg.framework == Framework::Mcmc && iter % cfg.plan.relocate_interval == 0) {
            const RelocateReport rep = mcmc_relocate(set, state, reloc_rng);
            if (!rep.respawned.empty()) {
                out.relocated += rep.respawned.size();
                log_event(iter, "relocate", rep.respawned);
            }
        }
        check_aligned(set, state, "run_training");

        if (cfg.tap_interval > 0 && iter % cfg.tap_interval == 0)
            for (Attr a : kAllAttrs) out.taps.push_back({iter, moment_stats(state, a)});
        if (iter % cfg.metrics_interval == 0 || iter == total) record(iter);
        if (cfg.checkpoint_interval > 0 && (iter % cfg.checkpoint_interval == 0 || iter == total))
            out.checkpoints.emplace_back(iter, render_forward(set, scene.canvas).image);
    }
    return out;
}

}  // namespace gsopt
