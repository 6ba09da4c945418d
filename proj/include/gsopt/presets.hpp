/// @file presets.hpp
/// @brief Named experiment presets. Each preset is a baseline configuration plus
/// arms that differ from it only by a short list of key overrides.

#pragma once

#include "gsopt/config.hpp"
#include "gsopt/pipeline.hpp"
#include "gsopt/scene.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace gsopt {

struct ArmSpec {
    std::string name;
    std::vector<std::string> overrides;
};

struct Preset {
    std::string name;
    std::string help;
    Framework framework = Framework::Vanilla;
    /// Name of the arm the others are compared against.
    std::string baseline;
    std::vector<ArmSpec> arms;
};

/// Desk-scale defaults shared by every vanilla arm: synchronous Adam throughout,
/// periodic opacity reset, no regularization.
inline ExperimentConfig vanilla_base() {
    ExperimentConfig c;
    c.arm = "GS1";
    c.train.framework = Framework::Vanilla;
    c.train.plan.densify_mode = OptimizerMode::CoupledAdam;
    c.train.plan.pop_mode = OptimizerMode::CoupledAdam;
    c.train.noise.lr = 5.0;
    return c;
}

/// Relocation framework: fixed primitive budget, L1 opacity and scale regularization,
/// opacity-gated noise, longer densification.
inline ExperimentConfig mcmc_base() {
    ExperimentConfig c;
    c.arm = "MC1";
    c.train.framework = Framework::Mcmc;
    c.train.plan.densify_end = 2500;
    c.train.plan.densify_mode = OptimizerMode::CoupledAdam;
    c.train.plan.pop_mode = OptimizerMode::CoupledAdam;
    c.train.optim.lambda_o = 0.01;
    c.train.optim.lambda_s = 1e-4;
    c.train.densify.opacity_reset = false;
    c.train.noise.enabled = true;
    c.train.noise.lr = 5.0;
    c.scene.redundancy = 19.0;
    return c;
}

inline ExperimentConfig base_config(Framework f) { return f == Framework::Vanilla ? vanilla_base() : mcmc_base(); }

namespace detail {

inline const std::vector<std::string> kSparse{"stage.densify_mode=sparse-adam", "stage.pop_mode=sparse-adam"};

inline std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

inline std::vector<std::string> adamwgs(const std::string& stss) {
    return {"stage.densify_mode=adamw-gs", "stage.pop_mode=adamw-gs", "reg.lambda_o=0.001", "reg.lambda_s=1e-05",
            "reg.clip_opacity=10",         "reg.clip_scale=10",       "rsr.enabled=true",   "rsr.alpha1=0.2",
            "rsr.alpha2=0.04",             "rsr.stss=" + stss};
}

inline std::vector<std::string> rsr(const std::string& stss) {
    return {"rsr.enabled=true", "rsr.alpha1=0.2", "rsr.alpha2=0.04", "rsr.stss=" + stss};
}

inline std::vector<Preset> build_presets() {
    const ArmSpec gs1{"GS1", {}};
    const ArmSpec mc2{"MC2", kSparse};
    std::vector<Preset> p;
    p.push_back({"gs-adam", "synchronous Adam in every stage", Framework::Vanilla, "GS1", {gs1}});
    p.push_back({"gs-sparse", "sparse Adam in every stage", Framework::Vanilla, "GS1", {gs1, {"GS2", kSparse}}});
    p.push_back({"gs-half", "Adam during densification, sparse Adam afterwards", Framework::Vanilla, "GS1",
                 {gs1, {"GS3", {"stage.pop_mode=sparse-adam"}}}});
    p.push_back({"gs-rsr-only", "sparse Adam with re-state regularization only", Framework::Vanilla, "GS1",
                 {gs1, {"GS0", cat(kSparse, rsr("lo"))}}});
    p.push_back({"gs-adamwgs", "recoupled optimizer with noise; GS8 keeps opacity reset, GS7 drops it",
                 Framework::Vanilla, "GS1",
                 {gs1,
                  {"GS8", cat(adamwgs("hi"), {"noise.enabled=true"})},
                  {"GS7", cat(adamwgs("hi"), {"noise.enabled=true", "densify.opacity_reset=false"})}}});
    p.push_back({"mc-adam", "relocation framework with synchronous Adam", Framework::Mcmc, "MC1", {{"MC1", {}}}});
    p.push_back({"mc-sparse", "relocation framework with sparse Adam", Framework::Mcmc, "MC1", {{"MC1", {}}, mc2}});
    p.push_back({"mc-aiu", "sparse Adam plus artificial implicit updates (MC4 adds re-state regularization)",
                 Framework::Mcmc, "MC2",
                 {mc2,
                  {"MC3", cat(kSparse, {"aiu.enabled=true", "aiu.start=10", "aiu.end=3000", "aiu.probability=10:0.1",
                                        "aiu.step_scale=10:0.1"})},
                  {"MC4", cat(cat(kSparse, {"aiu.enabled=true", "aiu.start=300", "aiu.end=3000",
                                            "aiu.probability=300:0.1", "aiu.step_scale=300:0.1"}),
                              rsr("lo"))}}});
    p.push_back({"mc-rsr-l1", "coupled L1 regularization with re-state regularization (lo and mid sampling)",
                 Framework::Mcmc, "MC2", {mc2, {"MC19", cat(kSparse, rsr("lo"))}, {"MC20", cat(kSparse, rsr("mid"))}}});
    p.push_back({"mc-adamwgs",
                 "recoupled optimizer; sampling lo suits few-primitive scenes, hi many-primitive scenes",
                 Framework::Mcmc, "MC2",
                 {mc2, {"MC17", adamwgs("lo")}, {"MC21", adamwgs("mid")}, {"MC8", adamwgs("hi")}}});
    p.push_back({"mc-reg-sweep", "coupled opacity weight sweep under sparse Adam", Framework::Mcmc, "MC2",
                 {mc2, {"MC2-o0.1", cat(kSparse, {"reg.lambda_o=0.1"})}, {"MC2-o0.001", cat(kSparse, {"reg.lambda_o=0.001"})}}});
    {
        Preset c{"mc-adamw-const", "constant decoupled opacity penalty, with and without clipping", Framework::Mcmc,
                 "MC2", {mc2}};
        const std::vector<std::pair<std::string, std::string>> lam{{"0.1", "MC103"}, {"1", "MC104"}, {"10", "MC105"}};
        const std::vector<std::string> clipped{"MC106", "MC107", "MC108"};
        for (std::size_t k = 0; k < lam.size(); ++k) {
            const std::vector<std::string> common{"reg.lambda_o=" + lam[k].first, "reg.lambda_s=0",
                                                  "rsr.enabled=true", "rsr.alpha1=0.2", "rsr.alpha2=0.04",
                                                  "rsr.stss=lo"};
            c.arms.push_back({lam[k].second, cat({"stage.densify_mode=adamw-const", "stage.pop_mode=adamw-const"}, common)});
            c.arms.push_back({clipped[k], cat({"stage.densify_mode=adamw-const-clip", "stage.pop_mode=adamw-const-clip",
                                               "reg.clip_opacity=10"},
                                              common)});
        }
        p.push_back(std::move(c));
    }
    return p;
}

}  // namespace detail

inline const std::vector<Preset>& presets() {
    static const std::vector<Preset> all = detail::build_presets();
    return all;
}

inline const Preset& find_preset(std::string_view name) {
    for (const auto& p : presets())
        if (p.name == name) return p;
    std::string list;
    for (const auto& p : presets()) list += (list.empty() ? "" : ", ") + p.name;
    throw ConfigError("unknown preset '" + std::string(name) + "'; available: " + list);
}

/// Configuration of one arm: framework base, seed, the arm's own deltas, then extra overrides.
inline ExperimentConfig arm_config(const Preset& preset, const ArmSpec& arm, std::uint64_t seed,
                                   const std::vector<std::string>& extra = {}) {
    ExperimentConfig c = base_config(preset.framework);
    c.seed = seed;
    for (const auto& kv : arm.overrides) apply_override(c, kv);
    for (const auto& kv : extra) apply_override(c, kv);
    c.arm = arm.name;
    return c;
}

struct ArmResult {
    std::string name;
    ExperimentConfig config;
    TrainResult result;
};

struct PresetResult {
    std::string preset;
    std::string baseline;
    std::uint64_t seed = 0;
    std::vector<ArmResult> arms;

    const ArmResult* arm(std::string_view name) const {
        for (const auto& a : arms)
            if (a.name == name) return &a;
        return nullptr;
    }
};

/// Worker count from LAB_THREADS, defaulting to the hardware concurrency.
inline unsigned worker_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("LAB_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) n = static_cast<unsigned>(v);
    }
    return n;
}

/// Runs fn(i) for i in [0, count) on at most `threads` workers; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn fn) {
    threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

/// Trains one configuration on its generated (or given) scene.
inline TrainResult run_arm(const ExperimentConfig& cfg, const PrimitiveSet* ground_truth = nullptr) {
    const Scene scene = ground_truth ? build_scene(cfg.scene, *ground_truth, cfg.seed) : gen_scene(cfg.scene, cfg.seed);
    return run_training(training_config(cfg), scene.training);
}

/// Fills delta_na of every record against the baseline record with the same iteration.
inline void attach_baseline(PresetResult& r) {
    const ArmResult* base = r.arm(r.baseline);
    if (!base) return;
    std::map<long, std::size_t> base_na;
    for (const auto& m : base->result.metrics) base_na[m.iter] = m.na;
    for (auto& a : r.arms)
        for (auto& m : a.result.metrics) {
            auto it = base_na.find(m.iter);
            if (it != base_na.end())
                m.delta_na = relative_change(static_cast<double>(m.na), static_cast<double>(it->second));
        }
}

inline PresetResult run_experiment_preset(std::string_view name, std::uint64_t seed,
                                          const std::vector<std::string>& overrides = {},
                                          const PrimitiveSet* ground_truth = nullptr, unsigned threads = worker_count()) {
    const Preset& preset = find_preset(name);
    PresetResult out;
    out.preset = preset.name;
    out.baseline = preset.baseline;
    out.seed = seed;
    out.arms.resize(preset.arms.size());
    for (std::size_t i = 0; i < preset.arms.size(); ++i) {
        out.arms[i].name = preset.arms[i].name;
        out.arms[i].config = arm_config(preset, preset.arms[i], seed, overrides);
    }
    parallel_for(out.arms.size(), threads,
                 [&](std::size_t i) { out.arms[i].result = run_arm(out.arms[i].config, ground_truth); });
    attach_baseline(out);
    return out;
}

}  // namespace gsopt
