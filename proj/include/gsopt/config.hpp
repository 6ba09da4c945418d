/// @file config.hpp
/// @brief Experiment configuration as a flat registry of namespaced keys.
///
/// Every field is reachable as `group.name = value` from a config file or a
/// command-line override, and two configs can be diffed key by key.

#pragma once

#include "gsopt/pipeline.hpp"
#include "gsopt/scene.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gsopt {

struct ExperimentConfig {
    std::string arm = "default";
    std::uint64_t seed = 0;
    SceneSpec scene;
    TrainingConfig train;
    /// State sampling schedule: "off", "lo", "mid", "hi" or explicit "iter:ratio,...".
    std::string stss = "off";
};

// ---------------------------------------------------------------------------
// Value formatting
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
    return std::string(buf, end);
}

inline double parse_double(std::string_view key, std::string_view s) {
    const std::string t = trim(s);
    double v = 0.0;
    auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || end != t.data() + t.size() || t.empty())
        throw ConfigError(std::string(key) + ": expected a number, got '" + t + "'");
    return v;
}

template <class Int>
Int parse_int(std::string_view key, std::string_view s) {
    const std::string t = trim(s);
    Int v{};
    auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || end != t.data() + t.size() || t.empty())
        throw ConfigError(std::string(key) + ": expected an integer, got '" + t + "'");
    return v;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
    const std::string t = trim(s);
    if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "off" || t == "no") return false;
    throw ConfigError(std::string(key) + ": expected a boolean, got '" + t + "'");
}

inline std::string fmt_schedule(const MilestoneSchedule& s) {
    std::string out;
    for (const auto& [it, v] : s.milestones) {
        if (!out.empty()) out += ',';
        out += std::to_string(it) + ':' + fmt_double(v);
    }
    return out.empty() ? "none" : out;
}

inline MilestoneSchedule parse_schedule(std::string_view key, std::string_view s) {
    MilestoneSchedule out;
    const std::string t = trim(s);
    if (t.empty() || t == "none") return out;
    std::stringstream ss(t);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError(std::string(key) + ": expected iter:value pairs");
        out.milestones.emplace_back(parse_int<long>(key, std::string_view(item).substr(0, colon)),
                                    parse_double(key, std::string_view(item).substr(colon + 1)));
    }
    return out;
}

}  // namespace detail

/// Ratio milestones of a named or explicit state sampling schedule.
inline MilestoneSchedule resolve_stss(std::string_view spec, const StagePlan& plan) {
    const long start = plan.warmup_end + 1;
    const long end = plan.densify_end;
    const long mid = start + (end - start) / 2;
    MilestoneSchedule s;
    if (spec == "off") return s;
    if (spec == "lo") s.milestones = {{start, 0.05}, {end, 0.0}};
    else if (spec == "mid") s.milestones = {{start, 0.1}, {end, 0.0}};
    else if (spec == "hi") s.milestones = {{start, 0.05}, {mid, 0.25}, {end, 0.0}};
    else s = detail::parse_schedule("rsr.stss", spec);
    return s;
}

/// Training configuration with named schedules resolved against the stage plan.
inline TrainingConfig training_config(const ExperimentConfig& cfg) {
    TrainingConfig t = cfg.train;
    t.seed = cfg.seed;
    t.rsr.schedule.ratio = resolve_stss(cfg.stss, t.plan);
    return t;
}

// ---------------------------------------------------------------------------
// Key registry
// ---------------------------------------------------------------------------

struct ConfigField {
    std::string key;
    std::string help;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, std::string_view)> set;
};

namespace detail {

template <class Get>
ConfigField make_double(std::string key, std::string help, Get ref) {
    const std::string k = key;
    return {std::move(key), std::move(help),
            [ref](const ExperimentConfig& c) { return fmt_double(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, k](ExperimentConfig& c, std::string_view v) { ref(c) = parse_double(k, v); }};
}

template <class Get>
ConfigField make_int(std::string key, std::string help, Get ref) {
    const std::string k = key;
    using T = std::remove_reference_t<decltype(ref(std::declval<ExperimentConfig&>()))>;
    return {std::move(key), std::move(help),
            [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, k](ExperimentConfig& c, std::string_view v) { ref(c) = parse_int<T>(k, v); }};
}

template <class Get>
ConfigField make_bool(std::string key, std::string help, Get ref) {
    const std::string k = key;
    return {std::move(key), std::move(help),
            [ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); },
            [ref, k](ExperimentConfig& c, std::string_view v) { ref(c) = parse_bool(k, v); }};
}

template <class Get>
ConfigField make_mode(std::string key, std::string help, Get ref) {
    return {std::move(key), std::move(help),
            [ref](const ExperimentConfig& c) { return std::string(to_string(ref(const_cast<ExperimentConfig&>(c)))); },
            [ref](ExperimentConfig& c, std::string_view v) { ref(c) = parse_mode(trim(v)); }};
}

template <class Get>
ConfigField make_schedule(std::string key, std::string help, Get ref) {
    const std::string k = key;
    return {std::move(key), std::move(help),
            [ref](const ExperimentConfig& c) { return fmt_schedule(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, k](ExperimentConfig& c, std::string_view v) { ref(c) = parse_schedule(k, v); }};
}

inline std::vector<ConfigField> build_registry() {
    using C = ExperimentConfig;
    std::vector<ConfigField> f;
    f.push_back({"arm", "arm label",
                 [](const C& c) { return c.arm; }, [](C& c, std::string_view v) { c.arm = trim(v); }});
    f.push_back(make_int("seed", "scene and training seed", [](C& c) -> auto& { return c.seed; }));

    f.push_back(make_int("scene.canvas", "canvas side in pixels", [](C& c) -> auto& { return c.scene.canvas; }));
    f.push_back(make_int("scene.gt_count", "ground-truth primitives", [](C& c) -> auto& { return c.scene.gt_count; }));
    f.push_back(make_double("scene.redundancy", "extra initial primitives per ground-truth primitive",
                            [](C& c) -> auto& { return c.scene.redundancy; }));
    f.push_back(make_int("scene.crop", "viewpoint crop side", [](C& c) -> auto& { return c.scene.crop; }));
    f.push_back(make_int("scene.stride", "crop stride", [](C& c) -> auto& { return c.scene.stride; }));
    f.push_back(make_bool("scene.skip_center", "omit the central crop", [](C& c) -> auto& { return c.scene.skip_center; }));
    f.push_back(make_double("scene.min_scale", "smallest ground-truth scale", [](C& c) -> auto& { return c.scene.min_scale; }));
    f.push_back(make_double("scene.max_scale", "largest ground-truth scale", [](C& c) -> auto& { return c.scene.max_scale; }));
    f.push_back(make_double("scene.jitter", "initial position jitter", [](C& c) -> auto& { return c.scene.jitter; }));
    f.push_back(make_double("scene.exposure", "per-view exposure spread", [](C& c) -> auto& { return c.scene.exposure; }));
    f.push_back(make_double("scene.texture", "fixed target texture amplitude", [](C& c) -> auto& { return c.scene.texture; }));
    f.push_back(make_double("scene.init_opacity", "initial opacity", [](C& c) -> auto& { return c.scene.init_opacity; }));

    f.push_back({"train.framework", "vanilla | mcmc",
                 [](const C& c) { return std::string(to_string(c.train.framework)); },
                 [](C& c, std::string_view v) { c.train.framework = parse_framework(trim(v)); }});
    f.push_back(make_int("stage.warmup_end", "last warm-up iteration", [](C& c) -> auto& { return c.train.plan.warmup_end; }));
    f.push_back(make_int("stage.densify_end", "last densification iteration", [](C& c) -> auto& { return c.train.plan.densify_end; }));
    f.push_back(make_int("stage.total_iters", "training length", [](C& c) -> auto& { return c.train.plan.total_iters; }));
    f.push_back(make_int("stage.densify_interval", "clone/split/prune interval",
                         [](C& c) -> auto& { return c.train.plan.densify_interval; }));
    f.push_back(make_int("stage.reset_interval", "opacity reset interval", [](C& c) -> auto& { return c.train.plan.reset_interval; }));
    f.push_back(make_int("stage.relocate_interval", "relocation interval",
                         [](C& c) -> auto& { return c.train.plan.relocate_interval; }));
    f.push_back(make_mode("stage.densify_mode", "optimizer during warm-up and densification",
                          [](C& c) -> auto& { return c.train.plan.densify_mode; }));
    f.push_back(make_mode("stage.pop_mode", "optimizer after densification", [](C& c) -> auto& { return c.train.plan.pop_mode; }));

    f.push_back(make_double("optim.beta1", "first moment decay", [](C& c) -> auto& { return c.train.optim.beta1; }));
    f.push_back(make_double("optim.beta2", "second moment decay", [](C& c) -> auto& { return c.train.optim.beta2; }));
    f.push_back(make_double("optim.eps", "Adam epsilon", [](C& c) -> auto& { return c.train.optim.eps; }));
    for (Attr a : kAllAttrs) {
        const auto idx = static_cast<std::size_t>(a);
        f.push_back(make_double("lr." + std::string(attr_name(a)), "learning rate",
                                [idx](C& c) -> auto& { return c.train.optim.lr[idx]; }));
    }
    f.push_back(make_double("lr.position_final", "final/initial position learning rate",
                            [](C& c) -> auto& { return c.train.position_lr_final; }));
    f.push_back(make_double("reg.lambda_o", "opacity regularization weight", [](C& c) -> auto& { return c.train.optim.lambda_o; }));
    f.push_back(make_double("reg.lambda_s", "scale regularization weight", [](C& c) -> auto& { return c.train.optim.lambda_s; }));
    f.push_back(make_double("reg.clip_opacity", "opacity term clip C_t", [](C& c) -> auto& { return c.train.optim.clip_opacity; }));
    f.push_back(make_double("reg.clip_scale", "scale term clip C_t", [](C& c) -> auto& { return c.train.optim.clip_scale; }));
    f.push_back(make_bool("reg.round_pixel_count", "use the rounded pixel count N_I'",
                          [](C& c) -> auto& { return c.train.optim.round_pixel_count; }));
    f.push_back(make_int("reg.opacity_start", "first iteration of decoupled opacity regularization",
                         [](C& c) -> auto& { return c.train.reg_opacity_start; }));
    f.push_back(make_double("loss.lambda_dssim", "DSSIM weight", [](C& c) -> auto& { return c.train.lambda_dssim; }));

    f.push_back(make_double("densify.grad_threshold", "view-space gradient threshold",
                            [](C& c) -> auto& { return c.train.densify.grad_threshold; }));
    f.push_back(make_double("densify.prune_threshold", "prune opacity", [](C& c) -> auto& { return c.train.densify.prune_threshold; }));
    f.push_back(make_double("densify.percent_dense", "clone/split scale boundary relative to extent",
                            [](C& c) -> auto& { return c.train.densify.percent_dense; }));
    f.push_back(make_double("densify.split_factor", "child scale divisor", [](C& c) -> auto& { return c.train.densify.split_factor; }));
    f.push_back(make_int("densify.max_primitives", "primitive cap", [](C& c) -> auto& { return c.train.densify.max_primitives; }));
    f.push_back(make_bool("densify.opacity_correction", "blend-preserving opacity for clones",
                          [](C& c) -> auto& { return c.train.densify.opacity_correction; }));
    f.push_back(make_bool("densify.opacity_reset", "periodic opacity reset", [](C& c) -> auto& { return c.train.densify.opacity_reset; }));
    f.push_back(make_double("densify.reset_floor", "opacity after reset", [](C& c) -> auto& { return c.train.densify.reset_floor; }));

    f.push_back(make_bool("rsr.enabled", "re-state regularization", [](C& c) -> auto& { return c.train.rsr_enabled; }));
    f.push_back(make_double("rsr.alpha1", "first moment factor", [](C& c) -> auto& { return c.train.rsr.alpha1; }));
    f.push_back(make_double("rsr.alpha2", "second moment factor", [](C& c) -> auto& { return c.train.rsr.alpha2; }));
    f.push_back(make_bool("rsr.tie_alphas", "alpha2 = alpha1^2", [](C& c) -> auto& { return c.train.rsr.tie_alphas; }));
    f.push_back(make_int("rsr.interval", "sampling interval", [](C& c) -> auto& { return c.train.rsr.schedule.interval; }));
    f.push_back({"rsr.stss",
                 "sampling ratios: off | lo (0.05 over densification, few-primitive scenes) | mid (0.1) | "
                 "hi (0.05 rising to 0.25 at mid-densification, many-primitive scenes) | iter:ratio,...",
                 [](const C& c) { return c.stss; },
                 [](C& c, std::string_view v) {
                     c.stss = trim(v);
                     resolve_stss(c.stss, c.train.plan);
                 }});

    f.push_back(make_bool("aiu.enabled", "artificial implicit updates", [](C& c) -> auto& { return c.train.aiu_enabled; }));
    f.push_back(make_int("aiu.start", "first iteration", [](C& c) -> auto& { return c.train.aiu.start; }));
    f.push_back(make_int("aiu.end", "last iteration", [](C& c) -> auto& { return c.train.aiu.end; }));
    f.push_back(make_schedule("aiu.probability", "selection probability milestones",
                              [](C& c) -> auto& { return c.train.aiu.probability; }));
    f.push_back(make_schedule("aiu.step_scale", "step scale milestones", [](C& c) -> auto& { return c.train.aiu.step_scale; }));

    f.push_back(make_bool("noise.enabled", "opacity-gated position noise", [](C& c) -> auto& { return c.train.noise.enabled; }));
    f.push_back(make_double("noise.lr", "noise step relative to the position learning rate",
                            [](C& c) -> auto& { return c.train.noise.lr; }));
    f.push_back(make_double("noise.lambda_mu", "gate steepness", [](C& c) -> auto& { return c.train.noise.lambda_mu; }));
    f.push_back(make_double("noise.lambda_t", "gate threshold", [](C& c) -> auto& { return c.train.noise.lambda_t; }));

    f.push_back(make_int("log.metrics_interval", "iterations between metrics rows",
                         [](C& c) -> auto& { return c.train.metrics_interval; }));
    f.push_back(make_int("log.checkpoint_interval", "iterations between canvas renders (0 = off)",
                         [](C& c) -> auto& { return c.train.checkpoint_interval; }));
    f.push_back(make_int("log.tap_interval", "iterations between moment taps (0 = off)",
                         [](C& c) -> auto& { return c.train.tap_interval; }));
    return f;
}

}  // namespace detail

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = detail::build_registry();
    return fields;
}

inline const ConfigField& config_field(std::string_view key) {
    for (const auto& f : config_fields())
        if (f.key == key) return f;
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

inline std::string get_value(const ExperimentConfig& cfg, std::string_view key) { return config_field(key).get(cfg); }

inline void set_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
    config_field(detail::trim(key)).set(cfg, value);
}

/// Applies one "key=value" override.
inline void apply_override(ExperimentConfig& cfg, std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(kv) + "' is not key=value");
    set_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
}

/// Ordered key -> value snapshot.
inline std::vector<std::pair<std::string, std::string>> flatten(const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : config_fields()) out.emplace_back(f.key, f.get(cfg));
    return out;
}

inline std::string to_text(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [k, v] : flatten(cfg)) out += k + " = " + v + "\n";
    return out;
}

/// Parses "key = value" lines; blank lines and '#' comments are ignored.
inline void apply_text(ExperimentConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (detail::trim(line).empty()) continue;
        try {
            apply_override(cfg, line);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline void load_config_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_text(cfg, ss.str());
}

struct ConfigDelta {
    std::string key;
    std::string from;
    std::string to;
    bool operator==(const ConfigDelta&) const = default;
};

/// Keys whose values differ, in registry order.
inline std::vector<ConfigDelta> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
    std::vector<ConfigDelta> out;
    for (const auto& f : config_fields()) {
        const std::string va = f.get(a), vb = f.get(b);
        if (va != vb) out.push_back({f.key, va, vb});
    }
    return out;
}

}  // namespace gsopt
