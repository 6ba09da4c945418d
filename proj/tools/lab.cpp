// lab: run presets, compare finished runs, trace optimizer moments.
#include "gsopt/outputs.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

using namespace gsopt;
namespace fs = std::filesystem;

namespace {

std::string preset_list() {
    std::string out;
    for (const auto& p : presets()) {
        out += "  " + p.name + " (";
        for (std::size_t i = 0; i < p.arms.size(); ++i) out += (i ? ", " : "") + p.arms[i].name;
        out += "): " + p.help + "\n";
    }
    return out;
}

// Config-file values become overrides relative to the preset's framework base.
std::vector<std::string> collect_overrides(const Preset& preset, const std::string& config_file,
                                           const std::vector<std::string>& cli) {
    std::vector<std::string> out;
    if (!config_file.empty()) {
        const ExperimentConfig base = base_config(preset.framework);
        ExperimentConfig file = base;
        load_config_file(file, config_file);
        for (const auto& d : config_diff(base, file))
            if (d.key != "arm") out.push_back(d.key + "=" + d.to);
    }
    out.insert(out.end(), cli.begin(), cli.end());
    return out;
}

std::optional<PrimitiveSet> load_scene(const std::string& path) {
    if (path.empty()) return std::nullopt;
    return load_primitives(path);
}

int cmd_run(const std::string& name, std::uint64_t seed, const fs::path& out, const std::string& scene_file,
            const std::string& config_file, const std::vector<std::string>& overrides) {
    const Preset& preset = find_preset(name);
    const auto extra = collect_overrides(preset, config_file, overrides);
    const auto gt = load_scene(scene_file);
    const unsigned threads = worker_count();
    std::fprintf(stderr, "lab: %s seed %llu, %zu arm(s), %u worker(s)\n", preset.name.c_str(),
                 static_cast<unsigned long long>(seed), preset.arms.size(), threads);
    PresetResult r;
    try {
        r = run_experiment_preset(name, seed, extra, gt ? &*gt : nullptr, threads);
    } catch (const TrainingDiverged& e) {
        fs::create_directories(out);
        const fs::path dump = out / "divergence.json";
        write_text(dump, e.diagnostic.dump(2) + "\n");
        std::fprintf(stderr, "lab: training diverged: %s (dump: %s)\n", e.what(), dump.c_str());
        return 3;
    }
    write_outputs(r, out);
    for (const auto& a : r.arms) {
        if (a.result.metrics.empty()) continue;
        const MetricsRecord& m = a.result.metrics.back();
        std::printf("%-10s psnr %6.2f  ssim %.4f  np %5zu  na %5zu  nd %4zu  relocated %zu\n", a.name.c_str(), m.psnr,
                    m.ssim, m.np, m.na, m.nd, static_cast<std::size_t>(a.result.relocated));
    }
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

std::string cell(const nlohmann::json& j, const char* fmt) {
    if (j.is_null()) return "-";
    char buf[64];
    if (j.is_number_float()) std::snprintf(buf, sizeof buf, fmt, j.get<double>());
    else std::snprintf(buf, sizeof buf, "%lld", j.get<long long>());
    return buf;
}

int cmd_compare(const std::vector<std::string>& dirs) {
    std::printf("%-24s %-10s %5s %6s %8s %7s %6s %6s %5s %9s %9s\n", "run", "arm", "base", "iter", "psnr", "ssim",
                "np", "na", "nd", "delta_na", "relocated");
    for (const auto& d : dirs) {
        const fs::path path = fs::path(d) / "summary.json";
        std::ifstream f(path);
        if (!f) throw OutputError("cannot read " + path.string());
        nlohmann::json s;
        try {
            s = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw OutputError(path.string() + ": " + e.what());
        }
        const std::string run = s.value("preset", "?") + "/" + std::to_string(s.value("seed", 0));
        for (const auto& a : s.at("arms")) {
            const nlohmann::json& fin = a.at("final");
            if (fin.is_null()) {
                std::printf("%-24s %-10s (no metrics)\n", run.c_str(), a.value("name", "?").c_str());
                continue;
            }
            std::printf("%-24s %-10s %5s %6s %8s %7s %6s %6s %5s %9s %9s\n", run.c_str(),
                        a.value("name", "?").c_str(), a.value("baseline", false) ? "*" : "", cell(fin["iter"], "").c_str(),
                        cell(fin["psnr"], "%.2f").c_str(), cell(fin["ssim"], "%.4f").c_str(),
                        cell(fin["np"], "").c_str(), cell(fin["na"], "").c_str(), cell(fin["nd"], "").c_str(),
                        cell(fin["delta_na"], "%+.3f").c_str(), cell(a["relocated"], "").c_str());
        }
    }
    return 0;
}

int cmd_trace(const std::string& tap, const std::string& name, const std::string& arm_name, std::uint64_t seed,
              long interval, const std::string& out, const std::vector<std::string>& overrides) {
    if (tap != "moments") throw ConfigError("unknown tap '" + tap + "' (available: moments)");
    if (interval <= 0) throw ConfigError("--interval must be positive");
    const Preset& preset = find_preset(name);
    const ArmSpec* arm = &preset.arms.back();
    if (!arm_name.empty()) {
        arm = nullptr;
        for (const auto& a : preset.arms)
            if (a.name == arm_name) arm = &a;
        if (!arm) throw ConfigError("preset " + preset.name + " has no arm '" + arm_name + "'");
    }
    auto extra = overrides;
    extra.push_back("log.tap_interval=" + std::to_string(interval));
    const TrainResult r = run_arm(arm_config(preset, *arm, seed, extra));
    const std::string csv = moments_csv(r.taps);
    if (out.empty()) std::cout << csv;
    else write_text(out, csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimizer ablations on synthetic 2D Gaussian splatting scenes"};
    app.require_subcommand(1);

    std::string preset, scene_file, config_file, out_dir;
    std::uint64_t seed = 1;
    std::vector<std::string> overrides;
    auto* run = app.add_subcommand("run", "run every arm of a preset and write its outputs");
    run->add_option("--preset", preset, "preset name")->required();
    run->add_option("--seed", seed, "scene and training seed");
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--scene", scene_file, "ground-truth primitives (.gsps) instead of a generated scene");
    run->add_option("--config", config_file, "key = value file applied before --override");
    run->add_option("--override", overrides, "key=value, repeatable");
    run->footer("Presets:\n" + preset_list());

    std::vector<std::string> dirs;
    auto* compare = app.add_subcommand("compare", "tabulate final metrics of finished runs");
    compare->add_option("dirs", dirs, "run directories")->required();

    std::string tap = "moments", trace_preset = "mc-adamwgs", trace_arm, trace_out;
    std::uint64_t trace_seed = 1;
    long interval = 100;
    std::vector<std::string> trace_overrides;
    auto* trace = app.add_subcommand("trace", "sample optimizer moment statistics during one arm");
    trace->add_option("--tap", tap, "what to sample")->required();
    trace->add_option("--preset", trace_preset, "preset name")->capture_default_str();
    trace->add_option("--arm", trace_arm, "arm name (default: the preset's last arm)");
    trace->add_option("--seed", trace_seed, "seed")->capture_default_str();
    trace->add_option("--interval", interval, "iterations between samples")->capture_default_str();
    trace->add_option("--out", trace_out, "CSV path (default: stdout)");
    trace->add_option("--override", trace_overrides, "key=value, repeatable");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(preset, seed, out_dir, scene_file, config_file, overrides);
        if (*compare) return cmd_compare(dirs);
        return cmd_trace(tap, trace_preset, trace_arm, trace_seed, interval, trace_out, trace_overrides);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "lab: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "lab: %s\n", e.what());
        return 1;
    }
}
