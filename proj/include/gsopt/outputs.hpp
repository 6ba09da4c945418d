/// @file outputs.hpp
/// @brief On-disk artifacts of a preset run: per-arm metrics CSV, event log, moment
/// taps, checkpoint renders, final primitives, and a summary table.

#pragma once

#include "gsopt/config.hpp"
#include "gsopt/image.hpp"
#include "gsopt/metrics.hpp"
#include "gsopt/pipeline.hpp"
#include "gsopt/presets.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace gsopt {

inline constexpr const char* kMetricsHeader = "iter,psnr,ssim,np,na,nd,delta_na,mean_mv,max_mv";
inline constexpr const char* kMomentsHeader = "iter,attr,rows,mean_sqrt_v,max_sqrt_v,mean_mv,max_mv";

struct OutputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw OutputError("cannot write " + p.string());
    return f;
}

inline void finish(std::ofstream& f, const std::filesystem::path& p) {
    f.flush();
    if (!f) throw OutputError("write failed: " + p.string());
}

}  // namespace detail

inline std::string metrics_csv(const std::vector<MetricsRecord>& rows) {
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : rows) {
        out += std::to_string(r.iter) + ',' + detail::fmt_double(r.psnr) + ',' + detail::fmt_double(r.ssim) + ',' +
               std::to_string(r.np) + ',' + std::to_string(r.na) + ',' + std::to_string(r.nd) + ',' +
               (r.delta_na ? detail::fmt_double(*r.delta_na) : std::string()) + ',' + detail::fmt_double(r.mean_mv) +
               ',' + detail::fmt_double(r.max_mv) + '\n';
    }
    return out;
}

inline std::vector<MetricsRecord> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != kMetricsHeader) throw OutputError("metrics CSV: bad header");
    std::vector<MetricsRecord> rows;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 9) throw OutputError("metrics CSV: expected 9 columns in '" + line + "'");
        MetricsRecord r;
        r.iter = detail::parse_int<long>("iter", cells[0]);
        r.psnr = detail::parse_double("psnr", cells[1]);
        r.ssim = detail::parse_double("ssim", cells[2]);
        r.np = detail::parse_int<std::size_t>("np", cells[3]);
        r.na = detail::parse_int<std::size_t>("na", cells[4]);
        r.nd = detail::parse_int<std::size_t>("nd", cells[5]);
        if (!detail::trim(cells[6]).empty()) r.delta_na = detail::parse_double("delta_na", cells[6]);
        r.mean_mv = detail::parse_double("mean_mv", cells[7]);
        r.max_mv = detail::parse_double("max_mv", cells[8]);
        rows.push_back(r);
    }
    return rows;
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw OutputError("cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_metrics_csv(ss.str());
}

inline std::string moments_csv(const std::vector<MomentTap>& taps) {
    std::string out = std::string(kMomentsHeader) + "\n";
    for (const auto& t : taps)
        out += std::to_string(t.iter) + ',' + std::string(attr_name(t.stats.attr)) + ',' +
               std::to_string(t.stats.rows) + ',' + detail::fmt_double(t.stats.mean_sqrt_v) + ',' +
               detail::fmt_double(t.stats.max_sqrt_v) + ',' + detail::fmt_double(t.stats.mean_ratio) + ',' +
               detail::fmt_double(t.stats.max_ratio) + '\n';
    return out;
}

inline std::string events_jsonl(const std::vector<Event>& events) {
    std::string out;
    for (const auto& e : events) out += to_json(e).dump() + '\n';
    return out;
}

inline nlohmann::json record_json(const MetricsRecord& r) {
    nlohmann::json j{{"iter", r.iter}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"np", r.np},
                     {"na", r.na},     {"nd", r.nd},     {"mean_mv", r.mean_mv}, {"max_mv", r.max_mv}};
    j["delta_na"] = r.delta_na ? nlohmann::json(*r.delta_na) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json summary_json(const PresetResult& r) {
    const ArmResult* base = r.arm(r.baseline);
    nlohmann::json arms = nlohmann::json::array();
    for (const auto& a : r.arms) {
        nlohmann::json j{{"name", a.name}, {"baseline", a.name == r.baseline}, {"relocated", a.result.relocated}};
        j["final"] = a.result.metrics.empty() ? nlohmann::json(nullptr) : record_json(a.result.metrics.back());
        nlohmann::json diff = nlohmann::json::array();
        if (base)
            for (const auto& d : config_diff(base->config, a.config))
                if (d.key != "arm") diff.push_back({{"key", d.key}, {"from", d.from}, {"to", d.to}});
        j["config_diff"] = diff;
        arms.push_back(j);
    }
    return {{"preset", r.preset}, {"seed", r.seed}, {"baseline", r.baseline}, {"arms", arms}};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    auto f = detail::open_out(p);
    f << text;
    detail::finish(f, p);
}

/// Writes <dir>/summary.json and per arm <dir>/<arm>/{metrics.csv, events.jsonl, config.txt,
/// final.gsps, final.json, moments.csv, renders/iter_NNNNN.ppm, renders/depth_final.pgm}.
inline void write_outputs(const PresetResult& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw OutputError("cannot create " + dir.string() + ": " + ec.message());
    for (const auto& a : r.arms) {
        const auto ad = dir / a.name;
        std::filesystem::create_directories(ad / "renders", ec);
        if (ec) throw OutputError("cannot create " + (ad / "renders").string() + ": " + ec.message());
        write_text(ad / "metrics.csv", metrics_csv(a.result.metrics));
        write_text(ad / "events.jsonl", events_jsonl(a.result.events));
        write_text(ad / "config.txt", to_text(a.config));
        if (!a.result.taps.empty()) write_text(ad / "moments.csv", moments_csv(a.result.taps));
        save_primitives(a.result.set, (ad / "final.gsps").string());
        write_text(ad / "final.json", primitives_to_json(a.result.set).dump(1) + "\n");
        for (const auto& [iter, img] : a.result.checkpoints) {
            char name[32];
            std::snprintf(name, sizeof name, "iter_%05ld.ppm", iter);
            write_ppm(img, (ad / "renders" / name).string());
        }
        if (!a.result.set.empty()) {
            const Viewpoint canvas = canvas_view(a.config.scene);
            write_pgm16(render_depth(a.result.set, canvas), (ad / "renders" / "depth_final.pgm").string(), 1.0);
        }
    }
    write_text(dir / "summary.json", summary_json(r).dump(2) + "\n");
}

}  // namespace gsopt
