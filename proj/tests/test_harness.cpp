#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

using namespace gsopt;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTiny{"scene.canvas=64",     "scene.gt_count=6",   "scene.redundancy=2",
                                     "stage.warmup_end=10", "stage.densify_end=40", "stage.total_iters=60",
                                     "log.metrics_interval=20", "log.checkpoint_interval=30"};

std::set<std::string> diff_keys(const ExperimentConfig& a, const ExperimentConfig& b) {
    std::set<std::string> out;
    for (const auto& d : config_diff(a, b))
        if (d.key != "arm") out.insert(d.key);
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Scene, InitialCounts) {
    SceneSpec spec;
    spec.redundancy = 0.0;
    EXPECT_EQ(gen_scene(spec, 1).training.initial.size(), spec.gt_count);
    spec.redundancy = 3.0;
    spec.gt_count = 50;
    EXPECT_EQ(gen_scene(spec, 1).training.initial.size(), 200u);
    for (const auto& p : gen_scene(spec, 1).training.initial.get(0).color) EXPECT_GE(p, 0.0);
    EXPECT_NEAR(gen_scene(spec, 1).training.initial.opacity(7), kInitOpacity, 1e-15);
}

TEST(Scene, GroundTruthReproducesItsTargets) {
    SceneSpec spec;
    spec.texture = 0.0;
    const Scene s = gen_scene(spec, 2);
    const MetricsRecord m = compute_metrics(s.ground_truth, s.training.views, s.training.targets);
    EXPECT_EQ(m.psnr, 99.0);
    EXPECT_NEAR(m.ssim, 1.0, 1e-12);
}

TEST(Scene, ViewpointsCoverTheCanvas) {
    SceneSpec spec;
    const auto views = make_viewpoints(spec);
    std::vector<int> hit(spec.canvas * spec.canvas, 0);
    for (const auto& v : views)
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x) hit[(v.origin_y + y) * spec.canvas + v.origin_x + x] = 1;
    EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), spec.canvas * spec.canvas);

    spec.crop = 64;
    spec.stride = 32;
    EXPECT_EQ(make_viewpoints(spec).size(), 8u);
}

TEST(Scene, DeterministicAndValidated) {
    SceneSpec spec;
    const Scene a = gen_scene(spec, 9), b = gen_scene(spec, 9), c = gen_scene(spec, 10);
    EXPECT_EQ(a.training.initial, b.training.initial);
    EXPECT_EQ(a.training.targets, b.training.targets);
    EXPECT_NE(a.ground_truth, c.ground_truth);
    spec.gt_count = 0;
    EXPECT_THROW(gen_scene(spec, 1), ConfigError);
    SceneSpec bad;
    bad.canvas = 16;
    EXPECT_THROW(bad.validate(), ConfigError);
    SceneSpec gaps;
    gaps.stride = 20;
    EXPECT_THROW(gaps.validate(), ConfigError);
}

TEST(Metrics, PsnrAndDelta) {
    const Image a(16, 16, 3, 0.5), b(16, 16, 3, 0.6);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    EXPECT_EQ(psnr(a, a), 99.0);
    EXPECT_NEAR(relative_change(1.571e6, 3.098e6), -0.493, 5e-4);
    EXPECT_EQ(relative_change(5, 5), 0.0);
}

TEST(Metrics, CountsAndBaseline) {
    Rng rng(3, Stream::Test);
    PrimitiveSet set = oracle::random_set(rng, 10, 16, 16);
    set.params.row(Attr::Opacity, 2)[0] = -10;
    set.alive[5] = 0;
    Viewpoint vp;
    vp.width = vp.height = 16;
    const Image target(16, 16, 3, 0.2);
    MetricsRecord base;
    base.na = 4;
    const MetricsRecord m = compute_metrics(set, {vp}, {target}, nullptr, &base);
    EXPECT_EQ(m.np, 10u);
    EXPECT_EQ(m.na + m.nd, set.alive_count());
    EXPECT_EQ(m.nd, 1u);
    ASSERT_TRUE(m.delta_na.has_value());
    EXPECT_NEAR(*m.delta_na, (8.0 - 4.0) / 4.0, 1e-15);
    EXPECT_FALSE(compute_metrics(set, {vp}, {target}).delta_na.has_value());
}

TEST(Presets, UnknownNameListsAvailable) {
    try {
        find_preset("gs-nope");
        FAIL();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        for (const auto& p : presets()) EXPECT_NE(msg.find(p.name), std::string::npos) << p.name;
    }
}

TEST(Presets, RequiredNamesExist) {
    for (const char* n : {"gs-adam", "gs-sparse", "gs-half", "gs-rsr-only", "gs-adamwgs", "mc-adam", "mc-sparse",
                          "mc-aiu", "mc-rsr-l1", "mc-adamwgs"})
        EXPECT_NO_THROW(find_preset(n)) << n;
}

TEST(Presets, SparseDiffersOnlyInOptimizerMode) {
    const Preset& p = find_preset("gs-sparse");
    const auto keys = diff_keys(arm_config(p, p.arms[0], 1), arm_config(p, p.arms[1], 1));
    EXPECT_EQ(keys, (std::set<std::string>{"stage.densify_mode", "stage.pop_mode"}));
}

TEST(Presets, HalfSwitchesOnlyPureOptimization) {
    const Preset& p = find_preset("gs-half");
    const auto keys = diff_keys(arm_config(p, p.arms[0], 1), arm_config(p, p.arms[1], 1));
    EXPECT_EQ(keys, (std::set<std::string>{"stage.pop_mode"}));
}

TEST(Presets, McAdamwgsEnablesTheFullRecipe) {
    const Preset& p = find_preset("mc-adamwgs");
    const ArmSpec* mc17 = nullptr;
    for (const auto& a : p.arms)
        if (a.name == "MC17") mc17 = &a;
    ASSERT_NE(mc17, nullptr);
    const ExperimentConfig c = arm_config(p, *mc17, 1);
    EXPECT_EQ(c.train.plan.densify_mode, OptimizerMode::AdamWGS);
    EXPECT_EQ(c.train.plan.pop_mode, OptimizerMode::AdamWGS);
    EXPECT_EQ(c.train.optim.lambda_o, 0.001);
    EXPECT_EQ(c.train.optim.lambda_s, 1e-5);
    EXPECT_EQ(c.train.optim.clip_opacity, 10.0);
    EXPECT_TRUE(c.train.rsr_enabled);
    EXPECT_EQ(c.train.rsr.alpha1, 0.2);
    EXPECT_EQ(c.train.rsr.alpha2, 0.04);
    EXPECT_EQ(c.stss, "lo");
    EXPECT_FALSE(training_config(c).rsr.schedule.ratio.milestones.empty());
}

TEST(Presets, Gs7DropsResetButKeepsNoise) {
    const Preset& p = find_preset("gs-adamwgs");
    const ExperimentConfig gs8 = arm_config(p, p.arms[1], 1), gs7 = arm_config(p, p.arms[2], 1);
    EXPECT_EQ(gs8.arm, "GS8");
    EXPECT_EQ(gs7.arm, "GS7");
    EXPECT_TRUE(gs8.train.densify.opacity_reset);
    EXPECT_FALSE(gs7.train.densify.opacity_reset);
    EXPECT_TRUE(gs7.train.noise.enabled);
    EXPECT_EQ(diff_keys(gs8, gs7), (std::set<std::string>{"densify.opacity_reset"}));
}

TEST(Presets, ExtraOverridesWin) {
    const Preset& p = find_preset("gs-adamwgs");
    const ExperimentConfig c = arm_config(p, p.arms[1], 1, {"rsr.enabled=false", "reg.lambda_o=0.5"});
    EXPECT_FALSE(c.train.rsr_enabled);
    EXPECT_EQ(c.train.optim.lambda_o, 0.5);
}

TEST(Config, TextRoundTripAndErrors) {
    ExperimentConfig c = mcmc_base();
    apply_override(c, "aiu.probability=10:0.1,500:0.2");
    apply_override(c, "lr.opacity=0.07");
    ExperimentConfig back;
    apply_text(back, to_text(c));
    EXPECT_TRUE(config_diff(c, back).empty());
    EXPECT_THROW(apply_override(c, "no.such.key=1"), ConfigError);
    EXPECT_THROW(apply_override(c, "reg.lambda_o"), ConfigError);
    EXPECT_THROW(apply_override(c, "reg.lambda_o=abc"), ConfigError);
    EXPECT_THROW(apply_text(c, "# comment\nstage.total_iters = x\n"), ConfigError);
}

TEST(Config, StssPresets) {
    StagePlan plan;
    EXPECT_TRUE(resolve_stss("off", plan).milestones.empty());
    const auto lo = resolve_stss("lo", plan), hi = resolve_stss("hi", plan);
    EXPECT_EQ(lo.at(plan.warmup_end + 1), 0.05);
    EXPECT_EQ(lo.at(plan.densify_end), 0.0);
    EXPECT_EQ(hi.at(plan.densify_end - 1), 0.25);
    EXPECT_EQ(resolve_stss("100:0.3", plan).at(150), 0.3);
}

TEST(Outputs, EmptyLogIsHeaderOnly) {
    EXPECT_EQ(metrics_csv({}), std::string(kMetricsHeader) + "\n");
    EXPECT_TRUE(parse_metrics_csv(metrics_csv({})).empty());
    EXPECT_THROW(parse_metrics_csv("iter,psnr\n"), OutputError);
}

TEST(Outputs, CsvRoundTripIsLossless) {
    Rng rng(5, Stream::Test);
    std::vector<MetricsRecord> rows;
    for (int k = 0; k < 20; ++k) {
        MetricsRecord r;
        r.iter = k * 100;
        r.psnr = rng.uniform(10, 40);
        r.ssim = rng.uniform();
        r.np = rng.below(5000);
        r.na = rng.below(5000);
        r.nd = rng.below(100);
        if (k % 3) r.delta_na = rng.normal();
        r.mean_mv = rng.uniform(0, 1e-3);
        r.max_mv = 1.0 / 3.0;
        rows.push_back(r);
    }
    EXPECT_EQ(parse_metrics_csv(metrics_csv(rows)), rows);
}

TEST(Outputs, PresetRunWritesEverything) {
    PresetResult r = run_experiment_preset("gs-sparse", 3, kTiny, nullptr, 1);
    ASSERT_EQ(r.arms.size(), 2u);
    for (const auto& m : r.arm("GS1")->result.metrics) EXPECT_EQ(m.delta_na, 0.0);

    const fs::path dir = fs::temp_directory_path() / "gsopt_outputs_test";
    fs::remove_all(dir);
    write_outputs(r, dir);
    const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(summary["baseline"], "GS1");
    ASSERT_EQ(summary["arms"].size(), 2u);
    EXPECT_EQ(summary["arms"][0]["final"]["delta_na"], 0.0);
    EXPECT_TRUE(summary["arms"][1]["final"]["delta_na"].is_number());
    EXPECT_EQ(summary["arms"][1]["config_diff"].size(), 2u);
    for (const char* arm : {"GS1", "GS2"}) {
        EXPECT_EQ(read_metrics_csv(dir / arm / "metrics.csv"), r.arm(arm)->result.metrics);
        EXPECT_TRUE(fs::exists(dir / arm / "events.jsonl"));
        EXPECT_TRUE(fs::exists(dir / arm / "config.txt"));
        EXPECT_EQ(load_primitives((dir / arm / "final.gsps").string()), r.arm(arm)->result.set);
        EXPECT_TRUE(fs::exists(dir / arm / "renders" / "iter_00030.ppm"));
        EXPECT_TRUE(fs::exists(dir / arm / "renders" / "depth_final.pgm"));
        ExperimentConfig back;
        apply_text(back, slurp(dir / arm / "config.txt"));
        EXPECT_TRUE(config_diff(back, r.arm(arm)->config).empty());
    }
    fs::remove_all(dir);
    EXPECT_THROW(write_outputs(r, "/proc/definitely/not/writable"), OutputError);
}

TEST(Outputs, SameSeedGivesIdenticalCsvBytes) {
    const PresetResult a = run_experiment_preset("gs-half", 4, kTiny, nullptr, 2);
    const PresetResult b = run_experiment_preset("gs-half", 4, kTiny, nullptr, 1);
    for (std::size_t i = 0; i < a.arms.size(); ++i)
        EXPECT_EQ(metrics_csv(a.arms[i].result.metrics), metrics_csv(b.arms[i].result.metrics));
}

TEST(Threads, WorkerCountFromEnvironment) {
    ::setenv("LAB_THREADS", "3", 1);
    EXPECT_EQ(worker_count(), 3u);
    ::setenv("LAB_THREADS", "junk", 1);
    EXPECT_GE(worker_count(), 1u);
    ::unsetenv("LAB_THREADS");

    std::vector<int> out(50, 0);
    parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; });
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i) * 2);
    EXPECT_THROW(parallel_for(8, 3, [](std::size_t i) {
                     if (i == 5) throw std::runtime_error("boom");
                 }),
                 std::runtime_error);
}
