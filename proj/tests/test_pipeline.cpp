#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace gsopt;

namespace {

RawPrimitive prim(double x, double y, double scale, double o, double depth = 0.5) {
    RawPrimitive p;
    p.mu = {x, y};
    p.kappa = {std::log(scale), std::log(scale)};
    p.tau = opacity_logit(o);
    p.color = {0.5, 0.5, 0.5};
    p.depth = depth;
    return p;
}

/// A small scene and plan that exercise every stage in a few hundred iterations.
Scene small_scene(std::uint64_t seed, double redundancy = 3.0) {
    SceneSpec spec;
    spec.canvas = 64;
    spec.gt_count = 10;
    spec.redundancy = redundancy;
    spec.min_scale = 2.0;
    spec.max_scale = 6.0;
    return gen_scene(spec, seed);
}

TrainingConfig small_plan(Framework f, OptimizerMode mode) {
    TrainingConfig c;
    c.framework = f;
    c.plan = {.warmup_end = 20, .densify_end = 200, .total_iters = 300, .densify_interval = 10,
              .reset_interval = 60, .relocate_interval = 10, .densify_mode = mode, .pop_mode = mode};
    c.reg_opacity_start = 60;
    c.metrics_interval = 25;
    c.checkpoint_interval = 0;
    c.seed = 4;
    return c;
}

}  // namespace

TEST(StagePlan, Boundaries) {
    StagePlan p;
    EXPECT_EQ(p.stage_of(1), Stage::Warmup);
    EXPECT_EQ(p.stage_of(50), Stage::Warmup);
    EXPECT_EQ(p.stage_of(51), Stage::Densify);
    EXPECT_EQ(p.stage_of(1499), Stage::Densify);
    EXPECT_EQ(p.stage_of(1500), Stage::PureOpt);
    p.pop_mode = OptimizerMode::SparseAdam;
    EXPECT_EQ(p.mode_at(1499), OptimizerMode::CoupledAdam);
    EXPECT_EQ(p.mode_at(1500), OptimizerMode::SparseAdam);
    p.warmup_end = 2000;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Densify, NoStatsAboveThresholdIsNoOp) {
    PrimitiveSet set;
    for (int k = 0; k < 4; ++k) set.add(prim(10 + k, 10, 2, 0.8));
    const PrimitiveSet before = set;
    MomentState st(4);
    DensifyStats stats(4);
    Rng rng(1, Stream::Densify);
    const auto rep = densify_adc(set, st, stats, {}, 128.0, rng);
    EXPECT_EQ(set, before);
    EXPECT_TRUE(rep.cloned.empty() && rep.split.empty() && rep.pruned.empty());
}

TEST(Densify, PrunesTransparentPrimitive) {
    PrimitiveSet set;
    set.add(prim(10, 10, 2, 0.8));
    set.add(prim(12, 10, 2, 1e-4));
    set.add(prim(14, 10, 2, 0.8));
    MomentState st(3);
    DensifyStats stats(3);
    Rng rng(1, Stream::Densify);
    const auto rep = densify_adc(set, st, stats, {}, 128.0, rng);
    EXPECT_EQ(set.size(), 2u);
    EXPECT_EQ(st.size(), 2u);
    ASSERT_EQ(rep.pruned.size(), 1u);
    EXPECT_EQ(rep.pruned[0], 1u);
    EXPECT_EQ(set.position(1).x, 14.0);
}

TEST(Densify, SplitChildrenShrinkAndLandInsideParent) {
    Rng rng(3, Stream::Densify);
    for (int trial = 0; trial < 50; ++trial) {
        PrimitiveSet set;
        RawPrimitive p = prim(50, 50, 4.0, 0.7);
        p.kappa = {std::log(4.0), std::log(4.0)};
        p.rot = 0.3 * trial;
        set.add(p);
        MomentState st(1);
        DensifyStats stats(1);
        stats.accum[0] = 1.0;
        stats.count[0] = 1;
        DensifyConfig cfg;
        const auto rep = densify_adc(set, st, stats, cfg, 100.0, rng);
        ASSERT_EQ(rep.split.size(), 1u);
        ASSERT_EQ(set.size(), 2u);
        for (std::size_t i = 0; i < 2; ++i) {
            EXPECT_NEAR(set.scale(i).x, 2.5, 1e-12);
            EXPECT_NEAR(set.scale(i).y, 2.5, 1e-12);
            // Inside the parent's 3-sigma ellipse.
            const Sym2 cov = build_covariance({4.0, 4.0}, p.rot);
            const double dx = set.position(i).x - 50, dy = set.position(i).y - 50;
            const double det = cov.det();
            const double q = (cov.yy * dx * dx - 2 * cov.xy * dx * dy + cov.xx * dy * dy) / det;
            EXPECT_LE(q, 9.0 + 1e-9);
            for (Attr a : kAllAttrs) EXPECT_EQ(st.steps(a, i), 0);
        }
    }
}

TEST(Densify, CloneOpacityCorrectionPreservesBlend) {
    PrimitiveSet set;
    set.add(prim(20, 20, 0.5, 0.6));
    MomentState st(1);
    st.m.row(Attr::Color, 0)[0] = 0.3;
    DensifyStats stats(1);
    stats.accum[0] = 1.0;
    stats.count[0] = 1;
    Rng rng(1, Stream::Densify);
    const auto rep = densify_adc(set, st, stats, {}, 128.0, rng);
    ASSERT_EQ(rep.cloned.size(), 1u);
    ASSERT_EQ(set.size(), 2u);
    const double o = set.opacity(0);
    EXPECT_NEAR(o, 1 - std::sqrt(0.4), 1e-12);
    EXPECT_NEAR(set.opacity(1), o, 1e-15);
    EXPECT_NEAR(1 - (1 - o) * (1 - o), 0.6, 1e-12);
    EXPECT_EQ(st.m.row(Attr::Color, 0)[0], 0.3);
    EXPECT_EQ(st.m.row(Attr::Color, 1)[0], 0.0);
    EXPECT_EQ(stats.accum.size(), 2u);
    EXPECT_EQ(stats.mean(0), 0.0);
}

TEST(Densify, CapSkipsGrowth) {
    PrimitiveSet set;
    set.add(prim(20, 20, 0.5, 0.6));
    set.add(prim(30, 20, 0.5, 0.6));
    MomentState st(2);
    DensifyStats stats(2);
    stats.accum = {1.0, 1.0};
    stats.count = {1, 1};
    DensifyConfig cfg;
    cfg.max_primitives = 3;
    Rng rng(1, Stream::Densify);
    const auto rep = densify_adc(set, st, stats, cfg, 128.0, rng);
    EXPECT_TRUE(rep.skipped);
    EXPECT_EQ(set.size(), 2u);
}

TEST(Densify, MisalignedStateIsAContractViolation) {
    PrimitiveSet set;
    set.add(prim(20, 20, 0.5, 0.6));
    MomentState st(2);
    DensifyStats stats(1);
    Rng rng(1, Stream::Densify);
    EXPECT_THROW(densify_adc(set, st, stats, {}, 128.0, rng), ContractViolation);
}

TEST(OpacityReset, Examples) {
    PrimitiveSet set;
    set.add(prim(8, 8, 3, 0.9));
    set.add(prim(8, 8, 3, 0.005));
    auto rows = opacity_reset(set, 0.01);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_NEAR(set.opacity(0), 0.01, 1e-15);
    EXPECT_NEAR(set.opacity(1), 0.005, 1e-15);
    const PrimitiveSet after = set;
    EXPECT_TRUE(opacity_reset(set, 0.01).empty());
    EXPECT_EQ(set, after);
}

TEST(OpacityReset, RenderGetsDimmer) {
    Rng rng(5, Stream::Test);
    PrimitiveSet set = oracle::random_set(rng, 20, 32, 32);
    Viewpoint vp;
    vp.width = vp.height = 32;
    const double before = render_forward(set, vp).image.mean();
    opacity_reset(set, 0.01);
    EXPECT_LE(render_forward(set, vp).image.mean(), before);
}

TEST(Relocate, NoDeadIsNoOp) {
    PrimitiveSet set;
    set.add(prim(8, 8, 3, 0.5));
    set.add(prim(9, 8, 3, 0.5));
    const PrimitiveSet before = set;
    MomentState st(2);
    Rng rng(1, Stream::Relocate);
    EXPECT_TRUE(mcmc_relocate(set, st, rng).respawned.empty());
    EXPECT_EQ(set, before);
}

TEST(Relocate, OneDeadOneAlive) {
    PrimitiveSet set;
    set.add(prim(8, 8, 3, 0.6, 0.2));
    set.add(prim(30, 2, 3, 1e-4, 0.9));
    MomentState st(2);
    st.m.row(Attr::Position, 1)[0] = 4.0;
    st.steps(Attr::Position, 1) = 9;
    Rng rng(1, Stream::Relocate);
    const auto rep = mcmc_relocate(set, st, rng);
    ASSERT_EQ(rep.respawned.size(), 1u);
    EXPECT_EQ(set.position(1), set.position(0));
    EXPECT_EQ(set.position(1), (Vec2{8, 8}));
    EXPECT_NEAR(set.opacity(0), 1 - std::sqrt(0.4), 1e-12);
    EXPECT_EQ(set.opacity(1), set.opacity(0));
    EXPECT_EQ(st.m.row(Attr::Position, 1)[0], 0.0);
    EXPECT_EQ(st.steps(Attr::Position, 1), 0);
}

TEST(Relocate, CountAuditAndConservation) {
    Rng rng(7, Stream::Test);
    PrimitiveSet set = oracle::random_set(rng, 200, 64, 64);
    for (std::size_t i = 0; i < set.size(); ++i)
        if (rng.bernoulli(0.3)) set.params.row(Attr::Opacity, i)[0] = -12.0;
    MomentState st(set.size());
    const auto before = classify_active(set);
    Rng r(2, Stream::Relocate);
    const auto rep = mcmc_relocate(set, st, r);
    EXPECT_EQ(rep.respawned.size(), before.dead);
    EXPECT_EQ(set.size(), 200u);
    EXPECT_EQ(st.size(), 200u);
    EXPECT_GE(classify_active(set).active, before.active);
    EXPECT_EQ(classify_active(set).dead, 0u);
}

TEST(Relocate, CollapseWhenNothingAlive) {
    PrimitiveSet set;
    set.add(prim(8, 8, 3, 1e-4));
    MomentState st(1);
    Rng rng(1, Stream::Relocate);
    EXPECT_THROW(mcmc_relocate(set, st, rng), SceneCollapse);
}

TEST(Training, ZeroIterationsReturnsInitialSet) {
    const Scene s = small_scene(1);
    TrainingConfig c = small_plan(Framework::Vanilla, OptimizerMode::CoupledAdam);
    c.plan = {.warmup_end = 0, .densify_end = 0, .total_iters = 0};
    const TrainResult r = run_training(c, s.training);
    EXPECT_EQ(r.set, s.training.initial);
    EXPECT_TRUE(r.metrics.empty());
    EXPECT_TRUE(r.events.empty());
}

TEST(Training, SameSeedIsBitwiseIdentical) {
    const Scene s = small_scene(2);
    TrainingConfig c = small_plan(Framework::Vanilla, OptimizerMode::SparseAdam);
    c.noise.enabled = true;
    c.noise.lr = 5.0;
    const TrainResult a = run_training(c, s.training), b = run_training(c, s.training);
    EXPECT_EQ(a.metrics, b.metrics);
    EXPECT_EQ(a.events, b.events);
    EXPECT_EQ(a.set, b.set);
    EXPECT_EQ(a.loss, b.loss);
}

TEST(Training, VanillaStageDiscipline) {
    const Scene s = small_scene(3);
    TrainingConfig c = small_plan(Framework::Vanilla, OptimizerMode::AdamWGS);
    c.optim.lambda_o = 0.001;
    c.rsr_enabled = true;
    c.rsr.schedule = {.interval = 10, .ratio = {{{21, 0.1}, {200, 0.0}}}};
    const TrainResult r = run_training(c, s.training);
    std::map<std::string, int> kinds;
    for (const Event& e : r.events) {
        ++kinds[e.kind];
        EXPECT_GT(e.iter, c.plan.warmup_end) << e.kind;
        EXPECT_LT(e.iter, c.plan.densify_end) << e.kind;
        if (e.kind == "opacity_reset") {
            EXPECT_EQ(e.iter % c.plan.reset_interval, 0);
        }
        if (e.kind == "clone" || e.kind == "split" || e.kind == "prune") {
            EXPECT_EQ(e.iter % c.plan.densify_interval, 0);
        }
        EXPECT_NE(e.kind, "relocate");
        EXPECT_NE(e.kind, "aiu");
    }
    EXPECT_GT(kinds["rsr"], 0);
    EXPECT_GT(kinds["opacity_reset"], 0);
    // N_p only moves at densification steps.
    for (const auto& m : r.metrics) {
        if (m.iter >= c.plan.densify_end) {
            EXPECT_EQ(m.np, r.metrics.back().np);
        }
    }
}

TEST(Training, McmcKeepsPrimitiveCountAndRelocatesInWindow) {
    const Scene s = small_scene(4, 9.0);
    TrainingConfig c = small_plan(Framework::Mcmc, OptimizerMode::SparseAdam);
    c.optim.lambda_o = 0.01;
    c.optim.lambda_s = 1e-4;
    c.noise.enabled = true;
    c.noise.lr = 5.0;
    c.aiu_enabled = true;
    c.aiu = {.start = 100, .end = 250, .probability = {{{100, 0.1}}}, .step_scale = {{{100, 0.1}}}};
    const TrainResult r = run_training(c, s.training);
    for (const auto& m : r.metrics) EXPECT_EQ(m.np, s.training.initial.size());
    EXPECT_EQ(r.set.size(), s.training.initial.size());
    std::size_t relocated = 0;
    for (const Event& e : r.events) {
        if (e.kind == "relocate") {
            EXPECT_GT(e.iter, c.plan.warmup_end);
            EXPECT_LT(e.iter, c.plan.densify_end);
            EXPECT_EQ(e.iter % c.plan.relocate_interval, 0);
            relocated += e.count;
        } else if (e.kind == "aiu") {
            EXPECT_GE(e.iter, 100);
            EXPECT_LE(e.iter, 250);
        } else {
            ADD_FAILURE() << "unexpected event " << e.kind;
        }
    }
    EXPECT_EQ(relocated, r.relocated);
}

TEST(Training, EveryModeRuns) {
    const Scene s = small_scene(5);
    for (auto [mode, name] : kModeNames) {
        TrainingConfig c = small_plan(Framework::Vanilla, mode);
        c.plan.total_iters = 60;
        c.plan.densify_end = 40;
        c.optim.lambda_o = 0.001;
        c.optim.lambda_s = 1e-5;
        const TrainResult r = run_training(c, s.training);
        ASSERT_FALSE(r.metrics.empty()) << name;
        EXPECT_GT(r.metrics.back().psnr, 0.0) << name;
    }
}

TEST(Training, NonFiniteLossAbortsWithDiagnostic) {
    Scene s = small_scene(6);
    s.training.initial.params.row(Attr::Color, 0)[0] = std::nan("");
    TrainingConfig c = small_plan(Framework::Vanilla, OptimizerMode::CoupledAdam);
    try {
        run_training(c, s.training);
        FAIL() << "expected divergence";
    } catch (const TrainingDiverged& e) {
        EXPECT_EQ(e.diagnostic["np"], s.training.initial.size());
        EXPECT_TRUE(e.diagnostic.contains("iter"));
        EXPECT_TRUE(e.diagnostic.contains("primitives"));
    }
}

TEST(Training, MomentTapAndCheckpoints) {
    const Scene s = small_scene(7);
    TrainingConfig c = small_plan(Framework::Vanilla, OptimizerMode::SparseAdam);
    c.tap_interval = 50;
    c.checkpoint_interval = 100;
    const TrainResult r = run_training(c, s.training);
    EXPECT_EQ(r.taps.size(), 6u * kNumAttrs);
    ASSERT_EQ(r.checkpoints.size(), 3u);
    EXPECT_EQ(r.checkpoints.back().first, 300);
    EXPECT_EQ(r.checkpoints.back().second.width, 64);
}
