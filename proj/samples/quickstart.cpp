// Trains one small scene twice, synchronous Adam and sparse Adam, and prints the final metrics.
#include "gsopt/outputs.hpp"

#include <cstdio>

using namespace gsopt;

int main() {
    ExperimentConfig cfg = vanilla_base();
    cfg.seed = 7;
    for (const char* kv : {"scene.canvas=64", "scene.gt_count=12", "stage.densify_end=600", "stage.total_iters=1000"})
        apply_override(cfg, kv);

    const Scene scene = gen_scene(cfg.scene, cfg.seed);
    std::printf("%zu views, %zu initial primitives\n", scene.training.views.size(), scene.training.initial.size());

    for (const char* mode : {"coupled-adam", "sparse-adam"}) {
        ExperimentConfig arm = cfg;
        apply_override(arm, std::string("stage.densify_mode=") + mode);
        apply_override(arm, std::string("stage.pop_mode=") + mode);
        const TrainResult r = run_training(training_config(arm), scene.training);
        const MetricsRecord& m = r.metrics.back();
        std::printf("%-12s psnr %.2f dB  ssim %.3f  active %zu  dead %zu\n", mode, m.psnr, m.ssim, m.na, m.nd);
        write_ppm(render_forward(r.set, scene.training.canvas).image, std::string("quickstart_") + mode + ".ppm");
    }
}
