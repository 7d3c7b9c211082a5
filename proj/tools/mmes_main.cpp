#include <mmes/run_config.hpp>
#include <mmes/run_task.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CliOverrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::string> out_dir;
};

std::string metric(double v, const char* unit) {
    if (std::isnan(v)) return "-";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4g%s", v, unit);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reconstructs signals and images by fitting a patch manifold to the observation"};
    app.require_subcommand(1);

    const std::vector<std::pair<mmes::TaskKind, const char*>> tasks = {
        {mmes::TaskKind::kComplete, "fill in missing pixels or samples"},
        {mmes::TaskKind::kSuperResolve, "upscale a decimated image"},
        {mmes::TaskKind::kDeblur, "invert a known blur"},
        {mmes::TaskKind::kDenoise, "remove additive noise"},
        {mmes::TaskKind::kToyLorenz, "restore a corrupted chaotic test signal"},
        {mmes::TaskKind::kManifoldExport, "fit an image and render its learned patch manifold"},
    };

    CliOverrides cli;
    for (const auto& [task, blurb] : tasks) {
        CLI::App* sub = app.add_subcommand(mmes::task_name(task), blurb);
        sub->add_option("--config", cli.config_path, "experiment description file")->required();
        sub->add_option("--seed", cli.seed, "override the configured seed");
        sub->add_option("--threads", cli.threads, "override the sweep worker count");
        sub->add_option("--out", cli.out_dir, "override the output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    mmes::TaskKind task = mmes::TaskKind::kComplete;
    for (const auto& [kind, blurb] : tasks) {
        if (app.get_subcommand(mmes::task_name(kind))->parsed()) task = kind;
    }

    try {
        mmes::RunConfig cfg = mmes::load_run_config(cli.config_path, task);
        if (cli.seed) cfg.solver.seed = *cli.seed;
        if (cli.threads) {
            if (*cli.threads < 1) throw mmes::ConfigError("threads must be >= 1");
            cfg.threads = *cli.threads;
        }
        if (cli.out_dir) cfg.out_dir = *cli.out_dir;

        const mmes::TaskResult result = mmes::run_task(cfg);
        for (const auto& out : result.outcomes) {
            std::printf("%s  psnr %s  ssim %s  mse %s  iters %zu%s  %.1fs\n", out.dir.c_str(),
                        metric(out.psnr_db, " dB").c_str(), metric(out.ssim_score, "").c_str(),
                        metric(out.mse, "").c_str(), out.iterations,
                        out.stopped_early ? " (early stop)" : "", out.seconds);
        }
        std::printf("report: %s\n", result.report_path.c_str());
        return 0;
    } catch (const mmes::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
