#include <mmes/run_config.hpp>

#include <gtest/gtest.h>

#include <sstream>
#include <string>

namespace {

using mmes::ConfigError;
using mmes::RunConfig;
using mmes::TaskKind;

RunConfig parse(const std::string& text, TaskKind task) {
    std::istringstream is(text);
    return mmes::parse_run_config(is, task);
}

TEST(RunConfigTest, TaskDefaultsFollowTheSettingsTable) {
    const RunConfig complete = parse("input = x.png\n", TaskKind::kComplete);
    EXPECT_EQ(complete.tau, (std::vector<std::size_t>{6}));
    EXPECT_EQ(complete.bottleneck, (std::vector<std::size_t>{4}));
    EXPECT_EQ(complete.sigma, (std::vector<double>{0.05}));
    EXPECT_EQ(complete.missing_rate, (std::vector<double>{0.5}));
    EXPECT_FALSE(complete.solver.lambda_cap_mode);
    EXPECT_EQ(complete.solver.hidden_multiplier, 8u);

    const RunConfig sr4 = parse("input = x.png\n", TaskKind::kSuperResolve);
    EXPECT_EQ(sr4.factor, 4u);
    EXPECT_EQ(sr4.tau, (std::vector<std::size_t>{6}));
    EXPECT_EQ(sr4.bottleneck, (std::vector<std::size_t>{32}));
    EXPECT_EQ(sr4.sigma, (std::vector<double>{0.1}));

    const RunConfig sr8 = parse("input = x.png\nfactor = 8\n", TaskKind::kSuperResolve);
    EXPECT_EQ(sr8.bottleneck, (std::vector<std::size_t>{16}));

    const RunConfig deblur = parse("input = x.png\n", TaskKind::kDeblur);
    EXPECT_EQ(deblur.tau, (std::vector<std::size_t>{4}));
    EXPECT_EQ(deblur.bottleneck, (std::vector<std::size_t>{16}));
    EXPECT_EQ(deblur.sigma, (std::vector<double>{0.01}));
    EXPECT_EQ(deblur.solver.hidden_multiplier, 32u);

    const RunConfig denoise = parse("input = x.png\n", TaskKind::kDenoise);
    EXPECT_EQ(denoise.tau, (std::vector<std::size_t>{6}));
    EXPECT_EQ(denoise.bottleneck, (std::vector<std::size_t>{32}));
    EXPECT_TRUE(denoise.solver.lambda_cap_mode);

    const RunConfig lorenz = parse("", TaskKind::kToyLorenz);
    EXPECT_EQ(lorenz.tau, (std::vector<std::size_t>{64}));
    EXPECT_EQ(lorenz.bottleneck, (std::vector<std::size_t>{3}));
    EXPECT_EQ(lorenz.missing_rate, (std::vector<double>{0.1}));
    EXPECT_EQ(lorenz.noise_std, 0.05);

    const RunConfig manifold = parse("input = x.png\n", TaskKind::kManifoldExport);
    EXPECT_EQ(manifold.tau, (std::vector<std::size_t>{8}));
    EXPECT_EQ(manifold.bottleneck, (std::vector<std::size_t>{2}));
}

TEST(RunConfigTest, ExplicitKeysOverrideDefaults) {
    const std::string text =
        "input = scene.ppm\n"
        "reference = truth.ppm\n"
        "mask = holes.pgm\n"
        "out = results\n"
        "report = sweep.jsonl\n"
        "seed = 41\n"
        "threads = 3\n"
        "simulate = false\n"
        "voxel_mask = true\n"
        "missing_rate = 0.25\n"
        "[solver]\n"
        "tau = 5\n"
        "bottleneck = 7\n"
        "sigma = 0.02\n"
        "lambda0 = 1.5\n"
        "max_iters = 123\n"
        "stop_at_mse = 0.004\n"
        "checkpoint_cadence = 50\n"
        "linear_mode = true\n";
    const RunConfig cfg = parse(text, TaskKind::kComplete);
    EXPECT_EQ(cfg.input, "scene.ppm");
    EXPECT_EQ(cfg.reference, "truth.ppm");
    EXPECT_EQ(cfg.mask_path, "holes.pgm");
    EXPECT_EQ(cfg.out_dir, "results");
    EXPECT_EQ(cfg.report_name, "sweep.jsonl");
    EXPECT_EQ(cfg.solver.seed, 41u);
    EXPECT_EQ(cfg.threads, 3u);
    EXPECT_FALSE(cfg.simulate);
    EXPECT_TRUE(cfg.voxel_mask);
    EXPECT_EQ(cfg.missing_rate, (std::vector<double>{0.25}));
    EXPECT_EQ(cfg.tau, (std::vector<std::size_t>{5}));
    EXPECT_EQ(cfg.bottleneck, (std::vector<std::size_t>{7}));
    EXPECT_EQ(cfg.sigma, (std::vector<double>{0.02}));
    EXPECT_EQ(cfg.solver.lambda0, 1.5);
    EXPECT_EQ(cfg.solver.max_iters, 123u);
    EXPECT_EQ(cfg.solver.stop_at_mse, 0.004);
    EXPECT_EQ(cfg.solver.checkpoint_cadence, 50u);
    EXPECT_TRUE(cfg.solver.linear_mode);
}

TEST(RunConfigTest, SemicolonsExpandIntoSweepLists) {
    const std::string text =
        "input = x.png\n"
        "missing_rate = 0.3; 0.5 ;0.7\n"
        "[solver]\n"
        "tau = 4;6;8\n"
        "bottleneck = 2; 4\n"
        "sigma = 0.01\n";
    const RunConfig cfg = parse(text, TaskKind::kComplete);
    EXPECT_EQ(cfg.tau, (std::vector<std::size_t>{4, 6, 8}));
    EXPECT_EQ(cfg.bottleneck, (std::vector<std::size_t>{2, 4}));
    EXPECT_EQ(cfg.sigma, (std::vector<double>{0.01}));
    EXPECT_EQ(cfg.missing_rate, (std::vector<double>{0.3, 0.5, 0.7}));
}

TEST(RunConfigTest, CommentsSectionsAndSpacingAreTolerated) {
    const std::string text =
        "# experiment twelve\n"
        "\n"
        "  input=x.png  \n"
        "[run]\n"
        "seed = 9\n"
        "[solver]\n"
        "  tau   =  3\n"
        "# trailing note\n";
    const RunConfig cfg = parse(text, TaskKind::kComplete);
    EXPECT_EQ(cfg.input, "x.png");
    EXPECT_EQ(cfg.solver.seed, 9u);
    EXPECT_EQ(cfg.tau, (std::vector<std::size_t>{3}));
}

TEST(RunConfigTest, UnknownKeysAreRejectedByName) {
    try {
        parse("input = x.png\nwindow = 6\n", TaskKind::kComplete);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("window"), std::string::npos);
    }
    EXPECT_THROW(parse("input = x.png\n[solver]\nrank = 4\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\n[tuning]\nlr0 = 0.1\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\ntau = 6\n", TaskKind::kComplete), ConfigError)
        << "solver keys require the [solver] section";
}

TEST(RunConfigTest, MalformedLinesAndValuesAreRejected) {
    EXPECT_THROW(parse("input x.png\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("= x.png\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\ninput = y.png\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\n[solver\ntau = 2\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\nthreads = many\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\nthreads = -2\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\nsimulate = maybe\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\n[solver]\ntau = 4;;6\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\n[solver]\nsigma = 0.05oops\n", TaskKind::kComplete),
                 ConfigError);
}

TEST(RunConfigTest, NamedTaskMustAgreeWithTheRequestedOne) {
    EXPECT_THROW(parse("task = denoise\ninput = x.png\n", TaskKind::kComplete), ConfigError);
    const RunConfig cfg = parse("task = complete\ninput = x.png\n", TaskKind::kComplete);
    EXPECT_EQ(cfg.task, TaskKind::kComplete);
    EXPECT_THROW(mmes::parse_task_name("sharpen"), ConfigError);
    EXPECT_EQ(mmes::parse_task_name("super-resolve"), TaskKind::kSuperResolve);
}

TEST(RunConfigTest, OcclusionListsParseAsStartLengthPairs) {
    const RunConfig cfg =
        parse("occlusions = 10:25, 100:40,1200:50\nsteps = 400\n", TaskKind::kToyLorenz);
    ASSERT_EQ(cfg.occlusions.size(), 3u);
    EXPECT_EQ(cfg.occlusions[0], (std::pair<std::size_t, std::size_t>{10, 25}));
    EXPECT_EQ(cfg.occlusions[1], (std::pair<std::size_t, std::size_t>{100, 40}));
    EXPECT_EQ(cfg.occlusions[2], (std::pair<std::size_t, std::size_t>{1200, 50}));
    EXPECT_EQ(cfg.lorenz.steps, 400u);
    EXPECT_THROW(parse("occlusions = 10-25\n", TaskKind::kToyLorenz), ConfigError);
}

TEST(RunConfigTest, RangeChecksCatchBadSettings) {
    EXPECT_THROW(parse("", TaskKind::kComplete), ConfigError) << "input is required";
    EXPECT_THROW(parse("input = x.png\nthreads = 0\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\nmissing_rate = 1.5\n", TaskKind::kComplete), ConfigError);
    EXPECT_THROW(parse("input = x.png\nnoise_std = -0.1\n", TaskKind::kDenoise), ConfigError);
    EXPECT_THROW(parse("input = x.png\nfactor = 1\n", TaskKind::kSuperResolve), ConfigError);
    EXPECT_THROW(parse("input = x.png\nkernel_sigma = 0\n", TaskKind::kDeblur), ConfigError);
    EXPECT_THROW(parse("input = x.png\ngrid_rows = 0\n", TaskKind::kManifoldExport), ConfigError);
    EXPECT_THROW(parse("dt = 0\n", TaskKind::kToyLorenz), ConfigError);
    EXPECT_THROW(parse("input = x.png\n[solver]\ntau = 0\n", TaskKind::kComplete), ConfigError);
}

}  // namespace
