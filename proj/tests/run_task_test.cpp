#include <mmes/run_task.hpp>

#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using mmes::DenseTensor;
using mmes::RunConfig;
using mmes::TaskKind;

DenseTensor smooth_image(std::size_t rows, std::size_t cols) {
    DenseTensor x = DenseTensor::zeros({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double u = static_cast<double>(r) / static_cast<double>(rows - 1);
            const double v = static_cast<double>(c) / static_cast<double>(cols - 1);
            x.at({r, c}) = 0.5 + 0.25 * std::sin(3.0 * u + 1.0) * std::cos(2.0 * v) + 0.2 * u * v;
        }
    }
    return x;
}

class RunTaskTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = std::filesystem::temp_directory_path() /
               ("mmes_task_" +
                std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        std::filesystem::remove_all(dir_);
        std::filesystem::create_directories(dir_);
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    RunConfig parse(const std::string& text, TaskKind task) {
        std::istringstream is(text);
        RunConfig cfg = mmes::parse_run_config(is, task);
        return cfg;
    }

    std::filesystem::path dir_;
};

std::vector<nlohmann::json> read_report(const std::string& path) {
    std::ifstream is(path);
    EXPECT_TRUE(is.good()) << path;
    std::vector<nlohmann::json> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
    }
    return lines;
}

std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    EXPECT_TRUE(is.good()) << path;
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

TEST_F(RunTaskTest, CompletionSmokeFitsTheFullyObservedInput) {
    mmes::save_image(smooth_image(16, 16), path("img.png"));
    const RunConfig cfg = parse("input = " + path("img.png") +
                                    "\n"
                                    "out = " +
                                    path("out") +
                                    "\n"
                                    "missing_rate = 0\n"
                                    "seed = 5\n"
                                    "[solver]\n"
                                    "tau = 4\n"
                                    "bottleneck = 4\n"
                                    "hidden_multiplier = 2\n"
                                    "lambda0 = 0.05\n"
                                    "max_iters = 200\n",
                                TaskKind::kComplete);
    const mmes::TaskResult result = mmes::run_task(cfg);
    ASSERT_EQ(result.outcomes.size(), 1u);
    EXPECT_GE(result.outcomes[0].psnr_db, 12.0);
    EXPECT_EQ(result.outcomes[0].iterations, 200u);

    const auto report = read_report(result.report_path);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_EQ(report[0]["task"], "complete");
    EXPECT_EQ(report[0]["run"], "run_000");
    EXPECT_EQ(report[0]["missing_rate"], 0.0);
    EXPECT_TRUE(report[0]["psnr_db"].is_number());
    EXPECT_TRUE(report[0]["ssim"].is_number());
    EXPECT_DOUBLE_EQ(report[0]["psnr_db"].get<double>(), result.outcomes[0].psnr_db);

    const std::string trace = read_bytes(path("out/run_000/trace.csv"));
    EXPECT_EQ(trace.rfind("iter,l_rec,l_ae,lambda,lr,psnr\n", 0), 0u);

    const DenseTensor output = mmes::load_image(path("out/run_000/output.png"));
    EXPECT_EQ(output.shape(), (std::vector<std::size_t>{16, 16}));
    EXPECT_TRUE(std::filesystem::exists(path("out/run_000/observed.png")));
    EXPECT_TRUE(std::filesystem::exists(path("out/run_000/mask.png")));
    EXPECT_TRUE(std::filesystem::exists(path("out/run_000/ae_final.bin")));
    EXPECT_TRUE(std::filesystem::exists(path("out/run_000/z_final.bin")));
}

TEST_F(RunTaskTest, SweepGridExpandsIntoIsolatedRuns) {
    mmes::save_image(smooth_image(12, 12), path("img.png"));
    const RunConfig cfg = parse("input = " + path("img.png") +
                                    "\n"
                                    "out = " +
                                    path("sweep") +
                                    "\n"
                                    "missing_rate = 0.2; 0.4\n"
                                    "[solver]\n"
                                    "tau = 3;4\n"
                                    "bottleneck = 2\n"
                                    "hidden_multiplier = 2\n"
                                    "max_iters = 40\n",
                                TaskKind::kComplete);
    const auto runs = mmes::expand_runs(cfg);
    ASSERT_EQ(runs.size(), 4u);
    EXPECT_EQ(runs[0].tau, 3u);
    EXPECT_EQ(runs[0].missing_rate, 0.2);
    EXPECT_EQ(runs[1].tau, 3u);
    EXPECT_EQ(runs[1].missing_rate, 0.4);
    EXPECT_EQ(runs[3].tau, 4u);
    EXPECT_EQ(runs[3].dir_name, "run_003");

    const mmes::TaskResult result = mmes::run_task(cfg);
    ASSERT_EQ(result.outcomes.size(), 4u);
    const auto report = read_report(result.report_path);
    ASSERT_EQ(report.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_TRUE(std::filesystem::exists(dir_ / "sweep" / runs[i].dir_name / "trace.csv"));
        EXPECT_TRUE(std::filesystem::exists(dir_ / "sweep" / runs[i].dir_name / "output.png"));
        EXPECT_EQ(report[i]["run"], runs[i].dir_name);
        EXPECT_EQ(report[i]["seed"].get<std::uint64_t>(), i);
    }
    EXPECT_NE(read_bytes(path("sweep/run_000/trace.csv")), read_bytes(path("sweep/run_001/trace.csv")));
}

TEST_F(RunTaskTest, RepeatedRunsProduceBitwiseIdenticalTraces) {
    mmes::save_image(smooth_image(12, 12), path("img.png"));
    const auto config_for = [&](const std::string& out) {
        return "input = " + path("img.png") +
               "\n"
               "out = " +
               path(out) +
               "\n"
               "missing_rate = 0.3\n"
               "seed = 11\n"
               "[solver]\n"
               "tau = 3\n"
               "bottleneck = 2\n"
               "hidden_multiplier = 2\n"
               "max_iters = 60\n";
    };
    RunConfig first = parse(config_for("a"), TaskKind::kComplete);
    RunConfig second = parse(config_for("b"), TaskKind::kComplete);
    mmes::run_task(first);
    mmes::run_task(second);
    EXPECT_EQ(read_bytes(path("a/run_000/trace.csv")), read_bytes(path("b/run_000/trace.csv")));
    EXPECT_EQ(read_bytes(path("a/run_000/output.png")), read_bytes(path("b/run_000/output.png")));
}

TEST_F(RunTaskTest, ColorCompletionDropsWholePixelsByDefault) {
    DenseTensor color = DenseTensor::zeros({12, 12, 3});
    const DenseTensor base = smooth_image(12, 12);
    for (std::size_t r = 0; r < 12; ++r) {
        for (std::size_t c = 0; c < 12; ++c) {
            color.at({r, c, 0}) = base.at({r, c});
            color.at({r, c, 1}) = 0.8 * base.at({r, c});
            color.at({r, c, 2}) = 0.6 * base.at({r, c}) + 0.1;
        }
    }
    mmes::save_image(color, path("img.png"));
    const RunConfig cfg = parse("input = " + path("img.png") +
                                    "\n"
                                    "out = " +
                                    path("out") +
                                    "\n"
                                    "missing_rate = 0.3\n"
                                    "[solver]\n"
                                    "tau = 3\n"
                                    "bottleneck = 2\n"
                                    "hidden_multiplier = 2\n"
                                    "max_iters = 50\n",
                                TaskKind::kComplete);
    const mmes::TaskResult result = mmes::run_task(cfg);
    EXPECT_TRUE(std::isfinite(result.outcomes[0].psnr_db));

    const DenseTensor mask = mmes::mask_from_image(mmes::load_image(path("out/run_000/mask.png")));
    ASSERT_EQ(mask.shape(), (std::vector<std::size_t>{12, 12, 3}));
    for (std::size_t r = 0; r < 12; ++r) {
        for (std::size_t c = 0; c < 12; ++c) {
            EXPECT_EQ(mask.at({r, c, 0}), mask.at({r, c, 1}));
            EXPECT_EQ(mask.at({r, c, 0}), mask.at({r, c, 2}));
        }
    }
    EXPECT_TRUE(std::filesystem::exists(path("out/run_000/color_final.bin")));
}

TEST_F(RunTaskTest, ProvidedMaskAndReferenceDriveNonSimulatedRuns) {
    const DenseTensor truth = smooth_image(12, 12);
    DenseTensor mask = mmes::make_random_mask({12, 12}, 0.25, 99);
    DenseTensor corrupted = truth;
    for (std::size_t i = 0; i < corrupted.size(); ++i) corrupted[i] *= mask[i];
    mmes::save_image(truth, path("truth.png"));
    mmes::save_image(corrupted, path("corrupted.png"));
    mmes::save_image(mmes::mask_to_image(mask), path("mask.png"));

    const RunConfig cfg = parse("input = " + path("corrupted.png") +
                                    "\n"
                                    "reference = " +
                                    path("truth.png") +
                                    "\n"
                                    "mask = " +
                                    path("mask.png") +
                                    "\n"
                                    "simulate = false\n"
                                    "out = " +
                                    path("out") +
                                    "\n"
                                    "[solver]\n"
                                    "tau = 3\n"
                                    "bottleneck = 2\n"
                                    "hidden_multiplier = 2\n"
                                    "max_iters = 60\n",
                                TaskKind::kComplete);
    const mmes::TaskResult result = mmes::run_task(cfg);
    EXPECT_TRUE(std::isfinite(result.outcomes[0].psnr_db));
    EXPECT_TRUE(std::isfinite(result.outcomes[0].ssim_score));

    const DenseTensor observed = mmes::load_image(path("out/run_000/observed.png"));
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (mask[i] == 0.0) EXPECT_EQ(observed[i], 0.0) << "masked entry leaked through";
    }
}

TEST_F(RunTaskTest, ToyLorenzSynthesizesCorruptsAndScores) {
    const RunConfig cfg = parse(
        "out = " + path("out") +
            "\n"
            "steps = 220\n"
            "burn_in = 500\n"
            "missing_rate = 0.1\n"
            "noise_std = 0.05\n"
            "occlusions = 30:12, 150:10\n"
            "seed = 3\n"
            "[solver]\n"
            "tau = 8\n"
            "bottleneck = 2\n"
            "hidden_multiplier = 2\n"
            "max_iters = 80\n",
        TaskKind::kToyLorenz);
    const mmes::TaskResult result = mmes::run_task(cfg);
    ASSERT_EQ(result.outcomes.size(), 1u);
    EXPECT_TRUE(std::isfinite(result.outcomes[0].mse));
    EXPECT_TRUE(std::isfinite(result.outcomes[0].psnr_db));
    EXPECT_TRUE(std::isnan(result.outcomes[0].ssim_score)) << "ssim is undefined for 1-D signals";

    const DenseTensor truth = mmes::load_signal_csv(path("out/run_000/truth.csv"));
    const DenseTensor observed = mmes::load_signal_csv(path("out/run_000/observed.csv"));
    const DenseTensor mask = mmes::load_signal_csv(path("out/run_000/mask.csv"));
    const DenseTensor output = mmes::load_signal_csv(path("out/run_000/output.csv"));
    ASSERT_EQ(truth.shape(), (std::vector<std::size_t>{220}));
    ASSERT_EQ(observed.shape(), truth.shape());
    ASSERT_EQ(output.shape(), truth.shape());
    for (std::size_t i = 30; i < 42; ++i) EXPECT_EQ(mask[i], 0.0) << "occluded sample " << i;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0) EXPECT_EQ(observed[i], 0.0);
    }

    const auto report = read_report(result.report_path);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_TRUE(report[0]["ssim"].is_null());
    EXPECT_TRUE(report[0]["mse"].is_number());
}

TEST_F(RunTaskTest, ManifoldExportTilesDecodedPatches) {
    mmes::save_image(smooth_image(16, 16), path("img.png"));
    const RunConfig cfg = parse("input = " + path("img.png") +
                                    "\n"
                                    "out = " +
                                    path("out") +
                                    "\n"
                                    "grid_rows = 3\n"
                                    "grid_cols = 5\n"
                                    "[solver]\n"
                                    "tau = 4\n"
                                    "bottleneck = 2\n"
                                    "hidden_multiplier = 2\n"
                                    "max_iters = 60\n",
                                TaskKind::kManifoldExport);
    const mmes::TaskResult result = mmes::run_task(cfg);
    EXPECT_EQ(result.outcomes[0].montage_rows, 3u);
    EXPECT_EQ(result.outcomes[0].montage_cols, 5u);

    const DenseTensor montage = mmes::load_image(path("out/run_000/montage.png"));
    EXPECT_EQ(montage.shape(), (std::vector<std::size_t>{12, 20}));
    const auto report = read_report(result.report_path);
    EXPECT_EQ(report[0]["montage_rows"], 3);
    EXPECT_EQ(report[0]["montage_cols"], 5);
}

TEST_F(RunTaskTest, RemainingTasksWireTheirDegradations) {
    mmes::save_image(smooth_image(16, 16), path("img.png"));
    const std::string solver =
        "[solver]\n"
        "tau = 3\n"
        "bottleneck = 2\n"
        "hidden_multiplier = 2\n"
        "max_iters = 25\n";

    const RunConfig denoise = parse("input = " + path("img.png") + "\nout = " + path("out_dn") +
                                        "\nnoise_std = 0.1\n" + solver,
                                    TaskKind::kDenoise);
    EXPECT_TRUE(std::isfinite(mmes::run_task(denoise).outcomes[0].psnr_db));

    const RunConfig deblur = parse("input = " + path("img.png") + "\nout = " + path("out_db") +
                                       "\nkernel_sigma = 1.0\nkernel_radius = 2\n" + solver,
                                   TaskKind::kDeblur);
    EXPECT_TRUE(std::isfinite(mmes::run_task(deblur).outcomes[0].psnr_db));

    const RunConfig sr = parse("input = " + path("img.png") + "\nout = " + path("out_sr") +
                                   "\nfactor = 2\n" + solver,
                               TaskKind::kSuperResolve);
    const mmes::TaskResult sres = mmes::run_task(sr);
    EXPECT_TRUE(std::isfinite(sres.outcomes[0].psnr_db));
    const DenseTensor lowres = mmes::load_image(path("out_sr/run_000/observed.png"));
    EXPECT_EQ(lowres.shape(), (std::vector<std::size_t>{8, 8}));
    const DenseTensor upscaled = mmes::load_image(path("out_sr/run_000/output.png"));
    EXPECT_EQ(upscaled.shape(), (std::vector<std::size_t>{16, 16}));
}

TEST_F(RunTaskTest, CheckpointCadenceWritesPeriodicSnapshots) {
    mmes::save_image(smooth_image(12, 12), path("img.png"));
    const RunConfig cfg = parse("input = " + path("img.png") +
                                    "\n"
                                    "out = " +
                                    path("out") +
                                    "\n"
                                    "missing_rate = 0\n"
                                    "[solver]\n"
                                    "tau = 3\n"
                                    "bottleneck = 2\n"
                                    "hidden_multiplier = 2\n"
                                    "max_iters = 25\n"
                                    "checkpoint_cadence = 10\n",
                                TaskKind::kComplete);
    mmes::run_task(cfg);
    EXPECT_TRUE(std::filesystem::exists(path("out/run_000/ae_000010.bin")));
    EXPECT_TRUE(std::filesystem::exists(path("out/run_000/z_000020.bin")));
    const mmes::MlpParams snap = mmes::load_mlp_params(path("out/run_000/ae_000010.bin"));
    EXPECT_EQ(snap.layers.front().weight.cols(), 9);
}

TEST_F(RunTaskTest, RuntimeFailuresSurfaceAsExceptions) {
    RunConfig missing = parse("input = " + path("absent.png") + "\n", TaskKind::kComplete);
    EXPECT_THROW(mmes::run_task(missing), std::runtime_error);

    mmes::save_signal_csv(mmes::DenseTensor({4}, {0.1, 0.2, 0.3, 0.4}), path("sig.csv"));
    RunConfig srOnSignal = parse("input = " + path("sig.csv") + "\nout = " + path("out") + "\n",
                                 TaskKind::kSuperResolve);
    EXPECT_THROW(mmes::run_task(srOnSignal), std::runtime_error);
}

}  // namespace
