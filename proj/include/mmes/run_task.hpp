#pragma once

#include <mmes/image_io.hpp>
#include <mmes/imaging.hpp>
#include <mmes/run_config.hpp>
#include <mmes/solver.hpp>
#include <mmes/toy_dynamics.hpp>

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mmes {

/// One point of the (tau, bottleneck, sigma, missing_rate) sweep grid.
struct RunInstance {
    std::size_t index = 0;
    std::size_t tau = 0;
    std::size_t bottleneck = 0;
    double sigma = 0.0;
    double missing_rate = 0.0;
    std::string dir_name;
};

inline std::vector<RunInstance> expand_runs(const RunConfig& cfg) {
    std::vector<RunInstance> runs;
    for (std::size_t t : cfg.tau) {
        for (std::size_t r : cfg.bottleneck) {
            for (double s : cfg.sigma) {
                for (double rho : cfg.missing_rate) {
                    RunInstance run;
                    run.index = runs.size();
                    run.tau = t;
                    run.bottleneck = r;
                    run.sigma = s;
                    run.missing_rate = rho;
                    char name[32];
                    std::snprintf(name, sizeof(name), "run_%03zu", run.index);
                    run.dir_name = name;
                    runs.push_back(std::move(run));
                }
            }
        }
    }
    return runs;
}

struct RunOutcome {
    std::size_t index = 0;
    std::string dir;
    std::size_t iterations = 0;
    bool stopped_early = false;
    double mse = std::numeric_limits<double>::quiet_NaN();
    double psnr_db = std::numeric_limits<double>::quiet_NaN();
    double ssim_score = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
    std::size_t montage_rows = 0;  // manifold-export tiling, in patches
    std::size_t montage_cols = 0;
};

namespace detail {

inline bool is_csv_path(const std::string& path) { return has_suffix(path, ".csv"); }

inline DenseTensor load_input_file(const std::string& path) {
    return is_csv_path(path) ? load_signal_csv(path) : load_image(path);
}

inline DenseTensor clip01(DenseTensor x) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::min(1.0, std::max(0.0, x[i]));
    return x;
}

inline double mean_squared_error(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mean_squared_error: shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

inline DenseTensor add_gaussian_noise(DenseTensor x, double std_dev, std::uint64_t seed) {
    if (std_dev <= 0.0) return x;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += std_dev * dist(rng);
    return x;
}

inline DenseTensor replicate_pixel_mask(const DenseTensor& mask, std::size_t channels) {
    DenseTensor out = DenseTensor::zeros({mask.shape()[0], mask.shape()[1], channels});
    for (std::size_t i = 0; i < mask.size(); ++i) {
        for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] = mask[i];
    }
    return out;
}

inline void write_trace_csv(const std::vector<TraceRecord>& trace, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_trace_csv: cannot open " + path);
    os << "iter,l_rec,l_ae,lambda,lr,psnr\n";
    char buf[192];
    for (const auto& rec : trace) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", rec.iter, rec.l_rec,
                      rec.l_ae, rec.lambda, rec.lr, rec.psnr);
        os << buf;
    }
    if (!os) throw std::runtime_error("write_trace_csv: write failed for " + path);
}

inline std::string checkpoint_name(const char* prefix, std::size_t iter) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%06zu.bin", prefix, iter);
    return name;
}

inline DenseTensor color_map_tensor(const ColorPipelineParams& p) {
    DenseTensor out = DenseTensor::zeros({12});
    for (std::size_t i = 0; i < 9; ++i) out[i] = p.color_matrix.data()[i];
    for (std::size_t i = 0; i < 3; ++i) out[9 + i] = p.color_bias[static_cast<Eigen::Index>(i)];
    return out;
}

/// Loads a mask file (image levels or 0/1 csv) and widens a per-pixel mask
/// to the observation's channel count when needed.
inline DenseTensor mask_from_file(const std::string& path, const std::vector<std::size_t>& shape) {
    DenseTensor mask = is_csv_path(path) ? load_signal_csv(path) : mask_from_image(load_image(path));
    if (mask.ndim() == 2 && shape.size() == 3) mask = replicate_pixel_mask(mask, shape[2]);
    if (mask.shape() != shape) {
        throw std::runtime_error("mask file " + path + " does not match the observation shape");
    }
    return mask;
}

inline DenseTensor sampled_mask(const std::vector<std::size_t>& shape, double rho, bool voxel,
                                std::uint64_t seed) {
    if (shape.size() == 3 && !voxel) {
        return replicate_pixel_mask(make_random_mask({shape[0], shape[1]}, rho, seed), shape[2]);
    }
    return make_random_mask(shape, rho, seed);
}

struct SolvedTensor {
    DenseTensor xhat;
    std::vector<TraceRecord> trace;
    std::size_t iterations = 0;
    bool stopped_early = false;
};

/// Runs the grayscale or color solver, writes the trace and the final (and
/// optionally periodic) parameter snapshots into `dir`.
inline SolvedTensor solve_and_snapshot(const DenseTensor& y, const Degradation& f,
                                       const SolverConfig& scfg, const DenseTensor* reference,
                                       const std::filesystem::path& dir) {
    SolvedTensor out;
    const bool color = y.ndim() == 3;
    if (color) {
        ColorCheckpointSink sink = nullptr;
        if (scfg.checkpoint_cadence > 0) {
            sink = [&dir](std::size_t iter, const ColorPipelineParams& p, const DenseTensor& z) {
                save_mlp_params(p.shared_ae, (dir / checkpoint_name("ae", iter)).string());
                save_tensor(z, (dir / checkpoint_name("z", iter)).string());
                save_tensor(color_map_tensor(p), (dir / checkpoint_name("color", iter)).string());
            };
        }
        ColorSolveResult res = color_reconstruct(y, f, scfg, reference, sink);
        save_mlp_params(res.params.shared_ae, (dir / "ae_final.bin").string());
        save_tensor(res.z, (dir / "z_final.bin").string());
        save_tensor(color_map_tensor(res.params), (dir / "color_final.bin").string());
        out.xhat = std::move(res.xhat);
        out.trace = std::move(res.trace);
        out.iterations = res.iterations;
        out.stopped_early = res.stopped_early;
    } else {
        CheckpointSink sink = nullptr;
        if (scfg.checkpoint_cadence > 0) {
            sink = [&dir](std::size_t iter, const MlpParams& p, const DenseTensor& z) {
                save_mlp_params(p, (dir / checkpoint_name("ae", iter)).string());
                save_tensor(z, (dir / checkpoint_name("z", iter)).string());
            };
        }
        SolveResult res = reconstruct(y, f, scfg, reference, sink);
        save_mlp_params(res.params, (dir / "ae_final.bin").string());
        save_tensor(res.z, (dir / "z_final.bin").string());
        out.xhat = std::move(res.xhat);
        out.trace = std::move(res.trace);
        out.iterations = res.iterations;
        out.stopped_early = res.stopped_early;
    }
    write_trace_csv(out.trace, (dir / "trace.csv").string());
    return out;
}

inline void save_observation(const DenseTensor& y, const std::filesystem::path& dir) {
    if (y.ndim() == 1) {
        save_signal_csv(y, (dir / "observed.csv").string());
    } else {
        save_image(clip01(y), (dir / "observed.png").string());
    }
}

/// Span of the first two latent coordinates over the embedded columns of z,
/// padded slightly so montage corners sit just outside the data.
inline std::pair<double, double> latent_span(const MlpParams& params, const DenseTensor& z,
                                             const EmbedShape& tau) {
    const HankelMatrix h = mdt_forward(z, tau);
    const AeCache cache = ae_forward(params, h.values);
    const DenseMatrix& latent = ae_latent(params, cache);
    const Eigen::Index rows = std::min<Eigen::Index>(2, latent.rows());
    double lo = latent(0, 0);
    double hi = latent(0, 0);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < latent.cols(); ++c) {
            lo = std::min(lo, latent(r, c));
            hi = std::max(hi, latent(r, c));
        }
    }
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double margin = 0.05 * (hi - lo);
    return {lo - margin, hi + margin};
}

}  // namespace detail

/// Executes one sweep point end to end: builds the observation and the
/// degradation, runs the solver, scores against the reference when one is
/// known, and writes the run directory's artifacts.
inline RunOutcome execute_run(const RunConfig& cfg, const RunInstance& run,
                              const DenseTensor* input, const DenseTensor* reference_file) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(cfg.out_dir) / run.dir_name;
    fs::create_directories(dir);

    SolverConfig scfg = cfg.solver;
    scfg.bottleneck = run.bottleneck;
    scfg.sigma = run.sigma;
    scfg.seed = cfg.solver.seed + run.index;
    const std::uint64_t corruption_seed = scfg.seed ^ 0x5E12C7A9D3B8F04Bull;

    RunOutcome out;
    out.index = run.index;
    out.dir = run.dir_name;
    const auto t0 = std::chrono::steady_clock::now();

    if (cfg.task != TaskKind::kToyLorenz && input == nullptr) {
        throw std::runtime_error("task requires an input file");
    }

    DenseTensor truth;        // ground truth when known
    const DenseTensor* ref = nullptr;
    DenseTensor y;
    Degradation f = Degradation::identity();
    const bool signal_domain =
        (input != nullptr && input->ndim() == 1) || cfg.task == TaskKind::kToyLorenz;
    if (signal_domain) {
        scfg.tau = EmbedShape{{run.tau}};
    } else {
        scfg.tau = EmbedShape{{run.tau, run.tau}};
    }

    switch (cfg.task) {
        case TaskKind::kComplete: {
            DenseTensor mask;
            if (!cfg.mask_path.empty()) {
                mask = detail::mask_from_file(cfg.mask_path, input->shape());
            } else if (cfg.simulate) {
                mask = detail::sampled_mask(input->shape(), run.missing_rate, cfg.voxel_mask,
                                            corruption_seed);
            } else {
                mask = DenseTensor::zeros(input->shape());
                for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = 1.0;
            }
            if (signal_domain) {
                save_signal_csv(mask, (dir / "mask.csv").string());
            } else {
                save_image(mask_to_image(mask), (dir / "mask.png").string());
            }
            f = Degradation::mask(std::move(mask));
            if (cfg.simulate) {
                truth = *input;
                ref = &truth;
                y = f.apply(detail::add_gaussian_noise(truth, cfg.noise_std, corruption_seed + 1));
            } else {
                ref = reference_file;
                y = f.apply(*input);
            }
            break;
        }
        case TaskKind::kSuperResolve: {
            if (signal_domain) throw std::runtime_error("super-resolve expects an image input");
            const DenseTensor kernel = make_lanczos2_kernel(cfg.factor, 2);
            if (cfg.simulate) {
                truth = *input;
                ref = &truth;
                f = Degradation::downsample(cfg.factor, kernel, truth.shape());
                y = detail::add_gaussian_noise(f.apply(truth), cfg.noise_std, corruption_seed);
            } else {
                std::vector<std::size_t> source = input->shape();
                source[0] *= cfg.factor;
                source[1] *= cfg.factor;
                f = Degradation::downsample(cfg.factor, kernel, source);
                ref = reference_file;
                y = *input;
            }
            break;
        }
        case TaskKind::kDeblur: {
            if (signal_domain) throw std::runtime_error("deblur expects an image input");
            f = Degradation::blur(make_gaussian_kernel(cfg.kernel_sigma, cfg.kernel_radius, 2));
            if (cfg.simulate) {
                truth = *input;
                ref = &truth;
                y = detail::add_gaussian_noise(f.apply(truth), cfg.noise_std, corruption_seed);
            } else {
                ref = reference_file;
                y = *input;
            }
            break;
        }
        case TaskKind::kDenoise: {
            if (signal_domain) throw std::runtime_error("denoise expects an image input");
            if (cfg.simulate) {
                truth = *input;
                ref = &truth;
                y = detail::add_gaussian_noise(truth, cfg.noise_std, corruption_seed);
            } else {
                ref = reference_file;
                y = *input;
            }
            break;
        }
        case TaskKind::kToyLorenz: {
            if (input != nullptr) {
                y = *input;
                DenseTensor mask;
                if (!cfg.mask_path.empty()) {
                    mask = detail::mask_from_file(cfg.mask_path, y.shape());
                } else {
                    mask = DenseTensor::zeros(y.shape());
                    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = 1.0;
                }
                save_signal_csv(mask, (dir / "mask.csv").string());
                f = Degradation::mask(std::move(mask));
                y = f.apply(y);
                ref = reference_file;
            } else {
                truth = lorenz_generate(cfg.lorenz);
                ref = &truth;
                save_signal_csv(truth, (dir / "truth.csv").string());
                CorruptResult corrupted = corrupt_signal(truth, cfg.noise_std, run.missing_rate,
                                                         cfg.occlusions, corruption_seed);
                y = std::move(corrupted.signal);
                save_signal_csv(corrupted.mask, (dir / "mask.csv").string());
                f = Degradation::mask(std::move(corrupted.mask));
            }
            break;
        }
        case TaskKind::kManifoldExport: {
            if (input->ndim() != 2) {
                throw std::runtime_error("manifold-export expects a grayscale image input");
            }
            y = *input;
            ref = &y;
            break;
        }
    }

    detail::save_observation(y, dir);
    const detail::SolvedTensor solved = detail::solve_and_snapshot(y, f, scfg, ref, dir);
    out.iterations = solved.iterations;
    out.stopped_early = solved.stopped_early;

    DenseTensor estimate = solved.xhat;
    if (signal_domain) {
        save_signal_csv(estimate, (dir / "output.csv").string());
    } else {
        estimate = detail::clip01(std::move(estimate));
        save_image(estimate, (dir / "output.png").string());
    }

    if (ref != nullptr) {
        out.mse = detail::mean_squared_error(estimate, *ref);
        out.psnr_db = psnr(estimate, *ref, signal_domain ? 2.0 : 1.0);
        const auto& shape = estimate.shape();
        if (!signal_domain && shape[0] >= 11 && shape[1] >= 11) {
            out.ssim_score = ssim(estimate, *ref);
        }
    }

    if (cfg.task == TaskKind::kManifoldExport) {
        const MlpParams params = load_mlp_params((dir / "ae_final.bin").string());
        const DenseTensor z = load_tensor((dir / "z_final.bin").string());
        const auto [lo, hi] = detail::latent_span(params, z, scfg.tau);
        const DenseMatrix grid =
            make_latent_grid(scfg.bottleneck, cfg.grid_rows, cfg.grid_cols, lo, hi);
        const DenseTensor montage =
            export_patch_manifold(params, grid, cfg.grid_rows, cfg.grid_cols, scfg.tau);
        save_image(detail::clip01(montage), (dir / "montage.png").string());
        out.montage_rows = cfg.grid_rows;
        out.montage_cols = cfg.grid_cols;
    }

    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline nlohmann::json outcome_json(const RunConfig& cfg, const RunInstance& run,
                                   const RunOutcome& out) {
    nlohmann::json j;
    j["task"] = task_name(cfg.task);
    j["run"] = run.dir_name;
    j["input"] = cfg.input;
    j["tau"] = run.tau;
    j["bottleneck"] = run.bottleneck;
    j["sigma"] = run.sigma;
    j["missing_rate"] = run.missing_rate;
    j["seed"] = cfg.solver.seed + run.index;
    j["iterations"] = out.iterations;
    j["stopped_early"] = out.stopped_early;
    j["seconds"] = out.seconds;
    j["mse"] = std::isnan(out.mse) ? nlohmann::json() : nlohmann::json(out.mse);
    j["psnr_db"] = std::isnan(out.psnr_db) ? nlohmann::json() : nlohmann::json(out.psnr_db);
    j["ssim"] = std::isnan(out.ssim_score) ? nlohmann::json() : nlohmann::json(out.ssim_score);
    if (cfg.task == TaskKind::kManifoldExport) {
        j["montage_rows"] = out.montage_rows;
        j["montage_cols"] = out.montage_cols;
    }
    return j;
}

struct TaskResult {
    std::vector<RunOutcome> outcomes;
    std::string report_path;
};

/// Expands the sweep grid and executes every run, fanning out over a worker
/// pool when more than one thread is configured. Report lines are appended
/// through a single serialized writer as runs finish.
inline TaskResult run_task(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    std::optional<DenseTensor> input;
    if (!cfg.input.empty()) input = detail::load_input_file(cfg.input);
    std::optional<DenseTensor> reference;
    if (!cfg.reference.empty()) reference = detail::load_input_file(cfg.reference);

    const std::vector<RunInstance> runs = expand_runs(cfg);
    fs::create_directories(cfg.out_dir);
    const fs::path report_path = fs::path(cfg.out_dir) / cfg.report_name;
    std::ofstream report(report_path, std::ios::app);
    if (!report) throw std::runtime_error("run_task: cannot open report " + report_path.string());

    TaskResult result;
    result.outcomes.resize(runs.size());
    result.report_path = report_path.string();

    std::mutex write_mutex;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure = nullptr;

    const auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= runs.size()) return;
            {
                std::lock_guard<std::mutex> lock(write_mutex);
                if (failure) return;
            }
            try {
                RunOutcome out = execute_run(cfg, runs[i], input ? &*input : nullptr,
                                             reference ? &*reference : nullptr);
                std::lock_guard<std::mutex> lock(write_mutex);
                report << outcome_json(cfg, runs[i], out).dump() << "\n";
                report.flush();
                result.outcomes[i] = std::move(out);
            } catch (...) {
                std::lock_guard<std::mutex> lock(write_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };

    const std::size_t pool = std::min<std::size_t>(cfg.threads, runs.size());
    if (pool <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(pool);
        for (std::size_t i = 0; i < pool; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return result;
}

}  // namespace mmes
