#pragma once

#include <mmes/solver.hpp>
#include <mmes/toy_dynamics.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mmes {

/// Configuration problems exit with status 2; runtime problems with 1.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class TaskKind { kComplete, kSuperResolve, kDeblur, kDenoise, kToyLorenz, kManifoldExport };

inline const char* task_name(TaskKind task) {
    switch (task) {
        case TaskKind::kComplete: return "complete";
        case TaskKind::kSuperResolve: return "super-resolve";
        case TaskKind::kDeblur: return "deblur";
        case TaskKind::kDenoise: return "denoise";
        case TaskKind::kToyLorenz: return "toy-lorenz";
        case TaskKind::kManifoldExport: return "manifold-export";
    }
    return "?";
}

inline TaskKind parse_task_name(const std::string& name) {
    for (TaskKind task : {TaskKind::kComplete, TaskKind::kSuperResolve, TaskKind::kDeblur,
                          TaskKind::kDenoise, TaskKind::kToyLorenz, TaskKind::kManifoldExport}) {
        if (name == task_name(task)) return task;
    }
    throw ConfigError("unknown task: " + name);
}

/// One experiment description: task plumbing plus solver settings. tau,
/// bottleneck, sigma and missing_rate are lists; their cartesian product
/// expands into independent runs.
struct RunConfig {
    TaskKind task = TaskKind::kComplete;
    std::string input;
    std::string reference;
    std::string mask_path;
    std::string out_dir = "runs";
    std::string report_name = "report.jsonl";
    std::size_t threads = 1;
    bool simulate = true;   // corrupt the input per the task, keeping it as truth
    bool voxel_mask = false;  // color masks drop whole pixels unless set
    double noise_std = 0.0;   // observation noise added when simulating

    std::size_t factor = 4;        // super-resolve
    double kernel_sigma = 2.0;     // deblur point-spread width
    std::size_t kernel_radius = 4;

    LorenzConfig lorenz;
    std::vector<std::pair<std::size_t, std::size_t>> occlusions;  // (start, length)

    std::size_t grid_rows = 12;  // manifold-export montage tiling
    std::size_t grid_cols = 12;

    std::vector<std::size_t> tau;
    std::vector<std::size_t> bottleneck;
    std::vector<double> sigma;
    std::vector<double> missing_rate;
    SolverConfig solver;  // shared scalars; tau/bottleneck/sigma filled per run
};

namespace detail {

inline std::string trim(const std::string& s) {
    const std::size_t begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const std::size_t end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

inline std::vector<std::string> split_list(const std::string& value, char sep) {
    std::vector<std::string> out;
    std::size_t begin = 0;
    while (true) {
        const std::size_t pos = value.find(sep, begin);
        out.push_back(trim(value.substr(begin, pos - begin)));
        if (pos == std::string::npos) break;
        begin = pos + 1;
    }
    return out;
}

inline double config_double(const std::string& key, const std::string& value) {
    const std::string body = trim(value);
    char* tail = nullptr;
    const double v = std::strtod(body.c_str(), &tail);
    if (body.empty() || tail != body.c_str() + body.size()) {
        throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
    }
    return v;
}

inline std::size_t config_size(const std::string& key, const std::string& value) {
    const std::string body = trim(value);
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(body, &pos);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    if (pos != body.size() || body[0] == '-') {
        throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    return static_cast<std::size_t>(v);
}

inline bool config_bool(const std::string& key, const std::string& value) {
    const std::string body = trim(value);
    if (body == "true" || body == "1") return true;
    if (body == "false" || body == "0") return false;
    throw ConfigError("key '" + key + "' expects true or false, got '" + value + "'");
}

/// Raw key/value store with consumption tracking, so leftover keys can be
/// reported as unknown.
class KeyStore {
  public:
    void insert(const std::string& key, const std::string& value) {
        if (entries_.count(key)) throw ConfigError("duplicate key '" + key + "'");
        entries_[key] = value;
    }

    bool take(const std::string& key, std::string& value) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return false;
        value = it->second;
        entries_.erase(it);
        return true;
    }

    void take_string(const std::string& key, std::string& slot) {
        std::string v;
        if (take(key, v)) slot = v;
    }
    void take_double(const std::string& key, double& slot) {
        std::string v;
        if (take(key, v)) slot = config_double(key, v);
    }
    void take_size(const std::string& key, std::size_t& slot) {
        std::string v;
        if (take(key, v)) slot = config_size(key, v);
    }
    void take_bool(const std::string& key, bool& slot) {
        std::string v;
        if (take(key, v)) slot = config_bool(key, v);
    }
    void take_seed(const std::string& key, std::uint64_t& slot) {
        std::string v;
        if (take(key, v)) slot = static_cast<std::uint64_t>(config_size(key, v));
    }
    void take_size_list(const std::string& key, std::vector<std::size_t>& slot) {
        std::string v;
        if (!take(key, v)) return;
        slot.clear();
        for (const auto& piece : split_list(v, ';')) slot.push_back(config_size(key, piece));
    }
    void take_double_list(const std::string& key, std::vector<double>& slot) {
        std::string v;
        if (!take(key, v)) return;
        slot.clear();
        for (const auto& piece : split_list(v, ';')) slot.push_back(config_double(key, piece));
    }

    void finish() const {
        if (entries_.empty()) return;
        std::string names;
        for (const auto& [key, value] : entries_) {
            if (!names.empty()) names += ", ";
            names += "'" + key + "'";
        }
        throw ConfigError("unknown key(s): " + names);
    }

  private:
    std::map<std::string, std::string> entries_;
};

inline void read_key_values(std::istream& is, KeyStore& store) {
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string body = trim(line);
        if (body.empty() || body[0] == '#') continue;
        if (body.front() == '[') {
            if (body.back() != ']') {
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
            }
            section = trim(body.substr(1, body.size() - 2));
            if (section != "run" && section != "solver") {
                throw ConfigError("unknown section [" + section + "]");
            }
            if (section == "run") section.clear();
            continue;
        }
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        }
        store.insert(section.empty() ? key : section + "." + key, value);
    }
}

inline std::vector<std::pair<std::size_t, std::size_t>> parse_occlusions(const std::string& value) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (trim(value).empty()) return out;
    for (const auto& piece : split_list(value, ',')) {
        const std::size_t colon = piece.find(':');
        if (colon == std::string::npos) {
            throw ConfigError("key 'occlusions' expects start:length pairs, got '" + piece + "'");
        }
        out.emplace_back(config_size("occlusions", piece.substr(0, colon)),
                         config_size("occlusions", piece.substr(colon + 1)));
    }
    return out;
}

/// Task defaults: completion tau=6, r=4, sigma=0.05; super-resolution
/// tau=6, sigma=0.1 with r=32 at 4x and r=16 at 8x; deconvolution tau=4,
/// r=16, sigma=0.01 with a 32x-wide hidden layer; denoising tau=6, r=32,
/// sigma=0.05 under the capped lambda rule; the Lorenz toy embeds 64-wide
/// windows onto a 3-dimensional latent manifold.
inline void apply_task_defaults(RunConfig& cfg) {
    switch (cfg.task) {
        case TaskKind::kComplete:
            cfg.tau = {6};
            cfg.bottleneck = {4};
            cfg.sigma = {0.05};
            cfg.missing_rate = {0.5};
            break;
        case TaskKind::kSuperResolve:
            cfg.tau = {6};
            cfg.bottleneck = {cfg.factor >= 8 ? std::size_t{16} : std::size_t{32}};
            cfg.sigma = {0.1};
            cfg.missing_rate = {0.0};
            break;
        case TaskKind::kDeblur:
            cfg.tau = {4};
            cfg.bottleneck = {16};
            cfg.sigma = {0.01};
            cfg.missing_rate = {0.0};
            cfg.solver.hidden_multiplier = 32;
            break;
        case TaskKind::kDenoise:
            cfg.tau = {6};
            cfg.bottleneck = {32};
            cfg.sigma = {0.05};
            cfg.missing_rate = {0.0};
            cfg.solver.lambda_cap_mode = true;
            cfg.noise_std = 0.1;
            break;
        case TaskKind::kToyLorenz:
            cfg.tau = {64};
            cfg.bottleneck = {3};
            cfg.sigma = {0.05};
            cfg.missing_rate = {0.1};
            cfg.noise_std = 0.05;
            break;
        case TaskKind::kManifoldExport:
            cfg.tau = {8};
            cfg.bottleneck = {2};
            cfg.sigma = {0.05};
            cfg.missing_rate = {0.0};
            break;
    }
}

}  // namespace detail

/// Parses `key = value` text with optional [run] / [solver] sections into a
/// RunConfig. Unknown keys, malformed values and task mismatches throw
/// ConfigError. A semicolon turns tau / bottleneck / sigma / missing_rate
/// into sweep lists.
inline RunConfig parse_run_config(std::istream& is, TaskKind task) {
    detail::KeyStore store;
    detail::read_key_values(is, store);

    RunConfig cfg;
    cfg.task = task;
    {
        std::string named;
        if (store.take("task", named) && parse_task_name(named) != task) {
            throw ConfigError("config names task '" + named + "' but '" + task_name(task) +
                              "' was requested");
        }
    }
    detail::apply_task_defaults(cfg);

    store.take_string("input", cfg.input);
    store.take_string("reference", cfg.reference);
    store.take_string("mask", cfg.mask_path);
    store.take_string("out", cfg.out_dir);
    store.take_string("report", cfg.report_name);
    store.take_seed("seed", cfg.solver.seed);
    store.take_size("threads", cfg.threads);
    store.take_bool("simulate", cfg.simulate);
    store.take_bool("voxel_mask", cfg.voxel_mask);
    store.take_double("noise_std", cfg.noise_std);
    {
        std::size_t factor = cfg.factor;
        const bool had_factor = [&] {
            std::string v;
            if (!store.take("factor", v)) return false;
            factor = detail::config_size("factor", v);
            return true;
        }();
        if (had_factor) {
            cfg.factor = factor;
            if (cfg.task == TaskKind::kSuperResolve) {
                cfg.bottleneck = {cfg.factor >= 8 ? std::size_t{16} : std::size_t{32}};
            }
        }
    }
    store.take_double("kernel_sigma", cfg.kernel_sigma);
    store.take_size("kernel_radius", cfg.kernel_radius);
    {
        std::string v;
        if (store.take("occlusions", v)) cfg.occlusions = detail::parse_occlusions(v);
    }
    store.take_size("steps", cfg.lorenz.steps);
    store.take_size("burn_in", cfg.lorenz.burn_in);
    store.take_double("dt", cfg.lorenz.dt);
    store.take_size("component", cfg.lorenz.component);
    store.take_size("grid_rows", cfg.grid_rows);
    store.take_size("grid_cols", cfg.grid_cols);

    store.take_size_list("solver.tau", cfg.tau);
    store.take_size_list("solver.bottleneck", cfg.bottleneck);
    store.take_double_list("solver.sigma", cfg.sigma);
    store.take_double_list("missing_rate", cfg.missing_rate);
    store.take_size("solver.hidden_multiplier", cfg.solver.hidden_multiplier);
    store.take_bool("solver.linear_mode", cfg.solver.linear_mode);
    store.take_bool("solver.freeze_color_transform", cfg.solver.freeze_color_transform);
    store.take_double("solver.lambda0", cfg.solver.lambda0);
    store.take_double("solver.lambda_up", cfg.solver.lambda_up);
    store.take_double("solver.lambda_down", cfg.solver.lambda_down);
    store.take_size("solver.lambda_cadence", cfg.solver.lambda_cadence);
    store.take_bool("solver.lambda_cap_mode", cfg.solver.lambda_cap_mode);
    store.take_double("solver.ae_loss_ceiling", cfg.solver.ae_loss_ceiling);
    store.take_double("solver.lr0", cfg.solver.lr0);
    store.take_double("solver.lr_decay", cfg.solver.lr_decay);
    store.take_size("solver.lr_decay_every", cfg.solver.lr_decay_every);
    store.take_size("solver.max_iters", cfg.solver.max_iters);
    store.take_size("solver.psnr_cadence", cfg.solver.psnr_cadence);
    store.take_size("solver.checkpoint_cadence", cfg.solver.checkpoint_cadence);
    store.take_double("solver.stop_at_mse", cfg.solver.stop_at_mse);

    store.finish();

    if (cfg.task != TaskKind::kToyLorenz && cfg.input.empty()) {
        throw ConfigError("task '" + std::string(task_name(cfg.task)) + "' requires an input path");
    }
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
    if (cfg.tau.empty() || cfg.bottleneck.empty() || cfg.sigma.empty() || cfg.missing_rate.empty()) {
        throw ConfigError("sweep lists must not be empty");
    }
    for (std::size_t t : cfg.tau) {
        if (t < 1) throw ConfigError("tau entries must be >= 1");
    }
    for (std::size_t r : cfg.bottleneck) {
        if (r < 1) throw ConfigError("bottleneck entries must be >= 1");
    }
    for (double s : cfg.sigma) {
        if (s < 0.0) throw ConfigError("sigma entries must be >= 0");
    }
    for (double rho : cfg.missing_rate) {
        if (rho < 0.0 || rho > 1.0) throw ConfigError("missing_rate entries must lie in [0, 1]");
    }
    if (cfg.noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
    if (cfg.task == TaskKind::kSuperResolve && cfg.factor < 2) {
        throw ConfigError("factor must be >= 2");
    }
    if (cfg.task == TaskKind::kDeblur && !(cfg.kernel_sigma > 0.0)) {
        throw ConfigError("kernel_sigma must be > 0");
    }
    if (cfg.task == TaskKind::kManifoldExport && (cfg.grid_rows < 1 || cfg.grid_cols < 1)) {
        throw ConfigError("montage grid must be at least 1x1");
    }
    if (cfg.task == TaskKind::kToyLorenz) {
        try {
            cfg.lorenz.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path, TaskKind task) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    return parse_run_config(is, task);
}

}  // namespace mmes
