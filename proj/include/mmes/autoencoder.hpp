#pragma once

#include <mmes/dense_tensor.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmes {

enum class Activation : std::uint8_t { kNone = 0, kLeakyRelu = 1 };

struct MlpLayer {
    DenseMatrix weight;     // fan_out x fan_in
    Eigen::VectorXd bias;   // fan_out
    Activation activation = Activation::kNone;
};

/// Column-wise multilayer perceptron applied independently to every column
/// of a D x T matrix. The layer-size chain is palindromic with the
/// bottleneck in the middle; hidden layers use LeakyReLU, the final layer is
/// linear. Linear mode drops every activation.
struct MlpParams {
    std::vector<MlpLayer> layers;
    double leaky_slope = 0.2;

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d;
        if (layers.empty()) return d;
        d.push_back(static_cast<std::size_t>(layers.front().weight.cols()));
        for (const auto& l : layers) d.push_back(static_cast<std::size_t>(l.weight.rows()));
        return d;
    }

    std::size_t input_dim() const { return static_cast<std::size_t>(layers.front().weight.cols()); }
    std::size_t bottleneck_dim() const {
        return static_cast<std::size_t>(layers[layers.size() / 2 - 1].weight.rows());
    }
    /// Index into the forward cache where the latent block lives.
    std::size_t encoder_depth() const { return layers.size() / 2; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) {
            n += static_cast<std::size_t>(l.weight.size()) + static_cast<std::size_t>(l.bias.size());
        }
        return n;
    }
};

/// [D, c*D, r, c*D, D]
inline std::vector<std::size_t> hidden_chain(std::size_t input_dim, std::size_t bottleneck,
                                             std::size_t hidden_multiplier) {
    return {input_dim, hidden_multiplier * input_dim, bottleneck, hidden_multiplier * input_dim,
            input_dim};
}

inline void validate_chain(const std::vector<std::size_t>& dims, bool linear_mode) {
    if (dims.size() < 3 || dims.size() % 2 == 0) {
        throw std::invalid_argument("mlp chain: need an odd number of sizes, at least 3");
    }
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("mlp chain: zero layer size");
    }
    const std::size_t half = dims.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
        if (dims[i] != dims[dims.size() - 1 - i]) {
            throw std::invalid_argument("mlp chain: sizes must be symmetric around the bottleneck");
        }
    }
    const std::size_t r = dims[half];
    if (linear_mode) {
        if (r > dims[0]) {
            throw std::invalid_argument("mlp chain: bottleneck wider than the input");
        }
    } else if (r >= dims[0]) {
        throw std::invalid_argument("mlp chain: bottleneck must be narrower than the input");
    }
    for (std::size_t i = 1; i < half; ++i) {
        if (dims[i] < r) {
            throw std::invalid_argument("mlp chain: hidden size below the bottleneck");
        }
    }
}

/// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// Draw order is fixed (layers in order, weights column-major) so a seed
/// pins the parameters bitwise.
inline MlpParams init_params(const std::vector<std::size_t>& dims, std::uint64_t seed,
                             bool linear_mode = false, double leaky_slope = 0.2) {
    validate_chain(dims, linear_mode);
    std::mt19937_64 rng(seed);
    MlpParams p;
    p.leaky_slope = leaky_slope;
    const std::size_t n_layers = dims.size() - 1;
    p.layers.resize(n_layers);
    for (std::size_t i = 0; i < n_layers; ++i) {
        const auto fan_in = static_cast<Eigen::Index>(dims[i]);
        const auto fan_out = static_cast<Eigen::Index>(dims[i + 1]);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        MlpLayer& l = p.layers[i];
        l.weight.resize(fan_out, fan_in);
        for (Eigen::Index c = 0; c < fan_in; ++c) {
            for (Eigen::Index r = 0; r < fan_out; ++r) l.weight(r, c) = dist(rng);
        }
        l.bias = Eigen::VectorXd::Zero(fan_out);
        const bool last = (i + 1 == n_layers);
        l.activation = (linear_mode || last) ? Activation::kNone : Activation::kLeakyRelu;
    }
    return p;
}

/// Post-activation values of every layer; acts[0] is the input block,
/// acts.back() the reconstruction. LeakyReLU derivatives are recoverable
/// from the outputs (the slope is positive, so the sign survives), which is
/// why no pre-activation copies are kept.
struct AeCache {
    std::vector<DenseMatrix> acts;
};

inline const DenseMatrix& ae_output(const AeCache& cache) { return cache.acts.back(); }

inline const DenseMatrix& ae_latent(const MlpParams& p, const AeCache& cache) {
    return cache.acts[p.encoder_depth()];
}

inline AeCache ae_forward(const MlpParams& p, const DenseMatrix& input) {
    if (p.layers.empty()) throw std::invalid_argument("ae_forward: empty parameter set");
    if (input.rows() != static_cast<Eigen::Index>(p.input_dim())) {
        throw std::invalid_argument("ae_forward: input row count does not match the chain");
    }
    AeCache cache;
    cache.acts.reserve(p.layers.size() + 1);
    cache.acts.push_back(input);
    for (const auto& l : p.layers) {
        DenseMatrix z = (l.weight * cache.acts.back()).colwise() + l.bias;
        if (l.activation == Activation::kLeakyRelu) {
            z = z.unaryExpr([slope = p.leaky_slope](double v) { return v > 0.0 ? v : slope * v; });
        }
        cache.acts.push_back(std::move(z));
    }
    return cache;
}

struct AeGrads {
    std::vector<DenseMatrix> weight;
    std::vector<Eigen::VectorXd> bias;
    DenseMatrix input;
};

/// Backpropagates an upstream gradient (w.r.t. the reconstruction block)
/// through the cached forward pass.
inline AeGrads ae_backward(const MlpParams& p, const AeCache& cache, const DenseMatrix& upstream) {
    const std::size_t n_layers = p.layers.size();
    if (cache.acts.size() != n_layers + 1) {
        throw std::invalid_argument("ae_backward: cache does not match the parameter set");
    }
    if (upstream.rows() != cache.acts.back().rows() || upstream.cols() != cache.acts.back().cols()) {
        throw std::invalid_argument("ae_backward: upstream gradient shape mismatch");
    }
    AeGrads g;
    g.weight.resize(n_layers);
    g.bias.resize(n_layers);
    DenseMatrix delta = upstream;
    for (std::size_t i = n_layers; i-- > 0;) {
        const MlpLayer& l = p.layers[i];
        if (l.activation == Activation::kLeakyRelu) {
            const DenseMatrix& out = cache.acts[i + 1];
            delta = delta.binaryExpr(out, [slope = p.leaky_slope](double d, double o) {
                return o > 0.0 ? d : slope * d;
            });
        }
        g.weight[i].noalias() = delta * cache.acts[i].transpose();
        g.bias[i] = delta.rowwise().sum();
        if (i > 0) {
            delta = l.weight.transpose() * delta;
        } else {
            g.input.noalias() = l.weight.transpose() * delta;
        }
    }
    return g;
}

/// Decoder half only: latent block (r x K) to patch block (D x K).
inline DenseMatrix decode_latent(const MlpParams& p, const DenseMatrix& latent) {
    if (latent.rows() != static_cast<Eigen::Index>(p.bottleneck_dim())) {
        throw std::invalid_argument("decode_latent: latent row count does not match the bottleneck");
    }
    DenseMatrix x = latent;
    for (std::size_t i = p.encoder_depth(); i < p.layers.size(); ++i) {
        const MlpLayer& l = p.layers[i];
        x = (l.weight * x).colwise() + l.bias;
        if (l.activation == Activation::kLeakyRelu) {
            x = x.unaryExpr([slope = p.leaky_slope](double v) { return v > 0.0 ? v : slope * v; });
        }
    }
    return x;
}

/// Adam with bias correction. One state object owns one moment pair per
/// parameter buffer ("slot"); the step counter is shared so every slot sees
/// the same bias correction within an optimizer step.
struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamState {
public:
    AdamState() = default;
    explicit AdamState(AdamConfig config) : config_(config) {}

    /// Registers a parameter buffer; returns its slot id.
    std::size_t add_slot(std::size_t size) {
        m_.emplace_back(size, 0.0);
        v_.emplace_back(size, 0.0);
        return m_.size() - 1;
    }

    void begin_step() { ++step_; }
    std::size_t step_count() const { return step_; }
    std::size_t slot_count() const { return m_.size(); }
    const AdamConfig& config() const { return config_; }

    void update(std::size_t slot, double lr, double* params, const double* grads, std::size_t size) {
        if (slot >= m_.size()) throw std::invalid_argument("AdamState::update: unknown slot");
        if (step_ == 0) throw std::logic_error("AdamState::update: begin_step was never called");
        std::vector<double>& m = m_[slot];
        std::vector<double>& v = v_[slot];
        if (m.size() != size) throw std::invalid_argument("AdamState::update: slot size mismatch");
        for (std::size_t i = 0; i < size; ++i) {
            if (!std::isfinite(grads[i])) {
                throw std::runtime_error("AdamState::update: non-finite gradient in slot " +
                                         std::to_string(slot) + " at index " + std::to_string(i));
            }
        }
        const double b1 = config_.beta1;
        const double b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
        for (std::size_t i = 0; i < size; ++i) {
            const double g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            params[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }

private:
    AdamConfig config_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t step_ = 0;
};

/// Single-buffer convenience: advances the step counter and updates slot 0.
inline void adam_step(AdamState& state, double lr, double* params, const double* grads,
                      std::size_t size) {
    state.begin_step();
    state.update(0, lr, params, grads, size);
}

/// Deterministic standard-normal source for the denoising perturbations.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

    double next() { return dist_(rng_); }

    void fill(DenseMatrix& e, double sigma) {
        for (Eigen::Index c = 0; c < e.cols(); ++c) {
            for (Eigen::Index r = 0; r < e.rows(); ++r) e(r, c) = sigma * dist_(rng_);
        }
    }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

/// h + sigma * E with E ~ N(0, I) elementwise; sigma = 0 returns h without
/// consuming any draws.
inline DenseMatrix add_noise(const DenseMatrix& h, double sigma, GaussianStream& stream) {
    if (sigma < 0.0) throw std::invalid_argument("add_noise: sigma must be >= 0");
    if (sigma == 0.0) return h;
    DenseMatrix out(h.rows(), h.cols());
    stream.fill(out, sigma);
    out += h;
    return out;
}

/// Latent grid spanning [lo, hi] in the first two latent coordinates (zeros
/// elsewhere); column i*cols + j is grid cell (i, j).
inline DenseMatrix make_latent_grid(std::size_t bottleneck, std::size_t rows, std::size_t cols,
                                    double lo, double hi) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("make_latent_grid: empty grid");
    DenseMatrix grid = DenseMatrix::Zero(static_cast<Eigen::Index>(bottleneck),
                                         static_cast<Eigen::Index>(rows * cols));
    auto coord = [lo, hi](std::size_t k, std::size_t count) {
        if (count == 1) return 0.5 * (lo + hi);
        return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
    };
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const auto c = static_cast<Eigen::Index>(i * cols + j);
            grid(0, c) = coord(i, rows);
            if (bottleneck > 1) grid(1, c) = coord(j, cols);
        }
    }
    return grid;
}

/// Decodes every grid column and tiles the patches into a
/// (rows*tau_1) x (cols*tau_2) image.
inline DenseTensor export_patch_manifold(const MlpParams& p, const DenseMatrix& grid,
                                         std::size_t rows, std::size_t cols, const EmbedShape& tau) {
    if (tau.tau.size() != 2) {
        throw std::invalid_argument("export_patch_manifold: montage needs a two-mode window");
    }
    if (grid.cols() != static_cast<Eigen::Index>(rows * cols)) {
        throw std::invalid_argument("export_patch_manifold: grid column count does not match rows*cols");
    }
    if (tau.patch_size() != static_cast<std::size_t>(p.layers.back().weight.rows())) {
        throw std::invalid_argument("export_patch_manifold: window size does not match the decoder");
    }
    const DenseMatrix patches = decode_latent(p, grid);
    const std::size_t t1 = tau.tau[0];
    const std::size_t t2 = tau.tau[1];
    DenseTensor montage = DenseTensor::zeros({rows * t1, cols * t2});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const auto col = static_cast<Eigen::Index>(i * cols + j);
            for (std::size_t a = 0; a < t1; ++a) {
                for (std::size_t b = 0; b < t2; ++b) {
                    montage.at({i * t1 + a, j * t2 + b}) =
                        patches(static_cast<Eigen::Index>(a * t2 + b), col);
                }
            }
        }
    }
    return montage;
}

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline double read_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace detail

/// Binary little-endian checkpoint: magic, slope, layer count, then per
/// layer rows, cols, activation tag, column-major weights, bias.
inline void save_mlp_params(const MlpParams& p, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_mlp_params: cannot open " + path);
    os.write("MMESAE01", 8);
    detail::write_f64(os, p.leaky_slope);
    detail::write_u32(os, static_cast<std::uint32_t>(p.layers.size()));
    for (const auto& l : p.layers) {
        detail::write_u32(os, static_cast<std::uint32_t>(l.weight.rows()));
        detail::write_u32(os, static_cast<std::uint32_t>(l.weight.cols()));
        detail::write_u32(os, static_cast<std::uint32_t>(l.activation));
        os.write(reinterpret_cast<const char*>(l.weight.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.weight.size())));
        os.write(reinterpret_cast<const char*>(l.bias.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.bias.size())));
    }
    if (!os) throw std::runtime_error("save_mlp_params: write failed for " + path);
}

inline MlpParams load_mlp_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_mlp_params: cannot open " + path);
    char magic[8] = {};
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "MMESAE01", 8) != 0) {
        throw std::runtime_error("load_mlp_params: bad magic in " + path);
    }
    MlpParams p;
    p.leaky_slope = detail::read_f64(is);
    const std::uint32_t n_layers = detail::read_u32(is);
    if (!is || n_layers == 0 || n_layers > 1024) {
        throw std::runtime_error("load_mlp_params: corrupt header in " + path);
    }
    p.layers.resize(n_layers);
    for (auto& l : p.layers) {
        const std::uint32_t rows = detail::read_u32(is);
        const std::uint32_t cols = detail::read_u32(is);
        const std::uint32_t act = detail::read_u32(is);
        if (!is || rows == 0 || cols == 0 || act > 1) {
            throw std::runtime_error("load_mlp_params: corrupt layer header in " + path);
        }
        l.weight.resize(rows, cols);
        l.bias.resize(rows);
        l.activation = static_cast<Activation>(act);
        is.read(reinterpret_cast<char*>(l.weight.data()),
                static_cast<std::streamsize>(sizeof(double) * rows * cols));
        is.read(reinterpret_cast<char*>(l.bias.data()), static_cast<std::streamsize>(sizeof(double) * rows));
        if (!is) throw std::runtime_error("load_mlp_params: truncated file " + path);
    }
    return p;
}

}  // namespace mmes
