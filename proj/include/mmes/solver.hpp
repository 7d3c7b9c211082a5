#pragma once

#include <mmes/autoencoder.hpp>
#include <mmes/degradation.hpp>
#include <mmes/delay_embedding.hpp>
#include <mmes/dense_tensor.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmes {

/// Hyperparameters of the joint latent-tensor / auto-encoder fit. Defaults
/// follow the reference schedule: lambda starts at 5 and is nudged up or
/// down every 10 iterations, the learning rate starts at 0.01 and decays by
/// 0.98 every 100 iterations.
struct SolverConfig {
    EmbedShape tau;
    std::size_t bottleneck = 4;  // r
    double sigma = 0.05;
    std::size_t hidden_multiplier = 8;  // hidden width = multiplier * patch size
    bool linear_mode = false;
    // Color pipeline only: keep the per-pixel color map at identity/zero.
    bool freeze_color_transform = false;

    double lambda0 = 5.0;
    double lambda_up = 1.1;
    double lambda_down = 0.99;
    std::size_t lambda_cadence = 10;
    // Alternative lambda rule: raise lambda only while the auto-encoding
    // loss sits above a fixed ceiling, hold otherwise.
    bool lambda_cap_mode = false;
    double ae_loss_ceiling = 1.0;

    double lr0 = 0.01;
    double lr_decay = 0.98;
    std::size_t lr_decay_every = 100;
    std::size_t max_iters = 20000;

    std::uint64_t seed = 0;
    std::size_t psnr_cadence = 10;
    std::size_t checkpoint_cadence = 0;  // 0 disables periodic checkpoints
    double stop_at_mse = 0.0;            // 0 disables early stopping
    AdamConfig adam;

    std::vector<std::size_t> chain(std::size_t input_dim) const {
        if (linear_mode) return {input_dim, bottleneck, input_dim};
        return hidden_chain(input_dim, bottleneck, hidden_multiplier);
    }

    void validate(const std::vector<std::size_t>& z_shape) const {
        tau.validate_for(z_shape);
        const std::size_t d = tau.patch_size();
        if (bottleneck < 1) throw std::invalid_argument("SolverConfig: bottleneck must be >= 1");
        if (linear_mode ? bottleneck > d : bottleneck >= d) {
            throw std::invalid_argument("SolverConfig: bottleneck must be narrower than the window");
        }
        if (!linear_mode && hidden_multiplier < 1) {
            throw std::invalid_argument("SolverConfig: hidden_multiplier must be >= 1");
        }
        if (sigma < 0.0) throw std::invalid_argument("SolverConfig: sigma must be >= 0");
        if (!(lambda0 > 0.0)) throw std::invalid_argument("SolverConfig: lambda0 must be > 0");
        if (lambda_up < 1.0) throw std::invalid_argument("SolverConfig: lambda_up must be >= 1");
        if (!(lambda_down > 0.0) || lambda_down > 1.0) {
            throw std::invalid_argument("SolverConfig: lambda_down must be in (0, 1]");
        }
        if (lambda_cadence < 1) throw std::invalid_argument("SolverConfig: lambda_cadence must be >= 1");
        if (lambda_cap_mode && !(ae_loss_ceiling > 0.0)) {
            throw std::invalid_argument("SolverConfig: ae_loss_ceiling must be > 0");
        }
        if (!(lr0 > 0.0)) throw std::invalid_argument("SolverConfig: lr0 must be > 0");
        if (!(lr_decay > 0.0) || lr_decay > 1.0) {
            throw std::invalid_argument("SolverConfig: lr_decay must be in (0, 1]");
        }
        if (lr_decay_every < 1) throw std::invalid_argument("SolverConfig: lr_decay_every must be >= 1");
        if (max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be >= 1");
        if (psnr_cadence < 1) throw std::invalid_argument("SolverConfig: psnr_cadence must be >= 1");
        if (stop_at_mse < 0.0) throw std::invalid_argument("SolverConfig: stop_at_mse must be >= 0");
    }
};

struct TraceRecord {
    std::size_t iter = 0;
    double l_rec = 0.0;
    double l_ae = 0.0;
    double lambda = 0.0;
    double lr = 0.0;
    double psnr = std::numeric_limits<double>::quiet_NaN();
};

/// Raised when a loss or gradient turns non-finite; carries the trace
/// accumulated up to the failing iteration.
class SolverDivergence : public std::runtime_error {
public:
    SolverDivergence(const std::string& what, std::vector<TraceRecord> trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}

    const std::vector<TraceRecord>& trace() const { return trace_; }

private:
    std::vector<TraceRecord> trace_;
};

/// Every intermediate of one loss evaluation that the backward pass reuses.
struct LossCache {
    HankelMatrix h;
    AeCache ae;
    DenseTensor xhat;
    DenseTensor residual;  // y - f(xhat)
    double l_rec = 0.0;
    double l_ae = 0.0;
};

/// L_ae = ||H - A(H + E)||_F^2 and L_rec = (1/D) ||y - f(pinv(A))||_F^2,
/// where A runs the auto-encoder on the noisy patch matrix and D is the
/// window size. `noise` is the pre-scaled perturbation sigma * E.
inline LossCache compute_losses(const DenseTensor& z, const MlpParams& params, const DenseTensor& y,
                                const Degradation& f, const SolverConfig& cfg,
                                const DenseMatrix& noise) {
    LossCache cache;
    cache.h = mdt_forward(z, cfg.tau);
    if (noise.rows() != cache.h.values.rows() || noise.cols() != cache.h.values.cols()) {
        throw std::invalid_argument("compute_losses: noise shape does not match the patch matrix");
    }
    const DenseMatrix noisy = cache.h.values + noise;
    cache.ae = ae_forward(params, noisy);
    const DenseMatrix& decoded = ae_output(cache.ae);
    cache.l_ae = (cache.h.values - decoded).squaredNorm();

    cache.xhat = mdt_pinv(decoded, z.shape(), cfg.tau);
    const DenseTensor fx = f.apply(cache.xhat);
    if (fx.shape() != y.shape()) {
        throw std::invalid_argument("compute_losses: observation shape mismatch");
    }
    cache.residual = DenseTensor::zeros(y.shape());
    double sq = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - fx[i];
        cache.residual[i] = r;
        sq += r * r;
    }
    cache.l_rec = sq / static_cast<double>(cfg.tau.patch_size());
    return cache;
}

struct TotalGrads {
    DenseTensor z;
    AeGrads ae;
};

/// Gradient of L_rec + lambda * L_ae with respect to the latent tensor and
/// every auto-encoder parameter, reusing one backward pass: the decoded
/// block receives both the reconstruction pull (through the embedding
/// pseudo-inverse) and the auto-encoding pull, and the patch matrix
/// receives the direct term plus whatever flows back through the encoder.
inline TotalGrads backward_total(const DenseTensor& z, const MlpParams& params, const Degradation& f,
                                 const SolverConfig& cfg, const LossCache& cache, double lambda) {
    const DenseMatrix diff = cache.h.values - ae_output(cache.ae);

    DenseTensor grad_xhat = f.adjoint(cache.residual);
    const double rec_scale = -2.0 / static_cast<double>(cfg.tau.patch_size());
    for (std::size_t i = 0; i < grad_xhat.size(); ++i) grad_xhat[i] *= rec_scale;

    DenseMatrix upstream = mdt_pinv_adjoint(grad_xhat, cfg.tau);
    upstream.noalias() += (-2.0 * lambda) * diff;

    TotalGrads grads;
    grads.ae = ae_backward(params, cache.ae, upstream);

    DenseMatrix grad_h = (2.0 * lambda) * diff;
    grad_h.noalias() += grads.ae.input;
    grads.z = mdt_adjoint(grad_h, z.shape(), cfg.tau);
    return grads;
}

/// One lambda adaptation: raise while the reconstruction term dominates,
/// otherwise decay.
inline double lambda_update(double lambda, double l_rec, double l_ae, double up = 1.1,
                            double down = 0.99) {
    return l_rec < l_ae ? lambda * up : lambda * down;
}

/// Ceiling variant: raise only while the auto-encoding loss exceeds the
/// ceiling, hold otherwise.
inline double lambda_update_capped(double lambda, double l_ae, double ceiling, double up = 1.1) {
    return l_ae > ceiling ? lambda * up : lambda;
}

/// Staircase decay: lr0 * decay^floor(iter / every), iter counted from 0.
inline double lr_schedule(std::size_t iter, const SolverConfig& cfg) {
    const auto steps = static_cast<double>(iter / cfg.lr_decay_every);
    return cfg.lr0 * std::pow(cfg.lr_decay, steps);
}

/// Noise-free model output: decode the clean patch matrix and fold back.
inline DenseTensor forward_output(const DenseTensor& z, const MlpParams& params,
                                  const EmbedShape& tau) {
    const HankelMatrix h = mdt_forward(z, tau);
    const AeCache cache = ae_forward(params, h.values);
    return mdt_pinv(ae_output(cache), z.shape(), tau);
}

/// Starting latent tensor: observed data with masked-out entries set to the
/// observed mean, an adjoint-upsampled and range-matched image for
/// decimation, the observation itself otherwise.
inline DenseTensor initial_latent(const DenseTensor& y, const Degradation& f) {
    switch (f.kind()) {
        case DegradationKind::kMask: {
            const DenseTensor& mask = f.mask_tensor();
            if (mask.shape() != y.shape()) {
                throw std::invalid_argument("initial_latent: mask shape mismatch");
            }
            double sum = 0.0;
            std::size_t count = 0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                if (mask[i] == 1.0) {
                    sum += y[i];
                    ++count;
                }
            }
            const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
            DenseTensor z = y;
            for (std::size_t i = 0; i < z.size(); ++i) {
                if (mask[i] != 1.0) z[i] = mean;
            }
            return z;
        }
        case DegradationKind::kDownsample: {
            DenseTensor up = f.adjoint(y);
            double lo = up[0], hi = up[0];
            for (std::size_t i = 0; i < up.size(); ++i) {
                lo = std::min(lo, up[i]);
                hi = std::max(hi, up[i]);
            }
            double ylo = y[0], yhi = y[0];
            for (std::size_t i = 0; i < y.size(); ++i) {
                ylo = std::min(ylo, y[i]);
                yhi = std::max(yhi, y[i]);
            }
            if (hi > lo) {
                const double scale = (yhi - ylo) / (hi - lo);
                for (std::size_t i = 0; i < up.size(); ++i) up[i] = ylo + (up[i] - lo) * scale;
            } else {
                for (std::size_t i = 0; i < up.size(); ++i) up[i] = 0.5 * (ylo + yhi);
            }
            return up;
        }
        case DegradationKind::kIdentity:
        case DegradationKind::kBlur:
            return y;
    }
    throw std::logic_error("initial_latent: unreachable");
}

struct SolveResult {
    DenseTensor xhat;
    std::vector<TraceRecord> trace;
    MlpParams params;
    DenseTensor z;
    std::size_t iterations = 0;
    bool stopped_early = false;

    // Populated when a reference was supplied.
    bool has_best = false;
    double best_mse = std::numeric_limits<double>::infinity();
    std::size_t best_iter = 0;
    MlpParams best_params;
    DenseTensor best_z;
};

using CheckpointSink =
    std::function<void(std::size_t iter, const MlpParams& params, const DenseTensor& z)>;

/// Joint gradient descent on the latent tensor and the auto-encoder. The
/// perturbation noise is redrawn every iteration; quality probes and the
/// returned reconstruction always run noise-free. A reference tensor (when
/// available) drives the psnr column of the trace, best-iterate tracking
/// and the optional early stop.
inline SolveResult reconstruct(const DenseTensor& y, const Degradation& f, const SolverConfig& cfg,
                               const DenseTensor* reference = nullptr,
                               const CheckpointSink& checkpoint_sink = nullptr) {
    const std::vector<std::size_t> z_shape = f.source_shape_for(y.shape());
    cfg.validate(z_shape);
    if (reference != nullptr && reference->shape() != z_shape) {
        throw std::invalid_argument("reconstruct: reference shape does not match the latent shape");
    }

    const std::size_t d = cfg.tau.patch_size();
    const std::size_t t = cfg.tau.embedded_cols(z_shape);
    MlpParams params = init_params(cfg.chain(d), cfg.seed, cfg.linear_mode);
    GaussianStream noise_stream(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    DenseTensor z = initial_latent(y, f);

    AdamState adam(cfg.adam);
    const std::size_t z_slot = adam.add_slot(z.size());
    std::vector<std::pair<std::size_t, std::size_t>> layer_slots;  // (weight, bias)
    for (const auto& layer : params.layers) {
        layer_slots.emplace_back(adam.add_slot(static_cast<std::size_t>(layer.weight.size())),
                                 adam.add_slot(static_cast<std::size_t>(layer.bias.size())));
    }

    SolveResult result;
    result.trace.reserve(cfg.max_iters);
    double lambda = cfg.lambda0;
    DenseMatrix noise = DenseMatrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t));

    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        const double lr = lr_schedule(iter, cfg);
        if (cfg.sigma > 0.0) noise_stream.fill(noise, cfg.sigma);

        const LossCache cache = compute_losses(z, params, y, f, cfg, noise);
        if (!std::isfinite(cache.l_rec) || !std::isfinite(cache.l_ae)) {
            throw SolverDivergence("reconstruct: non-finite loss at iteration " + std::to_string(iter),
                                   std::move(result.trace));
        }

        TraceRecord record;
        record.iter = iter;
        record.l_rec = cache.l_rec;
        record.l_ae = cache.l_ae;
        record.lambda = lambda;
        record.lr = lr;

        const TotalGrads grads = backward_total(z, params, f, cfg, cache, lambda);
        try {
            adam.begin_step();
            adam.update(z_slot, lr, z.data(), grads.z.data(), z.size());
            for (std::size_t l = 0; l < params.layers.size(); ++l) {
                adam.update(layer_slots[l].first, lr, params.layers[l].weight.data(),
                            grads.ae.weight[l].data(),
                            static_cast<std::size_t>(params.layers[l].weight.size()));
                adam.update(layer_slots[l].second, lr, params.layers[l].bias.data(),
                            grads.ae.bias[l].data(),
                            static_cast<std::size_t>(params.layers[l].bias.size()));
            }
        } catch (const std::runtime_error& e) {
            result.trace.push_back(record);
            throw SolverDivergence(std::string("reconstruct: ") + e.what(), std::move(result.trace));
        }

        if ((iter + 1) % cfg.lambda_cadence == 0) {
            lambda = cfg.lambda_cap_mode
                         ? lambda_update_capped(lambda, cache.l_ae, cfg.ae_loss_ceiling, cfg.lambda_up)
                         : lambda_update(lambda, cache.l_rec, cache.l_ae, cfg.lambda_up,
                                         cfg.lambda_down);
        }

        bool stop = false;
        const bool probe = reference != nullptr &&
                           ((iter + 1) % cfg.psnr_cadence == 0 || iter + 1 == cfg.max_iters);
        if (probe) {
            const DenseTensor probe_x = forward_output(z, params, cfg.tau);
            double sq = 0.0;
            for (std::size_t i = 0; i < probe_x.size(); ++i) {
                const double rr = probe_x[i] - (*reference)[i];
                sq += rr * rr;
            }
            const double mse = sq / static_cast<double>(probe_x.size());
            record.psnr = mse > 0.0 ? 10.0 * std::log10(1.0 / mse)
                                    : std::numeric_limits<double>::infinity();
            if (mse < result.best_mse) {
                result.best_mse = mse;
                result.best_iter = iter;
                result.best_params = params;
                result.best_z = z;
                result.has_best = true;
            }
            if (cfg.stop_at_mse > 0.0 && mse <= cfg.stop_at_mse) stop = true;
        }

        result.trace.push_back(record);
        result.iterations = iter + 1;

        if (checkpoint_sink && cfg.checkpoint_cadence > 0 && (iter + 1) % cfg.checkpoint_cadence == 0) {
            checkpoint_sink(iter + 1, params, z);
        }
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }

    result.xhat = forward_output(z, params, cfg.tau);
    result.params = std::move(params);
    result.z = std::move(z);
    return result;
}

}  // namespace mmes
