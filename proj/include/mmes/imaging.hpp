#pragma once

#include <mmes/solver.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmes {

/// Joint parameter set for 3-channel recovery: one auto-encoder shared by
/// all channel embeddings plus a per-pixel affine color map, initialized to
/// the identity so early optimization matches channel-independent behavior.
struct ColorPipelineParams {
    MlpParams shared_ae;
    Eigen::Matrix3d color_matrix = Eigen::Matrix3d::Identity();
    Eigen::Vector3d color_bias = Eigen::Vector3d::Zero();
};

inline DenseTensor channel_slice(const DenseTensor& x, std::size_t channel) {
    if (x.ndim() != 3) throw std::invalid_argument("channel_slice: expected a 3-way tensor");
    const std::size_t channels = x.shape()[2];
    if (channel >= channels) throw std::invalid_argument("channel_slice: channel out of range");
    DenseTensor out = DenseTensor::zeros({x.shape()[0], x.shape()[1]});
    const double* src = x.data() + channel;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i * channels];
    return out;
}

inline DenseTensor stack_channels(const std::array<DenseTensor, 3>& channels) {
    const auto& shape = channels[0].shape();
    if (shape.size() != 2) throw std::invalid_argument("stack_channels: expected 2-way slices");
    for (const auto& c : channels) {
        if (c.shape() != shape) throw std::invalid_argument("stack_channels: slice shape mismatch");
    }
    DenseTensor out = DenseTensor::zeros({shape[0], shape[1], 3});
    for (std::size_t i = 0; i < channels[0].size(); ++i) {
        out[i * 3] = channels[0][i];
        out[i * 3 + 1] = channels[1][i];
        out[i * 3 + 2] = channels[2][i];
    }
    return out;
}

namespace detail {

inline void check_color_image(const DenseTensor& x, const char* who) {
    if (x.ndim() != 3 || x.shape()[2] != 3) {
        throw std::invalid_argument(std::string(who) + ": expected an H x W x 3 tensor");
    }
}

/// Per-pixel affine map v -> M v + b over the channel triples.
inline DenseTensor apply_color_map(const DenseTensor& x, const Eigen::Matrix3d& m,
                                   const Eigen::Vector3d& b) {
    check_color_image(x, "apply_color_map");
    DenseTensor out = DenseTensor::zeros(x.shape());
    const std::size_t pixels = x.size() / 3;
    for (std::size_t p = 0; p < pixels; ++p) {
        Eigen::Map<const Eigen::Vector3d> v(x.data() + p * 3);
        Eigen::Map<Eigen::Vector3d>(out.data() + p * 3) = m * v + b;
    }
    return out;
}

}  // namespace detail

/// Intermediates of one color loss evaluation. The three channel embeddings
/// live side by side in `h_cat` (channel-major blocks along the columns).
struct ColorLossCache {
    DenseMatrix h_cat;  // D x 3T
    AeCache ae;
    DenseTensor x_pre;  // folded channels before the color map
    DenseTensor xhat;
    DenseTensor residual;  // y - f(xhat)
    double l_rec = 0.0;
    double l_ae = 0.0;
};

/// Same objective as the grayscale solver, but each channel is embedded
/// independently, the blocks are concatenated along the column axis, one
/// shared auto-encoder denoises all of them at once, and the folded channels
/// pass through the per-pixel color map before hitting the degradation.
inline ColorLossCache color_compute_losses(const DenseTensor& z, const ColorPipelineParams& params,
                                           const DenseTensor& y, const Degradation& f,
                                           const SolverConfig& cfg, const DenseMatrix& noise) {
    detail::check_color_image(z, "color_compute_losses");
    const std::vector<std::size_t> channel_shape{z.shape()[0], z.shape()[1]};
    const auto d = static_cast<Eigen::Index>(cfg.tau.patch_size());
    const auto t = static_cast<Eigen::Index>(cfg.tau.embedded_cols(channel_shape));

    ColorLossCache cache;
    cache.h_cat.resize(d, 3 * t);
    for (std::size_t c = 0; c < 3; ++c) {
        const HankelMatrix h = mdt_forward(channel_slice(z, c), cfg.tau);
        cache.h_cat.middleCols(static_cast<Eigen::Index>(c) * t, t) = h.values;
    }
    if (noise.rows() != d || noise.cols() != 3 * t) {
        throw std::invalid_argument("color_compute_losses: noise shape does not match");
    }

    const DenseMatrix noisy = cache.h_cat + noise;
    cache.ae = ae_forward(params.shared_ae, noisy);
    const DenseMatrix& decoded = ae_output(cache.ae);
    cache.l_ae = (cache.h_cat - decoded).squaredNorm();

    std::array<DenseTensor, 3> folded;
    for (std::size_t c = 0; c < 3; ++c) {
        folded[c] = mdt_pinv(decoded.middleCols(static_cast<Eigen::Index>(c) * t, t), channel_shape,
                             cfg.tau);
    }
    cache.x_pre = stack_channels(folded);
    cache.xhat = detail::apply_color_map(cache.x_pre, params.color_matrix, params.color_bias);

    const DenseTensor fx = f.apply(cache.xhat);
    if (fx.shape() != y.shape()) {
        throw std::invalid_argument("color_compute_losses: observation shape mismatch");
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

struct ColorTotalGrads {
    DenseTensor z;
    AeGrads ae;
    Eigen::Matrix3d color_matrix = Eigen::Matrix3d::Zero();
    Eigen::Vector3d color_bias = Eigen::Vector3d::Zero();
};

inline ColorTotalGrads color_backward_total(const DenseTensor& z, const ColorPipelineParams& params,
                                            const Degradation& f, const SolverConfig& cfg,
                                            const ColorLossCache& cache, double lambda) {
    const std::vector<std::size_t> channel_shape{z.shape()[0], z.shape()[1]};
    const auto t = static_cast<Eigen::Index>(cfg.tau.embedded_cols(channel_shape));
    const DenseMatrix diff = cache.h_cat - ae_output(cache.ae);

    DenseTensor grad_xhat = f.adjoint(cache.residual);
    const double rec_scale = -2.0 / static_cast<double>(cfg.tau.patch_size());
    for (std::size_t i = 0; i < grad_xhat.size(); ++i) grad_xhat[i] *= rec_scale;

    ColorTotalGrads grads;
    DenseTensor grad_pre = DenseTensor::zeros(cache.x_pre.shape());
    const std::size_t pixels = grad_xhat.size() / 3;
    for (std::size_t p = 0; p < pixels; ++p) {
        Eigen::Map<const Eigen::Vector3d> g(grad_xhat.data() + p * 3);
        Eigen::Map<const Eigen::Vector3d> v(cache.x_pre.data() + p * 3);
        grads.color_matrix.noalias() += g * v.transpose();
        grads.color_bias += g;
        Eigen::Map<Eigen::Vector3d>(grad_pre.data() + p * 3) =
            params.color_matrix.transpose() * g;
    }

    DenseMatrix upstream(cache.h_cat.rows(), cache.h_cat.cols());
    for (std::size_t c = 0; c < 3; ++c) {
        upstream.middleCols(static_cast<Eigen::Index>(c) * t, t) =
            mdt_pinv_adjoint(channel_slice(grad_pre, c), cfg.tau);
    }
    upstream.noalias() += (-2.0 * lambda) * diff;

    grads.ae = ae_backward(params.shared_ae, cache.ae, upstream);

    DenseMatrix grad_h = (2.0 * lambda) * diff;
    grad_h.noalias() += grads.ae.input;
    std::array<DenseTensor, 3> gz;
    for (std::size_t c = 0; c < 3; ++c) {
        gz[c] = mdt_adjoint(grad_h.middleCols(static_cast<Eigen::Index>(c) * t, t), channel_shape,
                            cfg.tau);
    }
    grads.z = stack_channels(gz);
    return grads;
}

/// Noise-free color output: embed, denoise, fold, color-map.
inline DenseTensor forward_color_output(const DenseTensor& z, const ColorPipelineParams& params,
                                        const EmbedShape& tau) {
    detail::check_color_image(z, "forward_color_output");
    const std::vector<std::size_t> channel_shape{z.shape()[0], z.shape()[1]};
    const auto d = static_cast<Eigen::Index>(tau.patch_size());
    const auto t = static_cast<Eigen::Index>(tau.embedded_cols(channel_shape));
    DenseMatrix h_cat(d, 3 * t);
    for (std::size_t c = 0; c < 3; ++c) {
        h_cat.middleCols(static_cast<Eigen::Index>(c) * t, t) =
            mdt_forward(channel_slice(z, c), tau).values;
    }
    const AeCache ae = ae_forward(params.shared_ae, h_cat);
    const DenseMatrix& decoded = ae_output(ae);
    std::array<DenseTensor, 3> folded;
    for (std::size_t c = 0; c < 3; ++c) {
        folded[c] = mdt_pinv(decoded.middleCols(static_cast<Eigen::Index>(c) * t, t), channel_shape,
                             tau);
    }
    return detail::apply_color_map(stack_channels(folded), params.color_matrix, params.color_bias);
}

struct ColorSolveResult {
    DenseTensor xhat;
    std::vector<TraceRecord> trace;
    ColorPipelineParams params;
    DenseTensor z;
    std::size_t iterations = 0;
    bool stopped_early = false;

    bool has_best = false;
    double best_mse = std::numeric_limits<double>::infinity();
    std::size_t best_iter = 0;
    ColorPipelineParams best_params;
    DenseTensor best_z;
};

using ColorCheckpointSink =
    std::function<void(std::size_t iter, const ColorPipelineParams& params, const DenseTensor& z)>;

/// Color counterpart of `reconstruct`: same schedules, perturbation noise
/// and iterate tracking, with the color map joining the trainable set unless
/// `cfg.freeze_color_transform` holds it at identity/zero.
inline ColorSolveResult color_reconstruct(const DenseTensor& y, const Degradation& f,
                                          const SolverConfig& cfg,
                                          const DenseTensor* reference = nullptr,
                                          const ColorCheckpointSink& checkpoint_sink = nullptr) {
    detail::check_color_image(y, "color_reconstruct");
    const std::vector<std::size_t> z_shape = f.source_shape_for(y.shape());
    if (z_shape.size() != 3 || z_shape[2] != 3) {
        throw std::invalid_argument("color_reconstruct: latent shape is not 3-channel");
    }
    const std::vector<std::size_t> channel_shape{z_shape[0], z_shape[1]};
    cfg.validate(channel_shape);
    if (reference != nullptr && reference->shape() != z_shape) {
        throw std::invalid_argument("color_reconstruct: reference shape mismatch");
    }

    const std::size_t d = cfg.tau.patch_size();
    const std::size_t t = cfg.tau.embedded_cols(channel_shape);
    ColorPipelineParams params;
    params.shared_ae = init_params(cfg.chain(d), cfg.seed, cfg.linear_mode);
    GaussianStream noise_stream(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    DenseTensor z = initial_latent(y, f);

    AdamState adam(cfg.adam);
    const std::size_t z_slot = adam.add_slot(z.size());
    std::vector<std::pair<std::size_t, std::size_t>> layer_slots;
    for (const auto& layer : params.shared_ae.layers) {
        layer_slots.emplace_back(adam.add_slot(static_cast<std::size_t>(layer.weight.size())),
                                 adam.add_slot(static_cast<std::size_t>(layer.bias.size())));
    }
    std::size_t matrix_slot = 0, bias_slot = 0;
    if (!cfg.freeze_color_transform) {
        matrix_slot = adam.add_slot(9);
        bias_slot = adam.add_slot(3);
    }

    ColorSolveResult result;
    result.trace.reserve(cfg.max_iters);
    double lambda = cfg.lambda0;
    DenseMatrix noise =
        DenseMatrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(3 * t));

    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        const double lr = lr_schedule(iter, cfg);
        if (cfg.sigma > 0.0) noise_stream.fill(noise, cfg.sigma);

        const ColorLossCache cache = color_compute_losses(z, params, y, f, cfg, noise);
        if (!std::isfinite(cache.l_rec) || !std::isfinite(cache.l_ae)) {
            throw SolverDivergence(
                "color_reconstruct: non-finite loss at iteration " + std::to_string(iter),
                std::move(result.trace));
        }

        TraceRecord record;
        record.iter = iter;
        record.l_rec = cache.l_rec;
        record.l_ae = cache.l_ae;
        record.lambda = lambda;
        record.lr = lr;

        const ColorTotalGrads grads = color_backward_total(z, params, f, cfg, cache, lambda);
        try {
            adam.begin_step();
            adam.update(z_slot, lr, z.data(), grads.z.data(), z.size());
            for (std::size_t l = 0; l < params.shared_ae.layers.size(); ++l) {
                auto& layer = params.shared_ae.layers[l];
                adam.update(layer_slots[l].first, lr, layer.weight.data(), grads.ae.weight[l].data(),
                            static_cast<std::size_t>(layer.weight.size()));
                adam.update(layer_slots[l].second, lr, layer.bias.data(), grads.ae.bias[l].data(),
                            static_cast<std::size_t>(layer.bias.size()));
            }
            if (!cfg.freeze_color_transform) {
                adam.update(matrix_slot, lr, params.color_matrix.data(), grads.color_matrix.data(),
                            9);
                adam.update(bias_slot, lr, params.color_bias.data(), grads.color_bias.data(), 3);
            }
        } catch (const std::runtime_error& e) {
            result.trace.push_back(record);
            throw SolverDivergence(std::string("color_reconstruct: ") + e.what(),
                                   std::move(result.trace));
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
            const DenseTensor probe_x = forward_color_output(z, params, cfg.tau);
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

    result.xhat = forward_color_output(z, params, cfg.tau);
    result.params = std::move(params);
    result.z = std::move(z);
    return result;
}

/// 10 log10(peak^2 / MSE); identical inputs return +infinity.
inline double psnr(const DenseTensor& a, const DenseTensor& b, double peak = 1.0) {
    if (a.shape() != b.shape()) throw std::invalid_argument("psnr: shape mismatch");
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be > 0");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> ssim_window() {
    constexpr int kSide = 11;
    constexpr double kSigma = 1.5;
    std::vector<double> w(kSide * kSide);
    double total = 0.0;
    for (int i = 0; i < kSide; ++i) {
        for (int j = 0; j < kSide; ++j) {
            const double di = i - 5, dj = j - 5;
            const double v = std::exp(-(di * di + dj * dj) / (2.0 * kSigma * kSigma));
            w[static_cast<std::size_t>(i * kSide + j)] = v;
            total += v;
        }
    }
    for (double& v : w) v /= total;
    return w;
}

/// Mean SSIM of one 2-D slice over every fully interior 11x11 window.
/// Products are grouped so that the score is exactly symmetric in (a, b)
/// and exactly 1 for identical inputs.
inline double ssim_slice(const DenseTensor& a, const DenseTensor& b) {
    constexpr int kSide = 11;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const auto rows = static_cast<int>(a.shape()[0]);
    const auto cols = static_cast<int>(a.shape()[1]);
    if (rows < kSide || cols < kSide) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    }
    static const std::vector<double> window = ssim_window();

    double sum = 0.0;
    std::size_t count = 0;
    for (int i0 = 0; i0 + kSide <= rows; ++i0) {
        for (int j0 = 0; j0 + kSide <= cols; ++j0) {
            double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
            for (int i = 0; i < kSide; ++i) {
                for (int j = 0; j < kSide; ++j) {
                    const double w = window[static_cast<std::size_t>(i * kSide + j)];
                    const std::size_t idx =
                        static_cast<std::size_t>(i0 + i) * static_cast<std::size_t>(cols) +
                        static_cast<std::size_t>(j0 + j);
                    const double x = a[idx], y = b[idx];
                    mx += w * x;
                    my += w * y;
                    sxx += w * (x * x);
                    syy += w * (y * y);
                    sxy += w * (x * y);
                }
            }
            const double px = mx * mx;
            const double py = my * my;
            const double pxy = mx * my;
            const double vx = sxx - px;
            const double vy = syy - py;
            const double cxy = sxy - pxy;
            const double num = (2.0 * pxy + kC1) * (2.0 * cxy + kC2);
            const double den = (px + py + kC1) * (vx + vy + kC2);
            sum += num / den;
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

}  // namespace detail

/// Mean structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5) and unit-dynamic-range constants; 3-way inputs average the
/// per-channel scores.
inline double ssim(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("ssim: shape mismatch");
    if (a.ndim() == 2) return detail::ssim_slice(a, b);
    if (a.ndim() == 3) {
        const std::size_t channels = a.shape()[2];
        if (channels == 0) throw std::invalid_argument("ssim: empty channel axis");
        double total = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            DenseTensor ac = DenseTensor::zeros({a.shape()[0], a.shape()[1]});
            DenseTensor bc = DenseTensor::zeros({a.shape()[0], a.shape()[1]});
            const double* pa = a.data() + c;
            const double* pb = b.data() + c;
            for (std::size_t i = 0; i < ac.size(); ++i) {
                ac[i] = pa[i * channels];
                bc[i] = pb[i * channels];
            }
            total += detail::ssim_slice(ac, bc);
        }
        return total / static_cast<double>(channels);
    }
    throw std::invalid_argument("ssim: expected a 2-way or 3-way tensor");
}

}  // namespace mmes
