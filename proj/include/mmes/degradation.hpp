#pragma once

#include <mmes/dense_tensor.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace mmes {

enum class DegradationKind { kIdentity, kMask, kBlur, kDownsample };

namespace detail {

/// Kernel taps as flat offsets into a padded grid whose first K modes are
/// the kernel modes; trailing modes are batched as one contiguous block.
struct KernelPlan {
    std::vector<std::size_t> offsets;  // per tap, measured in blocks
    std::vector<double> taps;
    std::vector<std::size_t> half_widths;
    std::vector<std::size_t> spatial_in;   // unpadded spatial extents
    std::vector<std::size_t> padded_in;    // padded spatial extents
    std::size_t block = 1;                 // product of trailing extents

    static KernelPlan build(const std::vector<std::size_t>& x_shape, const DenseTensor& kernel) {
        const std::size_t k_modes = kernel.ndim();
        if (k_modes > x_shape.size()) {
            throw std::invalid_argument("degradation: kernel has more modes than the tensor");
        }
        KernelPlan plan;
        plan.half_widths.resize(k_modes);
        plan.spatial_in.assign(x_shape.begin(), x_shape.begin() + static_cast<std::ptrdiff_t>(k_modes));
        plan.padded_in.resize(k_modes);
        for (std::size_t n = 0; n < k_modes; ++n) {
            const std::size_t len = kernel.shape()[n];
            if (len % 2 == 0) throw std::invalid_argument("degradation: kernel extents must be odd");
            plan.half_widths[n] = len / 2;
            if (plan.half_widths[n] > x_shape[n] - 1) {
                throw std::invalid_argument("degradation: kernel wider than the tensor mode");
            }
            plan.padded_in[n] = x_shape[n] + 2 * plan.half_widths[n];
        }
        for (std::size_t n = k_modes; n < x_shape.size(); ++n) plan.block *= x_shape[n];

        std::vector<std::size_t> pstrides(k_modes, 1);
        for (std::size_t n = k_modes; n-- > 1;) pstrides[n - 1] = pstrides[n] * plan.padded_in[n];

        std::vector<std::size_t> j(k_modes, 0);
        for (std::size_t flat = 0; flat < kernel.size(); ++flat) {
            std::size_t off = 0;
            for (std::size_t n = 0; n < k_modes; ++n) off += j[n] * pstrides[n];
            plan.offsets.push_back(off);
            plan.taps.push_back(kernel[flat]);
            for (std::size_t n = k_modes; n-- > 0;) {
                if (++j[n] < kernel.shape()[n]) break;
                j[n] = 0;
            }
        }
        return plan;
    }

    std::vector<std::size_t> pad_widths(std::size_t x_rank) const {
        std::vector<std::size_t> w(x_rank, 0);
        std::copy(half_widths.begin(), half_widths.end(), w.begin());
        return w;
    }
};

/// Same-size reflect-boundary cross-correlation over the first kernel modes.
inline DenseTensor correlate_reflect(const DenseTensor& x, const DenseTensor& kernel) {
    const KernelPlan plan = KernelPlan::build(x.shape(), kernel);
    const DenseTensor padded = reflection_pad_widths(x, plan.pad_widths(x.ndim()));

    std::vector<std::size_t> pstrides(plan.padded_in.size(), 1);
    for (std::size_t n = plan.padded_in.size(); n-- > 1;) pstrides[n - 1] = pstrides[n] * plan.padded_in[n];

    DenseTensor out = DenseTensor::zeros(x.shape());
    const std::size_t spatial_total = DenseTensor::element_count(plan.spatial_in);
    const std::size_t block = plan.block;
    std::vector<std::size_t> t(plan.spatial_in.size(), 0);
    for (std::size_t flat = 0; flat < spatial_total; ++flat) {
        std::size_t base = 0;
        for (std::size_t n = 0; n < t.size(); ++n) base += t[n] * pstrides[n];
        double* dst = out.data() + flat * block;
        for (std::size_t k = 0; k < plan.taps.size(); ++k) {
            const double w = plan.taps[k];
            const double* src = padded.data() + (base + plan.offsets[k]) * block;
            for (std::size_t b = 0; b < block; ++b) dst[b] += w * src[b];
        }
        for (std::size_t n = t.size(); n-- > 0;) {
            if (++t[n] < plan.spatial_in[n]) break;
            t[n] = 0;
        }
    }
    return out;
}

/// Exact adjoint of correlate_reflect: scatter the taps onto the padded
/// grid, then push the pad back with the padding adjoint.
inline DenseTensor correlate_reflect_adjoint(const DenseTensor& g, const DenseTensor& kernel) {
    const KernelPlan plan = KernelPlan::build(g.shape(), kernel);
    std::vector<std::size_t> acc_shape(g.shape());
    for (std::size_t n = 0; n < plan.padded_in.size(); ++n) acc_shape[n] = plan.padded_in[n];
    DenseTensor acc = DenseTensor::zeros(acc_shape);

    std::vector<std::size_t> pstrides(plan.padded_in.size(), 1);
    for (std::size_t n = plan.padded_in.size(); n-- > 1;) pstrides[n - 1] = pstrides[n] * plan.padded_in[n];

    const std::size_t spatial_total = DenseTensor::element_count(plan.spatial_in);
    const std::size_t block = plan.block;
    std::vector<std::size_t> t(plan.spatial_in.size(), 0);
    for (std::size_t flat = 0; flat < spatial_total; ++flat) {
        std::size_t base = 0;
        for (std::size_t n = 0; n < t.size(); ++n) base += t[n] * pstrides[n];
        const double* src = g.data() + flat * block;
        for (std::size_t k = 0; k < plan.taps.size(); ++k) {
            const double w = plan.taps[k];
            double* dst = acc.data() + (base + plan.offsets[k]) * block;
            for (std::size_t b = 0; b < block; ++b) dst[b] += w * src[b];
        }
        for (std::size_t n = t.size(); n-- > 0;) {
            if (++t[n] < plan.spatial_in[n]) break;
            t[n] = 0;
        }
    }
    return reflection_pad_widths_adjoint(acc, g.shape(), plan.pad_widths(g.ndim()));
}

inline std::size_t strided_length(std::size_t len, std::size_t factor) {
    return (len - 1) / factor + 1;
}

}  // namespace detail

/// Linear observation operator: identity, elementwise mask, same-size blur,
/// or blur followed by stride-s decimation (phase 0) on the kernel modes.
class Degradation {
public:
    static Degradation identity() {
        Degradation f;
        f.kind_ = DegradationKind::kIdentity;
        return f;
    }

    /// mask entries must be exactly 0 (missing) or 1 (observed).
    static Degradation mask(DenseTensor mask01) {
        for (std::size_t i = 0; i < mask01.size(); ++i) {
            if (mask01[i] != 0.0 && mask01[i] != 1.0) {
                throw std::invalid_argument("Degradation::mask: entries must be 0 or 1");
            }
        }
        Degradation f;
        f.kind_ = DegradationKind::kMask;
        f.mask_ = std::move(mask01);
        return f;
    }

    static Degradation blur(DenseTensor kernel) {
        Degradation f;
        f.kind_ = DegradationKind::kBlur;
        f.kernel_ = std::move(kernel);
        return f;
    }

    static Degradation downsample(std::size_t factor, DenseTensor kernel,
                                  std::vector<std::size_t> source_shape) {
        if (factor < 2) throw std::invalid_argument("Degradation::downsample: factor must be >= 2");
        if (kernel.ndim() > source_shape.size()) {
            throw std::invalid_argument("Degradation::downsample: kernel rank exceeds source rank");
        }
        Degradation f;
        f.kind_ = DegradationKind::kDownsample;
        f.kernel_ = std::move(kernel);
        f.factor_ = factor;
        f.source_shape_ = std::move(source_shape);
        return f;
    }

    DegradationKind kind() const { return kind_; }
    std::size_t factor() const { return factor_; }
    const DenseTensor& mask_tensor() const { return mask_; }
    const DenseTensor& kernel() const { return kernel_; }

    /// Shape of the unknown signal given the observation shape.
    std::vector<std::size_t> source_shape_for(const std::vector<std::size_t>& observed_shape) const {
        if (kind_ != DegradationKind::kDownsample) return observed_shape;
        const std::vector<std::size_t> expect = observed_shape_for(source_shape_);
        if (expect != observed_shape) {
            throw std::invalid_argument("Degradation: observation shape does not match the source");
        }
        return source_shape_;
    }

    std::vector<std::size_t> observed_shape_for(const std::vector<std::size_t>& source_shape) const {
        if (kind_ != DegradationKind::kDownsample) return source_shape;
        std::vector<std::size_t> out = source_shape;
        for (std::size_t n = 0; n < kernel_.ndim(); ++n) {
            out[n] = detail::strided_length(source_shape[n], factor_);
        }
        return out;
    }

    DenseTensor apply(const DenseTensor& x) const {
        switch (kind_) {
            case DegradationKind::kIdentity:
                return x;
            case DegradationKind::kMask: {
                if (x.shape() != mask_.shape()) {
                    throw std::invalid_argument("Degradation::apply: mask shape mismatch");
                }
                DenseTensor out = x;
                for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask_[i];
                return out;
            }
            case DegradationKind::kBlur:
                return detail::correlate_reflect(x, kernel_);
            case DegradationKind::kDownsample: {
                if (x.shape() != source_shape_) {
                    throw std::invalid_argument("Degradation::apply: source shape mismatch");
                }
                const DenseTensor blurred = detail::correlate_reflect(x, kernel_);
                return decimate(blurred);
            }
        }
        throw std::logic_error("Degradation::apply: unreachable");
    }

    DenseTensor adjoint(const DenseTensor& y) const {
        switch (kind_) {
            case DegradationKind::kIdentity:
                return y;
            case DegradationKind::kMask: {
                if (y.shape() != mask_.shape()) {
                    throw std::invalid_argument("Degradation::adjoint: mask shape mismatch");
                }
                DenseTensor out = y;
                for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask_[i];
                return out;
            }
            case DegradationKind::kBlur:
                return detail::correlate_reflect_adjoint(y, kernel_);
            case DegradationKind::kDownsample: {
                if (y.shape() != observed_shape_for(source_shape_)) {
                    throw std::invalid_argument("Degradation::adjoint: observed shape mismatch");
                }
                const DenseTensor upsampled = zero_insert(y);
                return detail::correlate_reflect_adjoint(upsampled, kernel_);
            }
        }
        throw std::logic_error("Degradation::adjoint: unreachable");
    }

private:
    DenseTensor decimate(const DenseTensor& x) const {
        const std::vector<std::size_t> out_shape = observed_shape_for(x.shape());
        DenseTensor out = DenseTensor::zeros(out_shape);
        const auto src_strides = detail::row_major_strides(x.shape());
        const std::size_t k_modes = kernel_.ndim();
        std::vector<std::size_t> idx(out_shape.size(), 0);
        for (std::size_t flat = 0; flat < out.size(); ++flat) {
            std::size_t src = 0;
            for (std::size_t n = 0; n < out_shape.size(); ++n) {
                const std::size_t pos = n < k_modes ? idx[n] * factor_ : idx[n];
                src += pos * src_strides[n];
            }
            out[flat] = x[src];
            for (std::size_t n = out_shape.size(); n-- > 0;) {
                if (++idx[n] < out_shape[n]) break;
                idx[n] = 0;
            }
        }
        return out;
    }

    DenseTensor zero_insert(const DenseTensor& y) const {
        DenseTensor out = DenseTensor::zeros(source_shape_);
        const auto dst_strides = detail::row_major_strides(source_shape_);
        const std::size_t k_modes = kernel_.ndim();
        const auto& in_shape = y.shape();
        std::vector<std::size_t> idx(in_shape.size(), 0);
        for (std::size_t flat = 0; flat < y.size(); ++flat) {
            std::size_t dst = 0;
            for (std::size_t n = 0; n < in_shape.size(); ++n) {
                const std::size_t pos = n < k_modes ? idx[n] * factor_ : idx[n];
                dst += pos * dst_strides[n];
            }
            out[dst] = y[flat];
            for (std::size_t n = in_shape.size(); n-- > 0;) {
                if (++idx[n] < in_shape[n]) break;
                idx[n] = 0;
            }
        }
        return out;
    }

    DegradationKind kind_ = DegradationKind::kIdentity;
    DenseTensor mask_;
    DenseTensor kernel_;
    std::size_t factor_ = 1;
    std::vector<std::size_t> source_shape_;
};

/// Lanczos kernel with half-window 2, 4s-1 taps at x = (i - (2s-1)) / s,
/// L(x) = sinc(x) * sinc(x/2), normalised to unit sum. Grows to `ndim`
/// modes as an outer power.
inline DenseTensor make_lanczos2_kernel(std::size_t factor, std::size_t ndim = 2) {
    if (factor != 2 && factor != 4 && factor != 8) {
        throw std::invalid_argument("make_lanczos2_kernel: factor must be 2, 4 or 8");
    }
    if (ndim < 1) throw std::invalid_argument("make_lanczos2_kernel: ndim must be >= 1");
    const std::size_t len = 4 * factor - 1;
    std::vector<double> taps(len);
    auto sinc = [](double x) {
        if (x == 0.0) return 1.0;
        const double px = M_PI * x;
        return std::sin(px) / px;
    };
    for (std::size_t i = 0; i < len; ++i) {
        const double x = (static_cast<double>(i) - static_cast<double>(2 * factor - 1)) /
                         static_cast<double>(factor);
        taps[i] = sinc(x) * sinc(x / 2.0);
    }

    std::vector<std::size_t> shape(ndim, len);
    DenseTensor kernel = DenseTensor::zeros(shape);
    std::vector<std::size_t> idx(ndim, 0);
    double total = 0.0;
    for (std::size_t flat = 0; flat < kernel.size(); ++flat) {
        double v = 1.0;
        for (std::size_t n = 0; n < ndim; ++n) v *= taps[idx[n]];
        kernel[flat] = v;
        total += v;
        for (std::size_t n = ndim; n-- > 0;) {
            if (++idx[n] < len) break;
            idx[n] = 0;
        }
    }
    for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] /= total;
    return kernel;
}

/// Isotropic Gaussian, entries exp(-sum i_n^2 / (2 sigma^2)) on the grid
/// [-radius, radius]^ndim, normalised to unit sum.
inline DenseTensor make_gaussian_kernel(double sigma, std::size_t radius, std::size_t ndim = 2) {
    if (!(sigma > 0.0)) throw std::invalid_argument("make_gaussian_kernel: sigma must be > 0");
    if (radius < 1) throw std::invalid_argument("make_gaussian_kernel: radius must be >= 1");
    if (ndim < 1) throw std::invalid_argument("make_gaussian_kernel: ndim must be >= 1");
    const std::size_t len = 2 * radius + 1;
    std::vector<std::size_t> shape(ndim, len);
    DenseTensor kernel = DenseTensor::zeros(shape);
    std::vector<std::size_t> idx(ndim, 0);
    double total = 0.0;
    for (std::size_t flat = 0; flat < kernel.size(); ++flat) {
        double sq = 0.0;
        for (std::size_t n = 0; n < ndim; ++n) {
            const double d = static_cast<double>(idx[n]) - static_cast<double>(radius);
            sq += d * d;
        }
        const double v = std::exp(-sq / (2.0 * sigma * sigma));
        kernel[flat] = v;
        total += v;
        for (std::size_t n = ndim; n-- > 0;) {
            if (++idx[n] < len) break;
            idx[n] = 0;
        }
    }
    for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] /= total;
    return kernel;
}

/// 0/1 mask with exactly round((1 - missing_rate) * numel) observed entries,
/// chosen by a seeded shuffle of all positions.
inline DenseTensor make_random_mask(const std::vector<std::size_t>& shape, double missing_rate,
                                    std::uint64_t seed) {
    if (missing_rate < 0.0 || missing_rate > 1.0) {
        throw std::invalid_argument("make_random_mask: missing_rate must be in [0, 1]");
    }
    DenseTensor mask = DenseTensor::zeros(shape);
    const std::size_t total = mask.size();
    const auto observed =
        static_cast<std::size_t>(std::llround((1.0 - missing_rate) * static_cast<double>(total)));
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < observed; ++i) mask[order[i]] = 1.0;
    return mask;
}

/// Threshold an intensity image into a 0/1 mask (>= 0.5 means observed).
inline DenseTensor mask_from_image(const DenseTensor& levels) {
    DenseTensor mask = DenseTensor::zeros(levels.shape());
    for (std::size_t i = 0; i < levels.size(); ++i) mask[i] = levels[i] >= 0.5 ? 1.0 : 0.0;
    return mask;
}

/// Inverse of mask_from_image: observed entries map to full intensity.
inline DenseTensor mask_to_image(const DenseTensor& mask) {
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0.0 && mask[i] != 1.0) {
            throw std::invalid_argument("mask_to_image: entries must be 0 or 1");
        }
    }
    return mask;
}

}  // namespace mmes
