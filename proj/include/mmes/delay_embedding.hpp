#pragma once

#include <mmes/dense_tensor.hpp>

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mmes {

/// Patch matrix produced by the multiway delay embedding. Column t holds the
/// vectorised window at position t of the reflect-padded tensor; rows run
/// over intra-window offsets. Both linearisations put the first mode slowest.
struct HankelMatrix {
    DenseMatrix values;                     // D x T
    std::vector<std::size_t> source_shape;  // shape of the embedded tensor
    EmbedShape tau;

    std::size_t patch_size() const { return tau.patch_size(); }
    std::size_t column_count() const { return tau.embedded_cols(source_shape); }
};

namespace detail {

/// Flat offsets (into the padded tensor) of the D intra-window positions and
/// of the T window origins, plus the per-entry window multiplicity of every
/// padded position. One struct per (shape, tau) pair; everything downstream
/// is a gather or scatter over these tables.
struct EmbedPlan {
    std::vector<std::size_t> padded_shape;
    std::vector<std::size_t> patch_offsets;   // size D
    std::vector<std::size_t> window_origins;  // size T
    std::vector<double> window_counts;        // size prod(padded_shape)

    static EmbedPlan build(const std::vector<std::size_t>& shape, const EmbedShape& tau) {
        tau.validate_for(shape);
        const std::size_t n_modes = shape.size();
        EmbedPlan plan;
        plan.padded_shape.resize(n_modes);
        for (std::size_t n = 0; n < n_modes; ++n) plan.padded_shape[n] = shape[n] + 2 * (tau.tau[n] - 1);
        const auto pstrides = row_major_strides(plan.padded_shape);

        const std::size_t d = tau.patch_size();
        plan.patch_offsets.assign(d, 0);
        {
            std::vector<std::size_t> j(n_modes, 0);
            for (std::size_t flat = 0; flat < d; ++flat) {
                std::size_t off = 0;
                for (std::size_t n = 0; n < n_modes; ++n) off += j[n] * pstrides[n];
                plan.patch_offsets[flat] = off;
                for (std::size_t n = n_modes; n-- > 0;) {
                    if (++j[n] < tau.tau[n]) break;
                    j[n] = 0;
                }
            }
        }

        const auto windows = tau.window_counts(shape);
        const std::size_t t_total = tau.embedded_cols(shape);
        plan.window_origins.assign(t_total, 0);
        {
            std::vector<std::size_t> t(n_modes, 0);
            for (std::size_t flat = 0; flat < t_total; ++flat) {
                std::size_t off = 0;
                for (std::size_t n = 0; n < n_modes; ++n) off += t[n] * pstrides[n];
                plan.window_origins[flat] = off;
                for (std::size_t n = n_modes; n-- > 0;) {
                    if (++t[n] < windows[n]) break;
                    t[n] = 0;
                }
            }
        }

        // Multiplicity of padded position p along one mode:
        // windows t with t <= p <= t + tau - 1 and 0 <= t <= W - 1.
        std::vector<std::vector<double>> per_mode(n_modes);
        for (std::size_t n = 0; n < n_modes; ++n) {
            const std::size_t len = plan.padded_shape[n];
            const auto w = static_cast<std::ptrdiff_t>(windows[n]);
            const auto t_width = static_cast<std::ptrdiff_t>(tau.tau[n]);
            per_mode[n].resize(len);
            for (std::size_t p = 0; p < len; ++p) {
                const auto sp = static_cast<std::ptrdiff_t>(p);
                const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, sp - t_width + 1);
                const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(w - 1, sp);
                per_mode[n][p] = static_cast<double>(hi - lo + 1);
            }
        }
        const std::size_t padded_total = DenseTensor::element_count(plan.padded_shape);
        plan.window_counts.assign(padded_total, 1.0);
        std::vector<std::size_t> idx(n_modes, 0);
        for (std::size_t flat = 0; flat < padded_total; ++flat) {
            double c = 1.0;
            for (std::size_t n = 0; n < n_modes; ++n) c *= per_mode[n][idx[n]];
            plan.window_counts[flat] = c;
            for (std::size_t n = n_modes; n-- > 0;) {
                if (++idx[n] < plan.padded_shape[n]) break;
                idx[n] = 0;
            }
        }
        return plan;
    }
};

}  // namespace detail

/// Duplication matrix for one mode: maps a length-(I + 2(tau-1)) padded
/// vector to the stacked windows, S[t*tau + j, t + j] = 1. tau = 1 gives the
/// I x I identity.
inline DenseMatrix duplication_matrix(std::size_t length, std::size_t window) {
    if (window < 1 || window > length) {
        throw std::invalid_argument("duplication_matrix: window must satisfy 1 <= tau <= length");
    }
    const std::size_t windows = length + window - 1;
    const std::size_t padded = length + 2 * (window - 1);
    DenseMatrix s = DenseMatrix::Zero(static_cast<Eigen::Index>(windows * window),
                                      static_cast<Eigen::Index>(padded));
    for (std::size_t t = 0; t < windows; ++t) {
        for (std::size_t j = 0; j < window; ++j) {
            s(static_cast<Eigen::Index>(t * window + j), static_cast<Eigen::Index>(t + j)) = 1.0;
        }
    }
    return s;
}

/// Forward embedding: reflect-pad, then gather every sliding window into a
/// column. Equals unfolding pad(x) x_1 S_1 ... x_N S_N with offsets grouped
/// as rows and window positions as columns.
inline HankelMatrix mdt_forward(const DenseTensor& x, const EmbedShape& tau) {
    const auto plan = detail::EmbedPlan::build(x.shape(), tau);
    const DenseTensor padded = reflection_pad(x, tau);

    const std::size_t d = plan.patch_offsets.size();
    const std::size_t t_total = plan.window_origins.size();
    HankelMatrix h;
    h.source_shape = x.shape();
    h.tau = tau;
    h.values.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t_total));
    const double* src = padded.data();
    for (std::size_t t = 0; t < t_total; ++t) {
        const std::size_t base = plan.window_origins[t];
        double* col = h.values.col(static_cast<Eigen::Index>(t)).data();
        for (std::size_t j = 0; j < d; ++j) col[j] = src[base + plan.patch_offsets[j]];
    }
    return h;
}

namespace detail {

inline void check_embedded_shape(const DenseMatrix& m, const std::vector<std::size_t>& source_shape,
                                 const EmbedShape& tau) {
    tau.validate_for(source_shape);
    if (m.rows() != static_cast<Eigen::Index>(tau.patch_size()) ||
        m.cols() != static_cast<Eigen::Index>(tau.embedded_cols(source_shape))) {
        throw std::invalid_argument("delay embedding: matrix shape does not match source shape and tau");
    }
}

/// Scatter-adds matrix entries onto the padded grid (transpose of the
/// forward gather).
inline DenseTensor scatter_to_padded(const DenseMatrix& m, const EmbedPlan& plan) {
    DenseTensor acc = DenseTensor::zeros(plan.padded_shape);
    double* dst = acc.data();
    const std::size_t d = plan.patch_offsets.size();
    for (std::size_t t = 0; t < plan.window_origins.size(); ++t) {
        const std::size_t base = plan.window_origins[t];
        const double* col = m.col(static_cast<Eigen::Index>(t)).data();
        for (std::size_t j = 0; j < d; ++j) dst[base + plan.patch_offsets[j]] += col[j];
    }
    return acc;
}

}  // namespace detail

/// Exact adjoint of mdt_forward: scatter-add columns back onto the padded
/// grid, then apply the padding adjoint.
inline DenseTensor mdt_adjoint(const DenseMatrix& m, const std::vector<std::size_t>& source_shape,
                               const EmbedShape& tau) {
    detail::check_embedded_shape(m, source_shape, tau);
    const auto plan = detail::EmbedPlan::build(source_shape, tau);
    const DenseTensor acc = detail::scatter_to_padded(m, plan);
    return reflection_pad_widths_adjoint(acc, source_shape, pad_widths_of(tau));
}

/// Pseudo-inverse of the embedding: average the window copies of every
/// padded entry, then trim the pad. Satisfies mdt_pinv(mdt_forward(x)) == x.
inline DenseTensor mdt_pinv(const DenseMatrix& m, const std::vector<std::size_t>& source_shape,
                            const EmbedShape& tau) {
    detail::check_embedded_shape(m, source_shape, tau);
    const auto plan = detail::EmbedPlan::build(source_shape, tau);
    DenseTensor acc = detail::scatter_to_padded(m, plan);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= plan.window_counts[i];
    return trim_widths(acc, pad_widths_of(tau));
}

/// Adjoint of mdt_pinv: zero-embed into the pad, divide by the window
/// multiplicities, and gather windows.
inline DenseMatrix mdt_pinv_adjoint(const DenseTensor& x, const EmbedShape& tau) {
    const auto plan = detail::EmbedPlan::build(x.shape(), tau);
    DenseTensor padded = zero_embed_widths(x, pad_widths_of(tau));
    for (std::size_t i = 0; i < padded.size(); ++i) padded[i] /= plan.window_counts[i];

    const std::size_t d = plan.patch_offsets.size();
    const std::size_t t_total = plan.window_origins.size();
    DenseMatrix out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t_total));
    const double* src = padded.data();
    for (std::size_t t = 0; t < t_total; ++t) {
        const std::size_t base = plan.window_origins[t];
        double* col = out.col(static_cast<Eigen::Index>(t)).data();
        for (std::size_t j = 0; j < d; ++j) col[j] = src[base + plan.patch_offsets[j]];
    }
    return out;
}

/// The D one-hot filters of the convolution view: filter d is 1 at the
/// intra-window offset whose row-major rank is d and 0 elsewhere.
struct OneHotWindows {
    std::vector<DenseTensor> filters;
};

inline OneHotWindows one_hot_windows(const EmbedShape& tau) {
    for (std::size_t t : tau.tau) {
        if (t < 1) throw std::invalid_argument("one_hot_windows: window must be >= 1");
    }
    OneHotWindows w;
    const std::size_t d = tau.patch_size();
    w.filters.reserve(d);
    for (std::size_t k = 0; k < d; ++k) {
        DenseTensor f = DenseTensor::zeros(tau.tau);
        f[k] = 1.0;
        w.filters.push_back(std::move(f));
    }
    return w;
}

namespace detail {

/// Full valid cross-correlation of `padded` with `filter` (no one-hot
/// shortcut; this path exists to cross-check the gather implementation).
inline void correlate_valid(const DenseTensor& padded, const DenseTensor& filter, double* out) {
    const auto& pshape = padded.shape();
    const auto& fshape = filter.shape();
    const std::size_t n_modes = pshape.size();
    std::vector<std::size_t> out_shape(n_modes);
    for (std::size_t n = 0; n < n_modes; ++n) out_shape[n] = pshape[n] - fshape[n] + 1;
    const auto pstrides = row_major_strides(pshape);

    const std::size_t out_total = DenseTensor::element_count(out_shape);
    std::vector<std::size_t> t(n_modes, 0);
    for (std::size_t flat = 0; flat < out_total; ++flat) {
        std::size_t base = 0;
        for (std::size_t n = 0; n < n_modes; ++n) base += t[n] * pstrides[n];
        double acc = 0.0;
        std::vector<std::size_t> j(n_modes, 0);
        for (std::size_t fj = 0; fj < filter.size(); ++fj) {
            std::size_t off = 0;
            for (std::size_t n = 0; n < n_modes; ++n) off += j[n] * pstrides[n];
            acc += padded[base + off] * filter[fj];
            for (std::size_t n = n_modes; n-- > 0;) {
                if (++j[n] < fshape[n]) break;
                j[n] = 0;
            }
        }
        out[flat] = acc;
        for (std::size_t n = n_modes; n-- > 0;) {
            if (++t[n] < out_shape[n]) break;
            t[n] = 0;
        }
    }
}

}  // namespace detail

/// Convolution view of the forward embedding: row d is the valid
/// cross-correlation of the padded tensor with one-hot filter d.
inline HankelMatrix mdt_forward_conv(const DenseTensor& x, const EmbedShape& tau) {
    tau.validate_for(x.shape());
    const DenseTensor padded = reflection_pad(x, tau);
    const OneHotWindows windows = one_hot_windows(tau);

    HankelMatrix h;
    h.source_shape = x.shape();
    h.tau = tau;
    const std::size_t d = tau.patch_size();
    const std::size_t t_total = tau.embedded_cols(x.shape());
    h.values.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t_total));
    std::vector<double> row(t_total);
    for (std::size_t k = 0; k < d; ++k) {
        detail::correlate_valid(padded, windows.filters[k], row.data());
        for (std::size_t t = 0; t < t_total; ++t) {
            h.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = row[t];
        }
    }
    return h;
}

/// Convolution view of the pseudo-inverse: transposed correlation of every
/// row with its one-hot filter, trim, then scale by 1/D. Interior window
/// multiplicity is exactly D = prod tau_n once the pad is trimmed away,
/// which makes this equal to mdt_pinv.
inline DenseTensor mdt_pinv_conv(const DenseMatrix& m, const std::vector<std::size_t>& source_shape,
                                 const EmbedShape& tau) {
    detail::check_embedded_shape(m, source_shape, tau);
    const std::size_t n_modes = source_shape.size();
    std::vector<std::size_t> padded_shape(n_modes);
    for (std::size_t n = 0; n < n_modes; ++n) padded_shape[n] = source_shape[n] + 2 * (tau.tau[n] - 1);
    const auto pstrides = detail::row_major_strides(padded_shape);
    const auto windows = tau.window_counts(source_shape);
    const OneHotWindows filters = one_hot_windows(tau);

    DenseTensor acc = DenseTensor::zeros(padded_shape);
    const std::size_t t_total = tau.embedded_cols(source_shape);
    std::vector<std::size_t> t(n_modes, 0);
    for (std::size_t flat = 0; flat < t_total; ++flat) {
        std::size_t base = 0;
        for (std::size_t n = 0; n < n_modes; ++n) base += t[n] * pstrides[n];
        for (std::size_t k = 0; k < filters.filters.size(); ++k) {
            const DenseTensor& f = filters.filters[k];
            const double v = m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(flat));
            std::vector<std::size_t> j(n_modes, 0);
            for (std::size_t fj = 0; fj < f.size(); ++fj) {
                std::size_t off = 0;
                for (std::size_t n = 0; n < n_modes; ++n) off += j[n] * pstrides[n];
                acc[base + off] += v * f[fj];
                for (std::size_t n = n_modes; n-- > 0;) {
                    if (++j[n] < f.shape()[n]) break;
                    j[n] = 0;
                }
            }
        }
        for (std::size_t n = n_modes; n-- > 0;) {
            if (++t[n] < windows[n]) break;
            t[n] = 0;
        }
    }

    DenseTensor trimmed = trim_widths(acc, pad_widths_of(tau));
    const double scale = 1.0 / static_cast<double>(tau.patch_size());
    for (std::size_t i = 0; i < trimmed.size(); ++i) trimmed[i] *= scale;
    return trimmed;
}

}  // namespace mmes
