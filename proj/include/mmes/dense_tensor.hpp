#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmes {

using DenseMatrix = Eigen::MatrixXd;

/// Dense N-way real tensor. Flat buffer in row-major order (last index
/// fastest); every other module builds on this layout, so it is fixed here
/// and must not change.
class DenseTensor {
public:
    DenseTensor() = default;

    /// Takes ownership of `data`; rejects shape/data size mismatch and
    /// non-finite values.
    DenseTensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (data_.size() != element_count(shape_)) {
            throw std::invalid_argument("DenseTensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape product " +
                                        std::to_string(element_count(shape_)));
        }
        for (double v : data_) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("DenseTensor: non-finite value in constructor");
            }
        }
    }

    static DenseTensor zeros(std::vector<std::size_t> shape) {
        check_shape(shape);
        DenseTensor t;
        t.data_.assign(element_count(shape), 0.0);
        t.shape_ = std::move(shape);
        return t;
    }

    static DenseTensor constant(std::vector<std::size_t> shape, double value) {
        DenseTensor t = zeros(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t flat) const { return data_[flat]; }
    double& operator[](std::size_t flat) { return data_[flat]; }

    double at(std::initializer_list<std::size_t> idx) const { return data_[flat_index(idx)]; }
    double& at(std::initializer_list<std::size_t> idx) { return data_[flat_index(idx)]; }

    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size()) {
            throw std::invalid_argument("DenseTensor::at: index rank mismatch");
        }
        std::size_t flat = 0;
        std::size_t mode = 0;
        for (std::size_t i : idx) {
            if (i >= shape_[mode]) throw std::out_of_range("DenseTensor::at: index out of range");
            flat = flat * shape_[mode] + i;
            ++mode;
        }
        return flat;
    }

    Eigen::Map<const Eigen::VectorXd> as_vector() const {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }
    Eigen::Map<Eigen::VectorXd> as_vector() {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return n;
    }

private:
    static void check_shape(const std::vector<std::size_t>& shape) {
        if (shape.empty()) throw std::invalid_argument("DenseTensor: rank must be >= 1");
        for (std::size_t s : shape) {
            if (s == 0) throw std::invalid_argument("DenseTensor: every mode length must be >= 1");
        }
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Per-mode sliding-window sizes tau_1..tau_N.
struct EmbedShape {
    std::vector<std::size_t> tau;

    EmbedShape() = default;
    explicit EmbedShape(std::vector<std::size_t> t) : tau(std::move(t)) {}
    EmbedShape(std::initializer_list<std::size_t> t) : tau(t) {}

    /// D = prod tau_n
    std::size_t patch_size() const {
        std::size_t d = 1;
        for (std::size_t t : tau) d *= t;
        return d;
    }

    /// Windows per mode: I_n + tau_n - 1.
    std::vector<std::size_t> window_counts(const std::vector<std::size_t>& shape) const {
        std::vector<std::size_t> w(shape.size());
        for (std::size_t n = 0; n < shape.size(); ++n) w[n] = shape[n] + tau[n] - 1;
        return w;
    }

    /// T = prod (I_n + tau_n - 1)
    std::size_t embedded_cols(const std::vector<std::size_t>& shape) const {
        std::size_t t = 1;
        for (std::size_t w : window_counts(shape)) t *= w;
        return t;
    }

    void validate_for(const std::vector<std::size_t>& shape) const {
        if (tau.size() != shape.size()) {
            throw std::invalid_argument("EmbedShape: rank mismatch with tensor shape");
        }
        for (std::size_t n = 0; n < tau.size(); ++n) {
            if (tau[n] < 1 || tau[n] > shape[n]) {
                throw std::invalid_argument("EmbedShape: window " + std::to_string(tau[n]) +
                                            " too large for mode length " + std::to_string(shape[n]));
            }
        }
    }
};

namespace detail {

inline std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t n = shape.size(); n-- > 1;) s[n - 1] = s[n] * shape[n];
    return s;
}

/// Mirror a signed offset into [0, len): reflection about the boundary
/// element without repeating it. Valid for |q| <= 2(len-1).
inline std::size_t mirror_index(std::ptrdiff_t q, std::size_t len) {
    if (q < 0) q = -q;
    const auto last = static_cast<std::ptrdiff_t>(len - 1);
    if (q > last) q = 2 * last - q;
    return static_cast<std::size_t>(q);
}

}  // namespace detail

/// Reflection padding with an explicit width per mode. Width w_n requires
/// w_n <= I_n - 1 so a single reflection suffices.
inline DenseTensor reflection_pad_widths(const DenseTensor& x, const std::vector<std::size_t>& widths) {
    const auto& shape = x.shape();
    if (widths.size() != shape.size()) {
        throw std::invalid_argument("reflection_pad: width rank mismatch");
    }
    std::vector<std::size_t> out_shape(shape.size());
    std::vector<std::vector<std::size_t>> maps(shape.size());
    for (std::size_t n = 0; n < shape.size(); ++n) {
        if (widths[n] > shape[n] - 1) {
            throw std::invalid_argument("reflection_pad: width " + std::to_string(widths[n]) +
                                        " too large for mode length " + std::to_string(shape[n]));
        }
        out_shape[n] = shape[n] + 2 * widths[n];
        maps[n].resize(out_shape[n]);
        for (std::size_t p = 0; p < out_shape[n]; ++p) {
            maps[n][p] = detail::mirror_index(static_cast<std::ptrdiff_t>(p) -
                                              static_cast<std::ptrdiff_t>(widths[n]),
                                              shape[n]);
        }
    }

    DenseTensor out = DenseTensor::zeros(out_shape);
    const auto src_strides = detail::row_major_strides(shape);
    const std::size_t total = out.size();
    std::vector<std::size_t> idx(out_shape.size(), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t src = 0;
        for (std::size_t n = 0; n < out_shape.size(); ++n) src += maps[n][idx[n]] * src_strides[n];
        out[flat] = x[src];
        for (std::size_t n = out_shape.size(); n-- > 0;) {
            if (++idx[n] < out_shape[n]) break;
            idx[n] = 0;
        }
    }
    return out;
}

/// Exact adjoint of reflection_pad_widths: scatter-adds every padded entry
/// back onto the source index it was copied from.
inline DenseTensor reflection_pad_widths_adjoint(const DenseTensor& y,
                                                 const std::vector<std::size_t>& source_shape,
                                                 const std::vector<std::size_t>& widths) {
    if (widths.size() != source_shape.size() || y.ndim() != source_shape.size()) {
        throw std::invalid_argument("reflection_pad_adjoint: rank mismatch");
    }
    std::vector<std::vector<std::size_t>> maps(source_shape.size());
    for (std::size_t n = 0; n < source_shape.size(); ++n) {
        const std::size_t padded = source_shape[n] + 2 * widths[n];
        if (y.shape()[n] != padded) {
            throw std::invalid_argument("reflection_pad_adjoint: padded shape mismatch");
        }
        maps[n].resize(padded);
        for (std::size_t p = 0; p < padded; ++p) {
            maps[n][p] = detail::mirror_index(static_cast<std::ptrdiff_t>(p) -
                                              static_cast<std::ptrdiff_t>(widths[n]),
                                              source_shape[n]);
        }
    }

    DenseTensor out = DenseTensor::zeros(source_shape);
    const auto src_strides = detail::row_major_strides(source_shape);
    const auto& out_shape = y.shape();
    std::vector<std::size_t> idx(out_shape.size(), 0);
    for (std::size_t flat = 0; flat < y.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t n = 0; n < out_shape.size(); ++n) src += maps[n][idx[n]] * src_strides[n];
        out[src] += y[flat];
        for (std::size_t n = out_shape.size(); n-- > 0;) {
            if (++idx[n] < out_shape[n]) break;
            idx[n] = 0;
        }
    }
    return out;
}

inline std::vector<std::size_t> pad_widths_of(const EmbedShape& tau) {
    std::vector<std::size_t> w(tau.tau.size());
    for (std::size_t n = 0; n < w.size(); ++n) w[n] = tau.tau[n] - 1;
    return w;
}

/// pad_tau: reflection padding of width tau_n - 1 per mode.
inline DenseTensor reflection_pad(const DenseTensor& x, const EmbedShape& tau) {
    tau.validate_for(x.shape());
    return reflection_pad_widths(x, pad_widths_of(tau));
}

inline DenseTensor trim_widths(const DenseTensor& x, const std::vector<std::size_t>& widths) {
    const auto& shape = x.shape();
    if (widths.size() != shape.size()) throw std::invalid_argument("trim: width rank mismatch");
    std::vector<std::size_t> out_shape(shape.size());
    for (std::size_t n = 0; n < shape.size(); ++n) {
        if (shape[n] < 2 * widths[n] + 1) {
            throw std::invalid_argument("trim: mode length " + std::to_string(shape[n]) +
                                        " underflows trim width " + std::to_string(widths[n]));
        }
        out_shape[n] = shape[n] - 2 * widths[n];
    }
    DenseTensor out = DenseTensor::zeros(out_shape);
    const auto src_strides = detail::row_major_strides(shape);
    std::vector<std::size_t> idx(out_shape.size(), 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t n = 0; n < out_shape.size(); ++n) src += (idx[n] + widths[n]) * src_strides[n];
        out[flat] = x[src];
        for (std::size_t n = out_shape.size(); n-- > 0;) {
            if (++idx[n] < out_shape[n]) break;
            idx[n] = 0;
        }
    }
    return out;
}

/// trim_tau: removes tau_n - 1 leading and trailing slices per mode.
/// trim(reflection_pad(x, tau), tau) == x exactly.
inline DenseTensor trim(const DenseTensor& x, const EmbedShape& tau) {
    return trim_widths(x, pad_widths_of(tau));
}

/// Adjoint of trim: embeds x into a larger tensor with zero borders.
inline DenseTensor zero_embed_widths(const DenseTensor& x, const std::vector<std::size_t>& widths) {
    const auto& shape = x.shape();
    if (widths.size() != shape.size()) throw std::invalid_argument("zero_embed: width rank mismatch");
    std::vector<std::size_t> out_shape(shape.size());
    for (std::size_t n = 0; n < shape.size(); ++n) out_shape[n] = shape[n] + 2 * widths[n];
    DenseTensor out = DenseTensor::zeros(out_shape);
    const auto dst_strides = detail::row_major_strides(out_shape);
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
        std::size_t dst = 0;
        for (std::size_t n = 0; n < shape.size(); ++n) dst += (idx[n] + widths[n]) * dst_strides[n];
        out[dst] = x[flat];
        for (std::size_t n = shape.size(); n-- > 0;) {
            if (++idx[n] < shape[n]) break;
            idx[n] = 0;
        }
    }
    return out;
}

/// Unfolds the tensor into a (prod row lengths) x (prod col lengths) matrix.
/// row_modes and col_modes together must be a permutation of {0..N-1}; within
/// each group the listed-first mode varies slowest.
inline DenseMatrix unfold_group(const DenseTensor& x, const std::vector<std::size_t>& row_modes,
                                const std::vector<std::size_t>& col_modes) {
    const auto& shape = x.shape();
    const std::size_t n_modes = shape.size();
    std::vector<bool> seen(n_modes, false);
    auto mark = [&](const std::vector<std::size_t>& modes) {
        for (std::size_t m : modes) {
            if (m >= n_modes || seen[m]) {
                throw std::invalid_argument("unfold_group: invalid mode partition");
            }
            seen[m] = true;
        }
    };
    mark(row_modes);
    mark(col_modes);
    if (row_modes.size() + col_modes.size() != n_modes) {
        throw std::invalid_argument("unfold_group: invalid mode partition");
    }

    std::size_t rows = 1, cols = 1;
    for (std::size_t m : row_modes) rows *= shape[m];
    for (std::size_t m : col_modes) cols *= shape[m];

    // Per-mode contribution of each source index to the (row, col) pair.
    const auto src_strides = detail::row_major_strides(shape);
    std::vector<std::size_t> row_stride(n_modes, 0), col_stride(n_modes, 0);
    {
        std::size_t s = 1;
        for (std::size_t k = row_modes.size(); k-- > 0;) {
            row_stride[row_modes[k]] = s;
            s *= shape[row_modes[k]];
        }
        s = 1;
        for (std::size_t k = col_modes.size(); k-- > 0;) {
            col_stride[col_modes[k]] = s;
            s *= shape[col_modes[k]];
        }
    }

    DenseMatrix out(rows, cols);
    std::vector<std::size_t> idx(n_modes, 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
        std::size_t r = 0, c = 0;
        for (std::size_t n = 0; n < n_modes; ++n) {
            r += idx[n] * row_stride[n];
            c += idx[n] * col_stride[n];
        }
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = x[flat];
        for (std::size_t n = n_modes; n-- > 0;) {
            if (++idx[n] < shape[n]) break;
            idx[n] = 0;
        }
    }
    return out;
}

/// Inverse of unfold_group for the given target shape.
inline DenseTensor fold_group(const DenseMatrix& m, const std::vector<std::size_t>& row_modes,
                              const std::vector<std::size_t>& col_modes,
                              const std::vector<std::size_t>& shape) {
    DenseTensor out = DenseTensor::zeros(shape);
    const std::size_t n_modes = shape.size();
    std::vector<bool> seen(n_modes, false);
    for (std::size_t mo : row_modes) seen[mo] = true;
    for (std::size_t mo : col_modes) {
        if (mo >= n_modes || seen[mo]) throw std::invalid_argument("fold_group: invalid mode partition");
        seen[mo] = true;
    }
    if (row_modes.size() + col_modes.size() != n_modes) {
        throw std::invalid_argument("fold_group: invalid mode partition");
    }
    std::size_t rows = 1, cols = 1;
    for (std::size_t mo : row_modes) rows *= shape[mo];
    for (std::size_t mo : col_modes) cols *= shape[mo];
    if (m.rows() != static_cast<Eigen::Index>(rows) || m.cols() != static_cast<Eigen::Index>(cols)) {
        throw std::invalid_argument("fold_group: matrix shape does not match mode partition");
    }

    std::vector<std::size_t> row_stride(n_modes, 0), col_stride(n_modes, 0);
    {
        std::size_t s = 1;
        for (std::size_t k = row_modes.size(); k-- > 0;) {
            row_stride[row_modes[k]] = s;
            s *= shape[row_modes[k]];
        }
        s = 1;
        for (std::size_t k = col_modes.size(); k-- > 0;) {
            col_stride[col_modes[k]] = s;
            s *= shape[col_modes[k]];
        }
    }

    std::vector<std::size_t> idx(n_modes, 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t r = 0, c = 0;
        for (std::size_t n = 0; n < n_modes; ++n) {
            r += idx[n] * row_stride[n];
            c += idx[n] * col_stride[n];
        }
        out[flat] = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        for (std::size_t n = n_modes; n-- > 0;) {
            if (++idx[n] < shape[n]) break;
            idx[n] = 0;
        }
    }
    return out;
}

/// Standard mode-n product: contracts `m`'s columns against the tensor's
/// `mode` axis; output mode length equals m's row count.
inline DenseTensor mode_n_product(const DenseTensor& x, const DenseMatrix& m, std::size_t mode) {
    const auto& shape = x.shape();
    if (mode >= shape.size()) throw std::invalid_argument("mode_n_product: mode out of range");
    if (m.cols() != static_cast<Eigen::Index>(shape[mode])) {
        throw std::invalid_argument("mode_n_product: matrix columns " + std::to_string(m.cols()) +
                                    " do not match mode length " + std::to_string(shape[mode]));
    }
    std::vector<std::size_t> rest;
    for (std::size_t n = 0; n < shape.size(); ++n) {
        if (n != mode) rest.push_back(n);
    }
    const DenseMatrix unfolded = unfold_group(x, {mode}, rest);
    DenseMatrix product(m.rows(), unfolded.cols());
    product.noalias() = m * unfolded;

    std::vector<std::size_t> out_shape = shape;
    out_shape[mode] = static_cast<std::size_t>(m.rows());
    return fold_group(product, {mode}, rest, out_shape);
}

inline double dot(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("dot: shape mismatch");
    return a.as_vector().dot(b.as_vector());
}

inline double squared_norm(const DenseTensor& a) { return a.as_vector().squaredNorm(); }

}  // namespace mmes
