#pragma once

#include <mmes/dense_tensor.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace mmes {

/// Chaotic test-signal source. Defaults sit in the canonical chaotic regime;
/// the burn-in prefix is integrated and discarded so the returned samples
/// start on the attractor.
struct LorenzConfig {
    double sigma_l = 10.0;
    double rho = 28.0;
    double beta = 8.0 / 3.0;
    double dt = 0.01;
    std::size_t steps = 2000;
    std::size_t burn_in = 3000;
    std::array<double, 3> initial = {1.0, 1.0, 1.0};
    std::size_t component = 0;

    void validate() const {
        if (!(dt > 0.0)) throw std::invalid_argument("LorenzConfig: dt must be > 0");
        if (steps < 1) throw std::invalid_argument("LorenzConfig: steps must be >= 1");
        if (component > 2) throw std::invalid_argument("LorenzConfig: component must be 0, 1 or 2");
    }
};

namespace detail {

inline std::array<double, 3> lorenz_rhs(const std::array<double, 3>& s, const LorenzConfig& cfg) {
    return {cfg.sigma_l * (s[1] - s[0]), s[0] * (cfg.rho - s[2]) - s[1],
            s[0] * s[1] - cfg.beta * s[2]};
}

inline std::array<double, 3> rk4_step(const std::array<double, 3>& s, const LorenzConfig& cfg) {
    const double h = cfg.dt;
    const auto k1 = lorenz_rhs(s, cfg);
    std::array<double, 3> t;
    for (int i = 0; i < 3; ++i) t[i] = s[i] + 0.5 * h * k1[i];
    const auto k2 = lorenz_rhs(t, cfg);
    for (int i = 0; i < 3; ++i) t[i] = s[i] + 0.5 * h * k2[i];
    const auto k3 = lorenz_rhs(t, cfg);
    for (int i = 0; i < 3; ++i) t[i] = s[i] + h * k3[i];
    const auto k4 = lorenz_rhs(t, cfg);
    std::array<double, 3> out;
    for (int i = 0; i < 3; ++i) {
        out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return out;
}

}  // namespace detail

/// Raw observed component, classical 4th-order Runge-Kutta, no rescaling.
inline DenseTensor lorenz_trajectory(const LorenzConfig& cfg) {
    cfg.validate();
    std::array<double, 3> state = cfg.initial;
    for (std::size_t i = 0; i < cfg.burn_in; ++i) {
        state = detail::rk4_step(state, cfg);
        if (!std::isfinite(state[0]) || !std::isfinite(state[1]) || !std::isfinite(state[2])) {
            throw std::runtime_error("lorenz_trajectory: state diverged during burn-in");
        }
    }
    DenseTensor out = DenseTensor::zeros({cfg.steps});
    for (std::size_t i = 0; i < cfg.steps; ++i) {
        out[i] = state[cfg.component];
        state = detail::rk4_step(state, cfg);
        if (!std::isfinite(state[0]) || !std::isfinite(state[1]) || !std::isfinite(state[2])) {
            throw std::runtime_error("lorenz_trajectory: state diverged at sample " +
                                     std::to_string(i));
        }
    }
    return out;
}

/// Observed component rescaled affinely to [-1, 1]; a constant trajectory
/// (for instance from the fixed point at the origin) centers to zero.
inline DenseTensor lorenz_generate(const LorenzConfig& cfg) {
    DenseTensor x = lorenz_trajectory(cfg);
    double lo = x[0], hi = x[0];
    for (std::size_t i = 0; i < x.size(); ++i) {
        lo = std::min(lo, x[i]);
        hi = std::max(hi, x[i]);
    }
    if (hi == lo) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.0;
        return x;
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * ((x[i] - lo) / (hi - lo)) - 1.0;
    return x;
}

struct CorruptResult {
    DenseTensor signal;  // observed entries carry x + noise, the rest are zero
    DenseTensor mask;    // 1 observed, 0 missing
    std::size_t clipped_entries = 0;  // occlusion cells lost to bounds or overlap
};

/// Additive Gaussian noise, block occlusions, then llround(rate * n) random
/// drops among the still-observed entries. Noise is drawn for every position
/// up front, so an observed entry always equals x plus its own draw no
/// matter what the mask removed elsewhere.
inline CorruptResult corrupt_signal(const DenseTensor& x, double noise_std, double missing_rate,
                                    const std::vector<std::pair<std::size_t, std::size_t>>& occlusions,
                                    std::uint64_t seed) {
    if (x.ndim() != 1) throw std::invalid_argument("corrupt_signal: expected a 1-D signal");
    if (noise_std < 0.0) throw std::invalid_argument("corrupt_signal: noise_std must be >= 0");
    if (missing_rate < 0.0 || missing_rate > 1.0) {
        throw std::invalid_argument("corrupt_signal: missing_rate must be in [0, 1]");
    }
    const std::size_t n = x.size();
    std::mt19937_64 rng(seed);

    CorruptResult result;
    result.signal = x;
    if (noise_std > 0.0) {
        std::normal_distribution<double> dist(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) result.signal[i] += noise_std * dist(rng);
    }

    result.mask = DenseTensor::constant({n}, 1.0);
    std::size_t requested = 0;
    std::size_t newly_hidden = 0;
    for (const auto& [start, length] : occlusions) {
        requested += length;
        const std::size_t begin = std::min(start, n);
        const std::size_t end = length > n - begin ? n : begin + length;
        for (std::size_t i = begin; i < end; ++i) {
            if (result.mask[i] == 1.0) {
                result.mask[i] = 0.0;
                ++newly_hidden;
            }
        }
    }
    result.clipped_entries = requested - newly_hidden;

    std::vector<std::size_t> observed;
    observed.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (result.mask[i] == 1.0) observed.push_back(i);
    }
    const auto drops = static_cast<std::size_t>(
        std::min<long long>(std::llround(missing_rate * static_cast<double>(n)),
                            static_cast<long long>(observed.size())));
    std::shuffle(observed.begin(), observed.end(), rng);
    for (std::size_t k = 0; k < drops; ++k) result.mask[observed[k]] = 0.0;

    for (std::size_t i = 0; i < n; ++i) {
        if (result.mask[i] == 0.0) result.signal[i] = 0.0;
    }
    return result;
}

}  // namespace mmes
