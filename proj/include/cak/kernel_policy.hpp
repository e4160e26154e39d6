#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "cak/error.hpp"

namespace cak {

enum class TieBreak { down, up };

/// Parameters of the channel-count to kernel-size mapping.
struct KernelPolicy {
    std::int64_t gamma = 2;
    std::int64_t b = 1;
    TieBreak tie_break = TieBreak::down;

    void validate() const {
        if (gamma < 1) throw ConfigError("kernel policy: gamma must be >= 1");
    }
};

/// Channel count implied by kernel size: 2^(gamma*k - b).
inline std::uint64_t phi(std::uint64_t k, const KernelPolicy& policy = {}) {
    policy.validate();
    if (k < 1) throw ConfigError("phi: kernel size must be >= 1");
    if (k > 64) throw ConfigError("phi: exponent overflow");
    const std::int64_t exponent = policy.gamma * static_cast<std::int64_t>(k) - policy.b;
    if (exponent < 0) throw ConfigError("phi: negative exponent " + std::to_string(exponent));
    if (exponent > 63) throw ConfigError("phi: exponent overflow (" + std::to_string(exponent) + ")");
    return std::uint64_t{1} << exponent;
}

/// Nearest odd integer to log2(C)/gamma + b/gamma, never below 1. When t is
/// an even integer the two odd neighbours are equidistant and `tie_break`
/// picks one.
inline std::size_t adaptive_kernel_size(std::size_t channels, const KernelPolicy& policy = {}) {
    policy.validate();
    if (channels < 1) throw ConfigError("adaptive_kernel_size: channels must be >= 1");
    const double numerator = std::log2(static_cast<double>(channels)) + static_cast<double>(policy.b);
    const auto gamma = static_cast<double>(policy.gamma);
    // Odd numbers are 2m+1; find the nearest m to u = (t - 1) / 2.
    const double u = (numerator - gamma) / (2.0 * gamma);
    const double lower = std::floor(u);
    const double frac = u - lower;
    double m = lower;
    if (frac > 0.5 || (frac == 0.5 && policy.tie_break == TieBreak::up)) m = lower + 1.0;
    if (m < 0.0) return 1;
    return 2 * static_cast<std::size_t>(m) + 1;
}

} // namespace cak
