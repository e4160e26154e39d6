#pragma once

// Independent reference for shared-kernel channel attention: materializes the
// full C x C band matrix and applies it densely. Only used to check the 1D
// convolution path, so it shares no code with ops.hpp.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cak/error.hpp"
#include "cak/tensor.hpp"

namespace cak::oracle {

/// Row i holds the kernel centred on column i; entries outside [0, C) are dropped.
inline std::vector<std::vector<double>> band_matrix(std::size_t channels, std::span<const double> kernel) {
    const std::size_t k = kernel.size();
    if (k % 2 == 0) throw ShapeError("kernel size must be odd");
    const long half = static_cast<long>(k / 2);
    std::vector<std::vector<double>> m(channels, std::vector<double>(channels, 0.0));
    for (long i = 0; i < static_cast<long>(channels); ++i)
        for (long j = 0; j < static_cast<long>(channels); ++j) {
            const long offset = j - i + half;
            if (offset >= 0 && offset < static_cast<long>(k))
                m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = kernel[static_cast<std::size_t>(offset)];
        }
    return m;
}

/// sigma(W_k y) per batch row for y[N,C].
inline Tensor band_matrix_oracle(const Tensor& y, std::span<const double> kernel) {
    expect_rank(y, 2, "band_matrix_oracle");
    const std::size_t N = y.dim(0), C = y.dim(1);
    const auto w = band_matrix(C, kernel);
    Tensor out(Shape{N, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < C; ++i) {
            double z = 0.0;
            for (std::size_t j = 0; j < C; ++j) z += w[i][j] * y.at(n, j);
            out.at(n, i) = 1.0 / (1.0 + std::exp(-z));
        }
    return out;
}

} // namespace cak::oracle
