#include <cmath>
#include <cstdint>

#include <gtest/gtest.h>

#include "cak/kernel_policy.hpp"

using namespace cak;

namespace {

// Brute-force nearest odd integer: scan odd candidates and keep the closest,
// preferring the smaller one on an exact tie.
std::size_t nearest_odd_oracle(double t, bool prefer_up) {
    std::size_t best = 1;
    double best_d = std::abs(t - 1.0);
    for (std::size_t k = 3; k < 200; k += 2) {
        const double d = std::abs(t - static_cast<double>(k));
        if (d < best_d || (d == best_d && prefer_up)) {
            best = k;
            best_d = d;
        }
    }
    return best;
}

} // namespace

TEST(KernelPolicy, PhiExamples) {
    EXPECT_EQ(phi(1), 2u);
    EXPECT_EQ(phi(3), 32u);
    EXPECT_EQ(phi(5), 512u);
}

TEST(KernelPolicy, PhiErrors) {
    EXPECT_THROW(phi(0), ConfigError);
    EXPECT_THROW(phi(40), ConfigError);
    EXPECT_THROW(phi(1, {2, 5, TieBreak::down}), ConfigError);
    EXPECT_THROW(phi(3, {0, 1, TieBreak::down}), ConfigError);
}

TEST(KernelPolicy, AdaptiveExamples) {
    EXPECT_EQ(adaptive_kernel_size(32), 3u);
    EXPECT_EQ(adaptive_kernel_size(256), 5u);
    EXPECT_EQ(adaptive_kernel_size(512), 5u);
    EXPECT_EQ(adaptive_kernel_size(1024), 5u);
    EXPECT_EQ(adaptive_kernel_size(2048), 5u);
    EXPECT_EQ(adaptive_kernel_size(2), 1u);
}

TEST(KernelPolicy, TieBreakUp) {
    const KernelPolicy up{2, 1, TieBreak::up};
    EXPECT_EQ(adaptive_kernel_size(2048, up), 7u);
    EXPECT_EQ(adaptive_kernel_size(8, up), 3u); // t = 2
    EXPECT_EQ(adaptive_kernel_size(8), 1u);
}

TEST(KernelPolicy, ZeroChannelsRejected) { EXPECT_THROW(adaptive_kernel_size(0), ConfigError); }

TEST(KernelPolicy, MatchesBruteForceNearestOdd) {
    for (std::int64_t gamma : {1, 2, 3})
        for (std::int64_t b : {0, 1, 2, 3})
            for (bool up : {false, true})
                for (std::size_t c = 1; c <= 5000; c += 7) {
                    const double t = std::log2(static_cast<double>(c)) / static_cast<double>(gamma) +
                                     static_cast<double>(b) / static_cast<double>(gamma);
                    const KernelPolicy p{gamma, b, up ? TieBreak::up : TieBreak::down};
                    EXPECT_EQ(adaptive_kernel_size(c, p), nearest_odd_oracle(t, up)) << c << " " << gamma << " " << b;
                }
}

TEST(KernelPolicy, OddMonotoneAndSlowGrowing) {
    std::size_t prev = adaptive_kernel_size(1);
    for (std::size_t c = 1; c <= (std::size_t{1} << 20); ++c) {
        const std::size_t k = adaptive_kernel_size(c);
        ASSERT_EQ(k % 2, 1u) << c;
        ASSERT_GE(k, prev) << c;
        prev = k;
    }
    for (std::size_t c = 1; c <= (std::size_t{1} << 19); c = c * 3 + 1)
        EXPECT_LE(adaptive_kernel_size(2 * c), adaptive_kernel_size(c) + 2) << c;
}

TEST(KernelPolicy, RoundTrip) {
    for (std::uint64_t k : {1u, 3u, 5u, 7u, 9u}) EXPECT_EQ(adaptive_kernel_size(phi(k)), k);
}
