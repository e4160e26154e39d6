#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cak/attention.hpp"
#include "cak/band_oracle.hpp"
#include "cak/gradcheck.hpp"
#include "cak/rng.hpp"

using namespace cak;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Tensor random(Shape s, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(std::move(s));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// x[n,c,:,:] = values[n*C + c] everywhere.
Tensor channel_constant(std::size_t N, std::size_t C, std::size_t S, const std::vector<double>& values) {
    Tensor x(Shape{N, C, S, S});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < S * S; ++i) x[(n * C + c) * S * S + i] = values[n * C + c];
    return x;
}

AttentionConfig make(AttentionKind kind, std::size_t C) {
    AttentionConfig cfg;
    cfg.kind = kind;
    cfg.channels = C;
    cfg.reduction = 4;
    cfg.groups = 4;
    cfg.kernel = 3;
    return cfg;
}

const std::vector<AttentionKind> kVariants{AttentionKind::se,    AttentionKind::se_var1, AttentionKind::se_var2,
                                           AttentionKind::se_var3, AttentionKind::se_gc,   AttentionKind::eca_ns,
                                           AttentionKind::eca};

} // namespace

TEST(Se, ZeroWeightsGiveHalf) {
    Rng rng(1);
    const Tensor x = random(Shape{2, 8, 3, 3}, rng);
    const auto r = se_forward(x, Tensor(Shape{2, 8}), Tensor(Shape{8, 2}));
    for (double w : r.omega.data()) EXPECT_EQ(w, 0.5);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r.out[i], x[i] / 2);
}

TEST(Se, HandChain) {
    // y = [1, 2, 3, 4]; W1 y = [1, -4] -> relu [1, 0]; W2 [1, 0] = [1, 0, -1, 2].
    const Tensor x = channel_constant(1, 4, 3, {1, 2, 3, 4});
    const Tensor w1(Shape{2, 4}, {1, 0, 0, 0, 0, 0, 0, -1});
    const Tensor w2(Shape{4, 2}, {1, 5, 0, 5, -1, 5, 2, 5});
    const auto r = se_forward(x, w1, w2);
    const std::vector<double> z{1, 0, -1, 2};
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(r.omega[c], logistic(z[c]), 1e-15);
    EXPECT_NEAR(r.out.at(0, 3, 1, 1), 4.0 * logistic(2.0), 1e-15);
}

TEST(Se, ReductionMustDivideChannels) {
    AttentionConfig cfg = make(AttentionKind::se, 6);
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_THROW(se_forward(Tensor(Shape{1, 6, 2, 2}), Tensor(Shape{4, 6}), Tensor(Shape{6, 4})), ConfigError);
}

TEST(SeVar1, Examples) {
    const auto zero = se_var1_forward(Tensor(Shape{2, 3, 2, 2}));
    for (double w : zero.omega.data()) EXPECT_EQ(w, 0.5);
    const std::vector<double> v{-1.5, 0.25, 3.0};
    const auto r = se_var1_forward(channel_constant(1, 3, 4, v));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(r.omega[c], logistic(v[c]), 1e-15);
}

TEST(SeVar2, ZeroAndDiagonalEquivalence) {
    Rng rng(2);
    const Tensor x = random(Shape{3, 6, 4, 4}, rng);
    const Tensor held = se_var2_forward(x, Tensor(Shape{6})).omega;
    for (double w : held.data()) EXPECT_EQ(w, 0.5);
    const Tensor d = random(Shape{6}, rng);
    Tensor full(Shape{6, 6});
    for (std::size_t i = 0; i < 6; ++i) full[i * 6 + i] = d[i];
    const auto a = se_var2_forward(x, d);
    const auto b = se_var3_forward(x, full);
    EXPECT_EQ(a.omega, b.omega);
    EXPECT_EQ(a.out, b.out);
}

TEST(SeVar2, LengthMismatch) { EXPECT_THROW(se_var2_forward(Tensor(Shape{1, 4, 2, 2}), Tensor(Shape{3})), Error); }

TEST(SeVar3, ZeroAndIdentity) {
    Rng rng(3);
    const Tensor x = random(Shape{2, 5, 3, 3}, rng);
    const Tensor held = se_var3_forward(x, Tensor(Shape{5, 5})).omega;
    for (double w : held.data()) EXPECT_EQ(w, 0.5);
    Tensor eye(Shape{5, 5});
    for (std::size_t i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
    EXPECT_EQ(se_var3_forward(x, eye).omega, se_var1_forward(x).omega);
    EXPECT_THROW(se_var3_forward(x, Tensor(Shape{5, 4})), Error);
}

TEST(SeGc, SingleGroupIsFullMatrix) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t C = 1 + rng.below(24);
        const Tensor x = random(Shape{2, C, 3, 3}, rng);
        const Tensor w = random(Shape{C, C}, rng);
        const auto a = se_gc_forward(x, w.reshaped(Shape{1, C, C}));
        const auto b = se_var3_forward(x, w);
        EXPECT_EQ(a.omega, b.omega);
        EXPECT_EQ(a.out, b.out);
    }
}

TEST(SeGc, OneGroupPerChannelIsDiagonal) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t C = 1 + rng.below(24);
        const Tensor x = random(Shape{2, C, 3, 3}, rng);
        const Tensor d = random(Shape{C}, rng);
        const auto a = se_gc_forward(x, d.reshaped(Shape{C, 1, 1}));
        const auto b = se_var2_forward(x, d);
        EXPECT_EQ(a.omega, b.omega);
        EXPECT_EQ(a.out, b.out);
    }
}

TEST(SeGc, BlockDiagonalMatchesDenseOracle) {
    Rng rng(6);
    const std::size_t C = 12, G = 3, S = C / G;
    const Tensor x = random(Shape{2, C, 2, 2}, rng);
    const Tensor blocks = random(Shape{G, S, S}, rng);
    Tensor dense(Shape{C, C});
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t i = 0; i < S; ++i)
            for (std::size_t j = 0; j < S; ++j) dense[(g * S + i) * C + g * S + j] = blocks[(g * S + i) * S + j];
    const auto a = se_gc_forward(x, blocks);
    const auto b = se_var3_forward(x, dense);
    for (std::size_t i = 0; i < a.omega.size(); ++i) EXPECT_NEAR(a.omega[i], b.omega[i], 1e-15);
}

TEST(SeGc, GroupsMustDivideChannels) {
    AttentionConfig cfg = make(AttentionKind::se_gc, 10);
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(EcaNs, KernelOneIsDiagonal) {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t C = 1 + rng.below(30);
        const Tensor x = random(Shape{2, C, 3, 3}, rng);
        const Tensor k = random(Shape{C, 1}, rng);
        const auto a = eca_ns_forward(x, k);
        const auto b = se_var2_forward(x, k.reshaped(Shape{C}));
        EXPECT_EQ(a.omega, b.omega);
        EXPECT_EQ(a.out, b.out);
    }
}

TEST(EcaNs, HandSlidingSum) {
    Tensor ones(Shape{4, 3});
    ones.fill(1.0);
    const auto r = eca_ns_forward(channel_constant(1, 4, 2, {1, 2, 3, 4}), ones);
    const std::vector<double> pre{3, 6, 9, 7};
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(r.omega[c], logistic(pre[c]), 1e-15);
}

TEST(Eca, ZeroKernelHalvesInput) {
    Rng rng(8);
    const Tensor x = random(Shape{2, 9, 3, 3}, rng);
    const auto r = eca_forward(x, Tensor(Shape{3}));
    for (double w : r.omega.data()) EXPECT_EQ(w, 0.5);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r.out[i], x[i] / 2);
}

TEST(Eca, SharedKernelEqualsRepeatedLocalKernels) {
    Rng rng(9);
    const std::size_t C = 10;
    const Tensor x = random(Shape{2, C, 3, 3}, rng);
    const Tensor k = random(Shape{5}, rng);
    Tensor rep(Shape{C, 5});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < 5; ++j) rep[c * 5 + j] = k[j];
    EXPECT_EQ(eca_forward(x, k).omega, eca_ns_forward(x, rep).omega);
}

TEST(Eca, EvenKernelRejected) { EXPECT_THROW(eca_forward(Tensor(Shape{1, 4, 2, 2}), Tensor(Shape{2})), Error); }

TEST(BandOracle, Structure) {
    const std::vector<double> kern{2.0, 3.0, 5.0}; // a, b, c
    const auto W = oracle::band_matrix(3, kern);
    EXPECT_EQ(W[0], (std::vector<double>{3, 5, 0}));
    EXPECT_EQ(W[1], (std::vector<double>{2, 3, 5}));
    EXPECT_EQ(W[2], (std::vector<double>{0, 2, 3}));
    const auto D = oracle::band_matrix(4, std::vector<double>{7.0});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(D[i][j], i == j ? 7.0 : 0.0);
}

TEST(BandOracle, KernelOneIsElementwise) {
    const Tensor y(Shape{1, 3}, {0.5, -1.0, 2.0});
    const std::vector<double> kern{1.5};
    const Tensor o = oracle::band_matrix_oracle(y, kern);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(o[i], logistic(1.5 * y[i]), 1e-15);
}

TEST(BandOracle, EcaAgreesOnRandomCases) {
    Rng rng(10);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t C = 1 + rng.below(64);
        const std::size_t k = 2 * rng.below(4) + 1;
        const std::size_t N = 1 + rng.below(3);
        const Tensor x = random(Shape{N, C, 2, 2}, rng);
        const Tensor kern = random(Shape{k}, rng);
        const Tensor omega = eca_forward(x, kern).omega;
        Tensor y(Shape{N, C});
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                y[n * C + c] = (x.at(n, c, 0, 0) + x.at(n, c, 0, 1) + x.at(n, c, 1, 0) + x.at(n, c, 1, 1)) / 4.0;
        const Tensor ref = oracle::band_matrix_oracle(y, kern.vec());
        for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(omega[i], ref[i], 1e-12) << "C=" << C << " k=" << k;
    }
}

TEST(Attention, InvariantsForEveryVariant) {
    Rng rng(11);
    for (AttentionKind kind : kVariants)
        for (int trial = 0; trial < 10; ++trial) {
            const AttentionConfig cfg = make(kind, 16);
            const auto params = init_attention_params(cfg, rng);
            const Tensor x = random(Shape{3, 16, 4, 4}, rng, -3.0, 3.0);
            const auto r = attention_forward(cfg, params, x);
            ASSERT_EQ(r.out.shape(), x.shape());
            ASSERT_EQ(r.omega.shape(), (Shape{3, 16}));
            for (double w : r.omega.data()) {
                EXPECT_GT(w, 0.0);
                EXPECT_LT(w, 1.0);
            }
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i] != 0.0) {
                    EXPECT_LT(std::abs(r.out[i]), std::abs(x[i])) << to_string(kind);
                }
        }
}

TEST(Attention, SaturatedLogitsStayStrictlyInside) {
    // Huge weights push the pre-activation far beyond the double sigmoid's range.
    Tensor x(Shape{1, 4, 2, 2});
    x.fill(1.0);
    x[0] = -1.0;
    x[1] = -1.0;
    x[2] = -1.0;
    x[3] = -1.0;
    Tensor d(Shape{4});
    d.fill(1e4);
    const auto r = se_var2_forward(x, d);
    for (double w : r.omega.data()) {
        EXPECT_GT(w, 0.0);
        EXPECT_LT(w, 1.0);
    }
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(std::abs(r.out[i]), std::abs(x[i]));
}

TEST(Attention, NoneIsIdentity) {
    Rng rng(12);
    const Tensor x = random(Shape{2, 3, 2, 2}, rng);
    AttentionConfig cfg;
    cfg.channels = 3;
    const auto r = attention_forward(cfg, {}, x);
    EXPECT_EQ(r.out, x);
    for (double w : r.omega.data()) EXPECT_EQ(w, 1.0);
}

TEST(Attention, ParseNames) {
    for (AttentionKind k : kVariants) EXPECT_EQ(parse_attention_kind(to_string(k)), k);
    EXPECT_EQ(parse_attention_kind("eca-ns"), AttentionKind::eca_ns);
    EXPECT_THROW(parse_attention_kind("cbam"), ConfigError);
}

TEST(Attention, KernelLargerThanChannelsRejectedForModules) {
    AttentionConfig cfg = make(AttentionKind::eca, 2);
    cfg.kernel = 5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_NO_THROW(cfg.validate(false));
    cfg.kernel = 4;
    EXPECT_THROW(cfg.validate(false), ConfigError);
}

TEST(Attention, InitScaleFollowsFanIn) {
    Rng rng(13);
    AttentionConfig cfg = make(AttentionKind::se_var3, 64);
    const auto p = init_attention_params(cfg, rng);
    for (double v : p.tensors[0].value.data()) EXPECT_LE(std::abs(v), 1.0 / 8.0);
    const auto z = init_attention_params(cfg, rng, AttentionInit::zero);
    for (double v : z.tensors[0].value.data()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionGradCheck, EveryVariantPasses) {
    for (AttentionKind kind : kVariants)
        for (std::uint64_t seed : {0u, 1u}) {
            AttentionConfig cfg = make(kind, 16);
            GradCheckOptions opt;
            opt.seed = seed;
            for (const auto& r : attention_gradcheck(cfg, opt))
                EXPECT_TRUE(r.passed) << to_string(kind) << "/" << r.group << " " << r.max_rel_error;
        }
}

TEST(AttentionGradCheck, LargerKernelsAndGroups) {
    AttentionConfig eca = make(AttentionKind::eca, 32);
    eca.kernel = 7;
    EXPECT_TRUE(all_passed(attention_gradcheck(eca)));
    AttentionConfig ns = make(AttentionKind::eca_ns, 24);
    ns.kernel = 5;
    EXPECT_TRUE(all_passed(attention_gradcheck(ns)));
    AttentionConfig gc = make(AttentionKind::se_gc, 24);
    gc.groups = 6;
    EXPECT_TRUE(all_passed(attention_gradcheck(gc)));
    AttentionConfig se = make(AttentionKind::se, 16);
    se.reduction = 4;
    EXPECT_TRUE(all_passed(attention_gradcheck(se)));
}

TEST(AttentionGradCheck, CorruptedAdjointFails) {
    GradCheckOptions opt;
    opt.adjoint_fault = true;
    EXPECT_FALSE(all_passed(attention_gradcheck(make(AttentionKind::eca, 16), opt)));
}

// Seed 25 draws an SE configuration whose w1 gradient has an entry near 6e-7.
// At step 1e-5 the central difference is limited by the rounding of the
// forward pass, not by the adjoint; a wider step settles it.
TEST(AttentionGradCheck, TinyGradientsAreLimitedByRoundingNotByTheAdjoint) {
    AttentionConfig se = make(AttentionKind::se, 16);
    GradCheckOptions fine;
    fine.seed = 25;
    GradCheckOptions wide = fine;
    wide.step = 1e-3;
    const auto at_fine = attention_gradcheck(se, fine);
    const auto at_wide = attention_gradcheck(se, wide);
    EXPECT_GT(at_fine[0].max_rel_error, 1e-6);
    EXPECT_LT(at_wide[0].max_rel_error, at_fine[0].max_rel_error / 10);
    EXPECT_LT(at_wide[0].max_rel_error, 1e-6);
}
