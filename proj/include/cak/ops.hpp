#pragma once

// Differentiable primitives recorded on a Tape. Every op computes its value
// eagerly and registers a hand-written adjoint.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cak/autograd.hpp"
#include "cak/error.hpp"
#include "cak/parallel.hpp"
#include "cak/tensor.hpp"

namespace cak {

namespace detail {

// Shared inner product. Every dense channel transform goes through this loop
// so that algebraically identical configurations produce identical bits.
inline double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_odd_kernel(std::size_t k) {
    if (k == 0 || k % 2 == 0) throw ShapeError("kernel size must be odd");
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_same_shape(av, bv, "add");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const auto ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
        for (auto id : {ia, ib})
            if (Tensor* d = t.grad_sink(id))
                for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    });
}

inline Var mul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_same_shape(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const auto ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (Tensor* d = t.grad_sink(ia))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * bv[i];
        if (Tensor* d = t.grad_sink(ib))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * av[i];
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= s;
    const auto ia = a.id();
    return a.tape()->record(std::move(out), {a}, [ia, s](Tape& t, const Tensor& g) {
        if (Tensor* d = t.grad_sink(ia))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * s;
    });
}

/// Logistic function, clamped so every output lies strictly inside (0,1).
inline Var sigmoid(const Var& x) {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - 0x1.0p-53;
    Tensor out = x.value();
    for (double& v : out.data()) {
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        v = std::clamp(s, lo, hi);
    }
    const auto ix = x.id();
    Tape* tape = x.tape();
    const auto self = tape->size();
    return tape->record(std::move(out), {x}, [ix, self](Tape& t, const Tensor& g) {
        Tensor* d = t.grad_sink(ix);
        if (!d) return;
        const Tensor& s = t.value(self);
        const double fault = t.adjoint_fault() ? 1.01 : 1.0;
        for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += fault * g[i] * s[i] * (1.0 - s[i]);
    });
}

inline Var relu(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    const auto ix = x.id();
    return x.tape()->record(std::move(out), {x}, [ix](Tape& t, const Tensor& g) {
        Tensor* d = t.grad_sink(ix);
        if (!d) return;
        const Tensor& xv = t.value(ix);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) (*d)[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions

/// Compensated (Neumaier) summation, so that scalar losses over many terms
/// carry about one rounding error instead of one per term.
inline Var sum(const Var& x) {
    double acc = 0.0, comp = 0.0;
    for (double v : x.value().data()) {
        const double t = acc + v;
        comp += std::abs(acc) >= std::abs(v) ? (acc - t) + v : (v - t) + acc;
        acc = t;
    }
    acc += comp;
    const auto ix = x.id();
    return x.tape()->record(Tensor(Shape{}, acc), {x}, [ix](Tape& t, const Tensor& g) {
        if (Tensor* d = t.grad_sink(ix))
            for (double& v : d->data()) v += g[0];
    });
}

inline Var mean(const Var& x) {
    const std::size_t n = x.value().size();
    if (n == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

/// Spatial mean per channel: [N,C,H,W] -> [N,C].
inline Var gap(const Var& x) {
    const Tensor& xv = x.value();
    expect_rank(xv, 4, "gap");
    const std::size_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    if (HW == 0) throw ShapeError("empty spatial extent");
    Tensor out(Shape{N, C});
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* p = xv.data().data() + nc * HW;
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) acc += p[i];
        out[nc] = acc * inv;
    }
    const auto ix = x.id();
    return x.tape()->record(std::move(out), {x}, [ix, HW, inv](Tape& t, const Tensor& g) {
        Tensor* d = t.grad_sink(ix);
        if (!d) return;
        for (std::size_t nc = 0; nc < g.size(); ++nc) {
            double* p = d->data().data() + nc * HW;
            for (std::size_t i = 0; i < HW; ++i) p[i] += g[nc] * inv;
        }
    });
}

// ---------------------------------------------------------------------------
// Channel transforms on descriptors [N,C]

/// y[N,Cin] x W[Cout,Cin]^T -> [N,Cout].
inline Var linear(const Var& y, const Var& w) {
    const Tensor& yv = y.value();
    const Tensor& wv = w.value();
    expect_rank(yv, 2, "linear input");
    expect_rank(wv, 2, "linear weight");
    const std::size_t N = yv.dim(0), Cin = yv.dim(1), Cout = wv.dim(0);
    if (wv.dim(1) != Cin)
        throw ShapeError("linear: weight " + shape_str(wv.shape()) + " does not accept input " +
                         shape_str(yv.shape()));
    Tensor out(Shape{N, Cout});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < Cout; ++o)
            out.at(n, o) = detail::dot(&wv[o * Cin], &yv[n * Cin], Cin);
    const auto iy = y.id(), iw = w.id();
    return y.tape()->record(std::move(out), {y, w}, [iy, iw, N, Cin, Cout](Tape& t, const Tensor& g) {
        const Tensor& yv = t.value(iy);
        const Tensor& wv = t.value(iw);
        if (Tensor* dy = t.grad_sink(iy))
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < Cout; ++o)
                    for (std::size_t i = 0; i < Cin; ++i) (*dy)[n * Cin + i] += g[n * Cout + o] * wv[o * Cin + i];
        if (Tensor* dw = t.grad_sink(iw))
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < Cout; ++o)
                    for (std::size_t i = 0; i < Cin; ++i) (*dw)[o * Cin + i] += g[n * Cout + o] * yv[n * Cin + i];
    });
}

/// y[N,K] + b[K] broadcast over the batch.
inline Var add_bias(const Var& y, const Var& b) {
    const Tensor& yv = y.value();
    const Tensor& bv = b.value();
    expect_rank(yv, 2, "add_bias input");
    const std::size_t N = yv.dim(0), K = yv.dim(1);
    if (bv.size() != K) throw ShapeError("add_bias: bias length mismatch");
    Tensor out = yv;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k) out[n * K + k] += bv[k];
    const auto iy = y.id(), ib = b.id();
    return y.tape()->record(std::move(out), {y, b}, [iy, ib, N, K](Tape& t, const Tensor& g) {
        if (Tensor* dy = t.grad_sink(iy))
            for (std::size_t i = 0; i < g.size(); ++i) (*dy)[i] += g[i];
        if (Tensor* db = t.grad_sink(ib))
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < K; ++k) (*db)[k] += g[n * K + k];
    });
}

/// Diagonal transform: out[n,c] = w[c] * y[n,c].
inline Var channel_mul(const Var& y, const Var& w) {
    const Tensor& yv = y.value();
    const Tensor& wv = w.value();
    expect_rank(yv, 2, "channel_mul input");
    const std::size_t N = yv.dim(0), C = yv.dim(1);
    if (wv.size() != C)
        throw ShapeError("channel_mul: weight length " + std::to_string(wv.size()) + " != channels " +
                         std::to_string(C));
    Tensor out(yv.shape());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) out[n * C + c] = wv[c] * yv[n * C + c];
    const auto iy = y.id(), iw = w.id();
    return y.tape()->record(std::move(out), {y, w}, [iy, iw, N, C](Tape& t, const Tensor& g) {
        const Tensor& yv = t.value(iy);
        const Tensor& wv = t.value(iw);
        if (Tensor* dy = t.grad_sink(iy))
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) (*dy)[n * C + c] += g[n * C + c] * wv[c];
        if (Tensor* dw = t.grad_sink(iw))
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) (*dw)[c] += g[n * C + c] * yv[n * C + c];
    });
}

/// Block-diagonal transform with blocks[G, C/G, C/G]; group g maps channels
/// [g*C/G, (g+1)*C/G) onto themselves.
inline Var grouped_linear(const Var& y, const Var& blocks) {
    const Tensor& yv = y.value();
    const Tensor& bv = blocks.value();
    expect_rank(yv, 2, "grouped_linear input");
    expect_rank(bv, 3, "grouped_linear blocks");
    const std::size_t N = yv.dim(0), C = yv.dim(1), G = bv.dim(0), S = bv.dim(1);
    if (bv.dim(2) != S || G * S != C)
        throw ShapeError("grouped_linear: blocks " + shape_str(bv.shape()) + " do not tile " + std::to_string(C) +
                         " channels");
    Tensor out(Shape{N, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t o = 0; o < S; ++o)
                out[n * C + g * S + o] = detail::dot(&bv[(g * S + o) * S], &yv[n * C + g * S], S);
    const auto iy = y.id(), ib = blocks.id();
    return y.tape()->record(std::move(out), {y, blocks}, [iy, ib, N, C, G, S](Tape& t, const Tensor& g) {
        const Tensor& yv = t.value(iy);
        const Tensor& bv = t.value(ib);
        Tensor* dy = t.grad_sink(iy);
        Tensor* db = t.grad_sink(ib);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t grp = 0; grp < G; ++grp)
                for (std::size_t o = 0; o < S; ++o) {
                    const double go = g[n * C + grp * S + o];
                    for (std::size_t i = 0; i < S; ++i) {
                        if (dy) (*dy)[n * C + grp * S + i] += go * bv[(grp * S + o) * S + i];
                        if (db) (*db)[(grp * S + o) * S + i] += go * yv[n * C + grp * S + i];
                    }
                }
    });
}

/// Length-preserving 1D convolution along the channel axis with a shared
/// odd kernel w[k] and zero padding (k-1)/2:
/// out[n,i] = sum_j w[j] * y[n, i + j - p].
inline Var conv1d_channels(const Var& y, const Var& w) {
    const Tensor& yv = y.value();
    const Tensor& wv = w.value();
    expect_rank(yv, 2, "conv1d_channels input");
    const std::size_t k = wv.size();
    detail::require_odd_kernel(k);
    const std::size_t N = yv.dim(0), C = yv.dim(1);
    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(k / 2);
    const auto Ci = static_cast<std::ptrdiff_t>(C);
    Tensor out(Shape{N, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::ptrdiff_t i = 0; i < Ci; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = i + static_cast<std::ptrdiff_t>(j) - p;
                if (src >= 0 && src < Ci) acc += wv[j] * yv[n * C + static_cast<std::size_t>(src)];
            }
            out[n * C + static_cast<std::size_t>(i)] = acc;
        }
    const auto iy = y.id(), iw = w.id();
    return y.tape()->record(std::move(out), {y, w}, [iy, iw, N, C, k, p](Tape& t, const Tensor& g) {
        const Tensor& yv = t.value(iy);
        const Tensor& wv = t.value(iw);
        Tensor* dy = t.grad_sink(iy);
        Tensor* dw = t.grad_sink(iw);
        const auto Ci = static_cast<std::ptrdiff_t>(C);
        for (std::size_t n = 0; n < N; ++n)
            for (std::ptrdiff_t i = 0; i < Ci; ++i) {
                const double gi = g[n * C + static_cast<std::size_t>(i)];
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = i + static_cast<std::ptrdiff_t>(j) - p;
                    if (src < 0 || src >= Ci) continue;
                    const std::size_t s = n * C + static_cast<std::size_t>(src);
                    if (dy) (*dy)[s] += gi * wv[j];
                    if (dw) (*dw)[j] += gi * yv[s];
                }
            }
    });
}

/// Band transform with an independent kernel per channel, kernels[C,k]:
/// out[n,i] = sum_j kernels[i,j] * y[n, i + j - p], zero padded.
inline Var conv1d_channels_local(const Var& y, const Var& kernels) {
    const Tensor& yv = y.value();
    const Tensor& kv = kernels.value();
    expect_rank(yv, 2, "conv1d_channels_local input");
    expect_rank(kv, 2, "conv1d_channels_local kernels");
    const std::size_t N = yv.dim(0), C = yv.dim(1), k = kv.dim(1);
    detail::require_odd_kernel(k);
    if (kv.dim(0) != C) throw ShapeError("conv1d_channels_local: need one kernel per channel");
    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(k / 2);
    const auto Ci = static_cast<std::ptrdiff_t>(C);
    Tensor out(Shape{N, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::ptrdiff_t i = 0; i < Ci; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = i + static_cast<std::ptrdiff_t>(j) - p;
                if (src >= 0 && src < Ci)
                    acc += kv[static_cast<std::size_t>(i) * k + j] * yv[n * C + static_cast<std::size_t>(src)];
            }
            out[n * C + static_cast<std::size_t>(i)] = acc;
        }
    const auto iy = y.id(), ik = kernels.id();
    return y.tape()->record(std::move(out), {y, kernels}, [iy, ik, N, C, k, p](Tape& t, const Tensor& g) {
        const Tensor& yv = t.value(iy);
        const Tensor& kv = t.value(ik);
        Tensor* dy = t.grad_sink(iy);
        Tensor* dk = t.grad_sink(ik);
        const auto Ci = static_cast<std::ptrdiff_t>(C);
        for (std::size_t n = 0; n < N; ++n)
            for (std::ptrdiff_t i = 0; i < Ci; ++i) {
                const auto iu = static_cast<std::size_t>(i);
                const double gi = g[n * C + iu];
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = i + static_cast<std::ptrdiff_t>(j) - p;
                    if (src < 0 || src >= Ci) continue;
                    const std::size_t s = n * C + static_cast<std::size_t>(src);
                    if (dy) (*dy)[s] += gi * kv[iu * k + j];
                    if (dk) (*dk)[iu * k + j] += gi * yv[s];
                }
            }
    });
}

/// Channel recalibration: out[n,c,h,w] = omega[n,c] * x[n,c,h,w].
inline Var scale_channels(const Var& x, const Var& omega) {
    const Tensor& xv = x.value();
    const Tensor& wv = omega.value();
    expect_rank(xv, 4, "scale_channels input");
    expect_rank(wv, 2, "scale_channels weights");
    const std::size_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    if (wv.dim(0) != N || wv.dim(1) != C)
        throw ShapeError("scale_channels: weights " + shape_str(wv.shape()) + " do not match features " +
                         shape_str(xv.shape()));
    Tensor out = xv;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        double* p = out.data().data() + nc * HW;
        for (std::size_t i = 0; i < HW; ++i) p[i] *= wv[nc];
    }
    const auto ix = x.id(), iw = omega.id();
    return x.tape()->record(std::move(out), {x, omega}, [ix, iw, N, C, HW](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(ix);
        const Tensor& wv = t.value(iw);
        Tensor* dx = t.grad_sink(ix);
        Tensor* dw = t.grad_sink(iw);
        for (std::size_t nc = 0; nc < N * C; ++nc) {
            double acc = 0.0;
            for (std::size_t i = 0; i < HW; ++i) {
                const std::size_t e = nc * HW + i;
                if (dx) (*dx)[e] += g[e] * wv[nc];
                acc += g[e] * xv[e];
            }
            if (dw) (*dw)[nc] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// Loss

/// Mean softmax cross-entropy of logits[N,K] against integer labels.
inline Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
    const Tensor& z = logits.value();
    expect_rank(z, 2, "softmax_cross_entropy logits");
    const std::size_t N = z.dim(0), K = z.dim(1);
    if (labels.size() != N) throw ShapeError("softmax_cross_entropy: label count mismatch");
    if (N == 0) throw ShapeError("softmax_cross_entropy: empty batch");
    Tensor probs(z.shape());
    double loss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const int label = labels[n];
        if (label < 0 || static_cast<std::size_t>(label) >= K) throw ShapeError("label out of range");
        const double* row = &z[n * K];
        const double mx = *std::max_element(row, row + K);
        double denom = 0.0;
        for (std::size_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
        for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(row[k] - mx) / denom;
        loss += std::log(denom) - (row[label] - mx);
    }
    loss /= static_cast<double>(N);
    std::vector<int> lab(labels.begin(), labels.end());
    const auto iz = logits.id();
    return logits.tape()->record(
        Tensor(Shape{}, loss), {logits}, [iz, probs = std::move(probs), lab = std::move(lab), N, K](Tape& t, const Tensor& g) {
            Tensor* dz = t.grad_sink(iz);
            if (!dz) return;
            const double s = g[0] / static_cast<double>(N);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < K; ++k)
                    (*dz)[n * K + k] += s * (probs[n * K + k] - (static_cast<int>(k) == lab[n] ? 1.0 : 0.0));
        });
}

// ---------------------------------------------------------------------------
// Backbone support

struct Conv2dGeometry {
    std::size_t N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo;
    std::size_t K() const { return Cin * kh * kw; }
    std::size_t P() const { return Ho * Wo; }
};

namespace detail {

// Samples per GEMM chunk. Fixed so weight-gradient reduction order does not
// depend on the worker count.
inline constexpr std::size_t kConvChunk = 8;

// Columns for samples [n0, n0+m): row (ci,ki,kj), column s*P + oh*Wo + ow.
inline void im2col(const Conv2dGeometry& gm, const double* x, std::size_t n0, std::size_t m, RowMat& cols) {
    const std::size_t P = gm.P();
    cols.resize(static_cast<Eigen::Index>(gm.K()), static_cast<Eigen::Index>(m * P));
    for (std::size_t ci = 0; ci < gm.Cin; ++ci)
        for (std::size_t ki = 0; ki < gm.kh; ++ki)
            for (std::size_t kj = 0; kj < gm.kw; ++kj) {
                const std::size_t r = (ci * gm.kh + ki) * gm.kw + kj;
                double* row = cols.data() + r * m * P;
                for (std::size_t s = 0; s < m; ++s) {
                    const double* plane = x + ((n0 + s) * gm.Cin + ci) * gm.H * gm.W;
                    for (std::size_t oh = 0; oh < gm.Ho; ++oh) {
                        const auto ih = static_cast<std::ptrdiff_t>(oh * gm.stride + ki) -
                                        static_cast<std::ptrdiff_t>(gm.pad);
                        double* dst = row + s * P + oh * gm.Wo;
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(gm.H)) {
                            std::fill(dst, dst + gm.Wo, 0.0);
                            continue;
                        }
                        for (std::size_t ow = 0; ow < gm.Wo; ++ow) {
                            const auto iw = static_cast<std::ptrdiff_t>(ow * gm.stride + kj) -
                                            static_cast<std::ptrdiff_t>(gm.pad);
                            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(gm.W))
                                          ? 0.0
                                          : plane[static_cast<std::size_t>(ih) * gm.W + static_cast<std::size_t>(iw)];
                        }
                    }
                }
            }
}

inline void col2im(const Conv2dGeometry& gm, const RowMat& cols, std::size_t n0, std::size_t m, double* dx) {
    const std::size_t P = gm.P();
    for (std::size_t ci = 0; ci < gm.Cin; ++ci)
        for (std::size_t ki = 0; ki < gm.kh; ++ki)
            for (std::size_t kj = 0; kj < gm.kw; ++kj) {
                const std::size_t r = (ci * gm.kh + ki) * gm.kw + kj;
                const double* row = cols.data() + r * m * P;
                for (std::size_t s = 0; s < m; ++s) {
                    double* plane = dx + ((n0 + s) * gm.Cin + ci) * gm.H * gm.W;
                    for (std::size_t oh = 0; oh < gm.Ho; ++oh) {
                        const auto ih = static_cast<std::ptrdiff_t>(oh * gm.stride + ki) -
                                        static_cast<std::ptrdiff_t>(gm.pad);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(gm.H)) continue;
                        const double* src = row + s * P + oh * gm.Wo;
                        for (std::size_t ow = 0; ow < gm.Wo; ++ow) {
                            const auto iw = static_cast<std::ptrdiff_t>(ow * gm.stride + kj) -
                                            static_cast<std::ptrdiff_t>(gm.pad);
                            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(gm.W))
                                plane[static_cast<std::size_t>(ih) * gm.W + static_cast<std::size_t>(iw)] += src[ow];
                        }
                    }
                }
            }
}

} // namespace detail

/// 2D cross-correlation, x[N,Cin,H,W] with filters[Cout,Cin,k,k], zero padding.
inline Var conv2d(const Var& x, const Var& filters, std::size_t stride, std::size_t pad) {
    const Tensor& xv = x.value();
    const Tensor& fv = filters.value();
    expect_rank(xv, 4, "conv2d input");
    expect_rank(fv, 4, "conv2d filters");
    if (fv.dim(2) != fv.dim(3)) throw ShapeError("conv2d: kernels must be square");
    detail::require_odd_kernel(fv.dim(2));
    if (fv.dim(1) != xv.dim(1)) throw ShapeError("conv2d: input channel mismatch");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    Conv2dGeometry gm{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), fv.dim(0), fv.dim(2), fv.dim(3), stride, pad, 0, 0};
    if (gm.H + 2 * pad < gm.kh || gm.W + 2 * pad < gm.kw) throw ShapeError("conv2d: kernel larger than padded input");
    gm.Ho = (gm.H + 2 * pad - gm.kh) / stride + 1;
    gm.Wo = (gm.W + 2 * pad - gm.kw) / stride + 1;

    Tensor out(Shape{gm.N, gm.Cout, gm.Ho, gm.Wo});
    const std::size_t chunks = (gm.N + detail::kConvChunk - 1) / detail::kConvChunk;
    const std::size_t P = gm.P();
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t n0 = c * detail::kConvChunk;
        const std::size_t m = std::min(detail::kConvChunk, gm.N - n0);
        detail::RowMat cols;
        detail::ConstRowMap wmat(fv.data().data(), static_cast<Eigen::Index>(gm.Cout), static_cast<Eigen::Index>(gm.K()));
        // One GEMM per sample: Eigen's blocking depends on the matrix sizes,
        // so a sample's output would otherwise depend on its batch mates.
        for (std::size_t n = n0; n < n0 + m; ++n) {
            detail::im2col(gm, xv.data().data(), n, 1, cols);
            detail::RowMap y(out.data().data() + n * gm.Cout * P, static_cast<Eigen::Index>(gm.Cout),
                             static_cast<Eigen::Index>(P));
            y.noalias() = wmat * cols;
        }
    });

    const auto ix = x.id(), ifl = filters.id();
    return x.tape()->record(std::move(out), {x, filters}, [ix, ifl, gm, chunks](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(ix);
        const Tensor& fv = t.value(ifl);
        Tensor* dx = t.grad_sink(ix);
        Tensor* df = t.grad_sink(ifl);
        const std::size_t P = gm.P();
        std::vector<detail::RowMat> partial(df ? chunks : 0);
        parallel_for(chunks, [&](std::size_t c) {
            const std::size_t n0 = c * detail::kConvChunk;
            const std::size_t m = std::min(detail::kConvChunk, gm.N - n0);
            if (df) {
                detail::RowMat dy(static_cast<Eigen::Index>(gm.Cout), static_cast<Eigen::Index>(m * P));
                for (std::size_t s = 0; s < m; ++s)
                    for (std::size_t co = 0; co < gm.Cout; ++co)
                        std::copy_n(g.data().data() + ((n0 + s) * gm.Cout + co) * P, P, dy.data() + co * m * P + s * P);
                detail::RowMat cols;
                detail::im2col(gm, xv.data().data(), n0, m, cols);
                partial[c] = dy * cols.transpose();
            }
            if (dx) {
                detail::ConstRowMap wmat(fv.data().data(), static_cast<Eigen::Index>(gm.Cout),
                                         static_cast<Eigen::Index>(gm.K()));
                detail::RowMat dcols;
                for (std::size_t n = n0; n < n0 + m; ++n) {
                    detail::ConstRowMap dy_n(g.data().data() + n * gm.Cout * P, static_cast<Eigen::Index>(gm.Cout),
                                             static_cast<Eigen::Index>(P));
                    dcols.noalias() = wmat.transpose() * dy_n;
                    detail::col2im(gm, dcols, n, 1, dx->data().data());
                }
            }
        });
        if (df) {
            detail::RowMap acc(df->data().data(), static_cast<Eigen::Index>(gm.Cout), static_cast<Eigen::Index>(gm.K()));
            for (const auto& p : partial) acc += p;
        }
    });
}

/// Group normalization: per sample, channels are split into `groups` equal
/// groups and each group is normalized over (C/groups, H, W), then scaled and
/// shifted per channel. Samples never interact.
inline Var group_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups, double eps = 1e-5) {
    const Tensor& xv = x.value();
    expect_rank(xv, 4, "group_norm input");
    const std::size_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    if (groups == 0 || C % groups != 0) throw ShapeError("group_norm: channels not divisible into groups");
    if (gamma.value().size() != C || beta.value().size() != C) throw ShapeError("group_norm: affine size mismatch");
    if (HW == 0) throw ShapeError("empty spatial extent");
    const std::size_t span = (C / groups) * HW;
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor xhat(xv.shape());
    Tensor out(xv.shape());
    std::vector<double> inv_std(N * groups);
    for (std::size_t ng = 0; ng < N * groups; ++ng) {
        const double* p = &xv[ng * span];
        double acc = 0.0;
        for (std::size_t i = 0; i < span; ++i) acc += p[i];
        const double mu = acc / static_cast<double>(span);
        double sq = 0.0;
        for (std::size_t i = 0; i < span; ++i) sq += (p[i] - mu) * (p[i] - mu);
        inv_std[ng] = 1.0 / std::sqrt(sq / static_cast<double>(span) + eps);
        for (std::size_t i = 0; i < span; ++i) {
            const std::size_t e = ng * span + i;
            const std::size_t c = (e / HW) % C;
            xhat[e] = (p[i] - mu) * inv_std[ng];
            out[e] = gv[c] * xhat[e] + bv[c];
        }
    }
    const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape()->record(
        std::move(out), {x, gamma, beta},
        [ix, ig, ib, N, C, HW, groups, span, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                               const Tensor& g) {
            const Tensor& gv = t.value(ig);
            Tensor* dx = t.grad_sink(ix);
            Tensor* dg = t.grad_sink(ig);
            Tensor* db = t.grad_sink(ib);
            const auto M = static_cast<double>(span);
            for (std::size_t ng = 0; ng < N * groups; ++ng) {
                double sum_d = 0.0, sum_dx = 0.0;
                for (std::size_t i = 0; i < span; ++i) {
                    const std::size_t e = ng * span + i;
                    const std::size_t c = (e / HW) % C;
                    const double d = g[e] * gv[c];
                    sum_d += d;
                    sum_dx += d * xhat[e];
                    if (dg) (*dg)[c] += g[e] * xhat[e];
                    if (db) (*db)[c] += g[e];
                }
                if (!dx) continue;
                const double k = inv_std[ng] / M;
                for (std::size_t i = 0; i < span; ++i) {
                    const std::size_t e = ng * span + i;
                    const std::size_t c = (e / HW) % C;
                    (*dx)[e] += k * (M * g[e] * gv[c] - sum_d - xhat[e] * sum_dx);
                }
            }
        });
}

// ---------------------------------------------------------------------------

struct ValueAndGrad {
    double value = 0.0;
    std::vector<Tensor> grads;
};

/// Evaluates a scalar program and its gradient with respect to `params`.
template <class Program>
ValueAndGrad value_and_grad(Program&& f, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
    const Var out = f(tape, std::span<const Var>(vars));
    if (out.value().size() != 1)
        throw ShapeError("value_and_grad: program output is not scalar, shape " + shape_str(out.shape()));
    tape.backward(out);
    ValueAndGrad result{out.value()[0], {}};
    for (const Var& v : vars) result.grads.push_back(tape.grad(v));
    return result;
}

} // namespace cak
