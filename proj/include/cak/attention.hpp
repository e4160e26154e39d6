#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cak/autograd.hpp"
#include "cak/error.hpp"
#include "cak/kernel_policy.hpp"
#include "cak/ops.hpp"
#include "cak/rng.hpp"
#include "cak/tensor.hpp"

namespace cak {

enum class AttentionKind { none, se, se_var1, se_var2, se_var3, se_gc, eca_ns, eca };

inline constexpr std::array<std::pair<AttentionKind, std::string_view>, 8> kAttentionNames{{
    {AttentionKind::none, "none"},
    {AttentionKind::se, "se"},
    {AttentionKind::se_var1, "se-var1"},
    {AttentionKind::se_var2, "se-var2"},
    {AttentionKind::se_var3, "se-var3"},
    {AttentionKind::se_gc, "se-gc"},
    {AttentionKind::eca_ns, "eca-ns"},
    {AttentionKind::eca, "eca"},
}};

inline std::string_view to_string(AttentionKind kind) {
    for (const auto& [k, name] : kAttentionNames)
        if (k == kind) return name;
    return "?";
}

inline AttentionKind parse_attention_kind(std::string_view name) {
    for (const auto& [k, n] : kAttentionNames)
        if (n == name) return k;
    throw ConfigError("unknown attention kind '" + std::string(name) + "'");
}

/// Selects a channel-attention variant and its hyperparameters. `kernel`
/// empty means the kernel size is chosen from `channels` by `policy`.
struct AttentionConfig {
    AttentionKind kind = AttentionKind::none;
    std::size_t channels = 0;
    std::size_t reduction = 16;          // se
    std::size_t groups = 1;              // se-gc
    std::optional<std::size_t> kernel{}; // eca-ns, eca
    KernelPolicy policy{};

    bool uses_kernel() const { return kind == AttentionKind::eca || kind == AttentionKind::eca_ns; }

    std::size_t kernel_size() const { return kernel ? *kernel : adaptive_kernel_size(channels, policy); }

    /// Same hyperparameters applied to another channel count.
    AttentionConfig with_channels(std::size_t c) const {
        AttentionConfig cfg = *this;
        cfg.channels = c;
        return cfg;
    }

    /// `kernel_fits` additionally requires k <= C, which module construction
    /// demands but the bare zero-padded transforms do not.
    void validate(bool kernel_fits = true) const {
        if (kind == AttentionKind::none) return;
        if (channels < 1) throw ConfigError("attention: channels must be >= 1");
        switch (kind) {
        case AttentionKind::se:
            if (reduction < 1 || channels % reduction != 0)
                throw ConfigError("se: channels " + std::to_string(channels) + " not divisible by r=" +
                                  std::to_string(reduction));
            break;
        case AttentionKind::se_gc:
            if (groups < 1 || channels % groups != 0)
                throw ConfigError("se-gc: channels " + std::to_string(channels) + " not divisible by G=" +
                                  std::to_string(groups));
            break;
        case AttentionKind::eca:
        case AttentionKind::eca_ns: {
            policy.validate();
            const std::size_t k = kernel_size();
            if (k % 2 == 0) throw ConfigError("kernel size must be odd");
            if (kernel_fits && k > channels)
                throw ConfigError("kernel size " + std::to_string(k) + " exceeds channels " + std::to_string(channels));
            break;
        }
        default: break;
        }
    }
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Learnable arrays of one attention module, in a fixed order per variant.
struct AttentionParams {
    std::vector<NamedTensor> tensors;

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.value.size();
        return n;
    }
};

enum class AttentionInit { uniform, zero };

/// Shapes and fan-in of every learnable array of a variant.
inline std::vector<std::pair<NamedTensor, std::size_t>> attention_layout(const AttentionConfig& cfg) {
    cfg.validate(false);
    const std::size_t C = cfg.channels;
    switch (cfg.kind) {
    case AttentionKind::none:
    case AttentionKind::se_var1: return {};
    case AttentionKind::se: {
        const std::size_t hidden = C / cfg.reduction;
        return {{{"w1", Tensor(Shape{hidden, C})}, C}, {{"w2", Tensor(Shape{C, hidden})}, hidden}};
    }
    case AttentionKind::se_var2: return {{{"w", Tensor(Shape{C})}, 1}};
    case AttentionKind::se_var3: return {{{"w", Tensor(Shape{C, C})}, C}};
    case AttentionKind::se_gc: {
        const std::size_t s = C / cfg.groups;
        return {{{"blocks", Tensor(Shape{cfg.groups, s, s})}, s}};
    }
    case AttentionKind::eca_ns: {
        const std::size_t k = cfg.kernel_size();
        return {{{"kernels", Tensor(Shape{C, k})}, k}};
    }
    case AttentionKind::eca: {
        const std::size_t k = cfg.kernel_size();
        return {{{"kernel", Tensor(Shape{k})}, k}};
    }
    }
    return {};
}

/// Zero-mean uniform draws with half-width 1/sqrt(fan_in), or all zeros.
inline AttentionParams init_attention_params(const AttentionConfig& cfg, Rng& rng,
                                             AttentionInit init = AttentionInit::uniform) {
    AttentionParams params;
    for (auto& [named, fan_in] : attention_layout(cfg)) {
        if (init == AttentionInit::uniform) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : named.value.data()) v = rng.uniform(-bound, bound);
        }
        params.tensors.push_back(std::move(named));
    }
    return params;
}

struct AttentionVars {
    Var omega; // [N,C]
    Var out;   // [N,C,H,W]
};

/// Channel weights and recalibrated features for x[N,C,H,W]. `params` are
/// the variant's arrays in attention_layout order.
inline AttentionVars attend(const AttentionConfig& cfg, std::span<const Var> params, const Var& x) {
    cfg.validate(false);
    if (x.value().rank() != 4) throw ShapeError("attention input must be [N,C,H,W]");
    if (x.value().dim(1) != cfg.channels)
        throw ShapeError("attention: input has " + std::to_string(x.value().dim(1)) + " channels, config has " +
                         std::to_string(cfg.channels));
    const auto expected = attention_layout(cfg);
    if (params.size() != expected.size()) throw ShapeError("attention: wrong number of parameter arrays");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].shape() != expected[i].first.value.shape())
            throw ShapeError("attention: parameter '" + expected[i].first.name + "' has shape " +
                             shape_str(params[i].shape()) + ", expected " +
                             shape_str(expected[i].first.value.shape()));

    if (cfg.kind == AttentionKind::none) {
        const Tensor& xv = x.value();
        Var ones = x.tape()->constant(Tensor(Shape{xv.dim(0), xv.dim(1)}, 1.0));
        return {ones, x};
    }
    const Var y = gap(x);
    Var logits;
    switch (cfg.kind) {
    case AttentionKind::se: logits = linear(relu(linear(y, params[0])), params[1]); break;
    case AttentionKind::se_var1: logits = y; break;
    case AttentionKind::se_var2: logits = channel_mul(y, params[0]); break;
    case AttentionKind::se_var3: logits = linear(y, params[0]); break;
    case AttentionKind::se_gc: logits = grouped_linear(y, params[0]); break;
    case AttentionKind::eca_ns: logits = conv1d_channels_local(y, params[0]); break;
    case AttentionKind::eca: logits = conv1d_channels(y, params[0]); break;
    case AttentionKind::none: break;
    }
    const Var omega = sigmoid(logits);
    return {omega, scale_channels(x, omega)};
}

// Value-level entry points for each variant.

struct AttentionResult {
    Tensor omega;
    Tensor out;
};

inline AttentionResult attention_forward(const AttentionConfig& cfg, const AttentionParams& params, const Tensor& x) {
    Tape tape;
    const Var xv = tape.constant(x);
    std::vector<Var> vars;
    for (const auto& t : params.tensors) vars.push_back(tape.constant(t.value));
    const auto r = attend(cfg, vars, xv);
    return {r.omega.value(), r.out.value()};
}

namespace detail {
inline AttentionResult run_variant(AttentionKind kind, const Tensor& x, std::vector<NamedTensor> tensors,
                                   std::size_t reduction = 16, std::size_t groups = 1,
                                   std::optional<std::size_t> kernel = std::nullopt) {
    expect_rank(x, 4, "attention input");
    AttentionConfig cfg{kind, x.dim(1), reduction, groups, kernel, {}};
    return attention_forward(cfg, AttentionParams{std::move(tensors)}, x);
}
} // namespace detail

/// sigma(W2 relu(W1 gap(x))), w1[C/r,C], w2[C,C/r].
inline AttentionResult se_forward(const Tensor& x, const Tensor& w1, const Tensor& w2) {
    expect_rank(w1, 2, "se w1");
    if (w1.dim(0) == 0 || x.rank() != 4 || x.dim(1) % w1.dim(0) != 0) throw ConfigError("se: C mod r != 0");
    return detail::run_variant(AttentionKind::se, x, {{"w1", w1}, {"w2", w2}}, x.dim(1) / w1.dim(0));
}

inline AttentionResult se_var1_forward(const Tensor& x) { return detail::run_variant(AttentionKind::se_var1, x, {}); }

inline AttentionResult se_var2_forward(const Tensor& x, const Tensor& w_diag) {
    return detail::run_variant(AttentionKind::se_var2, x, {{"w", w_diag}});
}

inline AttentionResult se_var3_forward(const Tensor& x, const Tensor& w_full) {
    return detail::run_variant(AttentionKind::se_var3, x, {{"w", w_full}});
}

/// blocks[G, C/G, C/G].
inline AttentionResult se_gc_forward(const Tensor& x, const Tensor& blocks) {
    expect_rank(blocks, 3, "se-gc blocks");
    return detail::run_variant(AttentionKind::se_gc, x, {{"blocks", blocks}}, 16, blocks.dim(0));
}

/// kernels[C, k].
inline AttentionResult eca_ns_forward(const Tensor& x, const Tensor& kernels) {
    expect_rank(kernels, 2, "eca-ns kernels");
    return detail::run_variant(AttentionKind::eca_ns, x, {{"kernels", kernels}}, 16, 1, kernels.dim(1));
}

/// Shared kernel[k], no bias.
inline AttentionResult eca_forward(const Tensor& x, const Tensor& kernel) {
    return detail::run_variant(AttentionKind::eca, x, {{"kernel", kernel}}, 16, 1, kernel.size());
}

} // namespace cak
