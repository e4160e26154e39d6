#pragma once

// Central finite-difference verification of tape adjoints.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cak/attention.hpp"
#include "cak/autograd.hpp"
#include "cak/ops.hpp"
#include "cak/rng.hpp"

namespace cak {

using Program = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
    double step = 1e-5;
    std::size_t samples = 100; // coordinates per group; all of them if the group is smaller
    double tolerance = 1e-6;
    std::uint64_t seed = 0;
    bool adjoint_fault = false;
};

struct GradCheckResult {
    std::string group;
    std::size_t size = 0;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    bool passed = false;
};

/// |a - n| / max(|a|, |n|); two values that are both zero up to 1e-12 compare
/// by absolute difference instead.
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max(std::abs(analytic), std::abs(numeric));
    const double diff = std::abs(analytic - numeric);
    return denom < 1e-12 ? diff : diff / denom;
}

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Probe weights with random sign and magnitude in [0.5, 1].
inline Tensor probe_weights(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w(shape);
    for (double& v : w.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.0);
    return w;
}

/// Compensated sum of w[i] * (a[i] - b[i]).
inline double weighted_difference(const Tensor& w, const Tensor& a, const Tensor& b) {
    double acc = 0.0, comp = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = w[i] * (a[i] - b[i]);
        const double t = acc + v;
        comp += std::abs(acc) >= std::abs(v) ? (acc - t) + v : (v - t) + acc;
        acc = t;
    }
    return acc + comp;
}

} // namespace detail

/// Central-difference check of `program`'s gradient with respect to each
/// input. A non-scalar program output is reduced to the scalar sum(w * out)
/// with fixed probe weights w; its difference quotient is then formed
/// element-wise, sum(w * (out(+h) - out(-h))) / 2h, so the rounding of the
/// full sum does not swamp small derivatives.
inline std::vector<GradCheckResult> gradient_check(const Program& program, const std::vector<NamedTensor>& inputs,
                                                   const GradCheckOptions& opt = {}) {
    auto evaluate = [&](const std::vector<Tensor>& values) {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& v : values) vars.push_back(tape.constant(v));
        return program(tape, vars).value();
    };

    Tape tape;
    tape.set_adjoint_fault(opt.adjoint_fault);
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(in.value, true));
    const Var out = program(tape, vars);
    const bool scalar = out.value().size() == 1;
    const Tensor probe = scalar ? Tensor(out.shape(), 1.0) : detail::probe_weights(out.shape(), opt.seed ^ 0xa0761d6478bd642fULL);
    tape.backward(scalar ? out : sum(mul(out, tape.constant(probe))));

    std::vector<Tensor> values;
    for (const auto& in : inputs) values.push_back(in.value);

    Rng rng(opt.seed ^ 0x5851f42d4c957f2dULL);
    std::vector<GradCheckResult> results;
    for (std::size_t g = 0; g < inputs.size(); ++g) {
        const Tensor analytic = tape.grad(vars[g]);
        const std::size_t n = values[g].size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), 0);
        if (n > opt.samples) {
            for (std::size_t i = 0; i < opt.samples; ++i) std::swap(coords[i], coords[i + rng.below(n - i)]);
            coords.resize(opt.samples);
        }
        GradCheckResult res{inputs[g].name, n, coords.size(), 0.0, true};
        for (std::size_t c : coords) {
            const double saved = values[g][c];
            values[g][c] = saved + opt.step;
            const Tensor up = evaluate(values);
            values[g][c] = saved - opt.step;
            const Tensor down = evaluate(values);
            values[g][c] = saved;
            const double numeric = detail::weighted_difference(probe, up, down) / (2.0 * opt.step);
            res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic[c], numeric));
        }
        res.passed = res.max_rel_error < opt.tolerance;
        results.push_back(res);
    }
    return results;
}

inline bool all_passed(const std::vector<GradCheckResult>& results) {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}


/// Finite-difference check of one attention variant's gradient with respect
/// to its parameters and its input. Inputs are uniform in [-2, 2]; parameters
/// use the module's default initialization.
inline std::vector<GradCheckResult> attention_gradcheck(const AttentionConfig& cfg, const GradCheckOptions& opt = {},
                                                        std::size_t batch = 2, std::size_t spatial = 4) {
    cfg.validate();
    Rng rng(opt.seed);
    std::vector<NamedTensor> inputs;
    for (auto& t : init_attention_params(cfg, rng).tensors) inputs.push_back(std::move(t));
    inputs.push_back({"x", detail::random_tensor(Shape{batch, cfg.channels, spatial, spatial}, rng)});
    const Program program = [cfg](Tape&, std::span<const Var> v) {
        return attend(cfg, v.first(v.size() - 1), v.back()).out;
    };
    return gradient_check(program, inputs, opt);
}

struct PrimitiveCase {
    std::string name;
    Program program;
    std::vector<NamedTensor> inputs;
};

/// One program per tensor primitive, on random inputs in [-2, 2].
inline std::vector<PrimitiveCase> primitive_cases(std::uint64_t seed = 0) {
    Rng rng(seed);
    auto rt = [&](Shape s) { return detail::random_tensor(std::move(s), rng); };
    std::vector<PrimitiveCase> cases;
    cases.push_back({"gap", [](Tape&, std::span<const Var> v) { return gap(v[0]); },
                     {{"x", rt({3, 4, 5, 5})}}});
    cases.push_back({"sigmoid", [](Tape&, std::span<const Var> v) { return sigmoid(v[0]); },
                     {{"x", rt({4, 40})}}});
    cases.push_back({"relu", [](Tape&, std::span<const Var> v) { return relu(v[0]); },
                     {{"x", rt({4, 40})}}});
    cases.push_back({"conv1d_channels",
                     [](Tape&, std::span<const Var> v) { return conv1d_channels(v[0], v[1]); },
                     {{"y", rt({4, 30})}, {"w", rt({5})}}});
    cases.push_back({"conv1d_channels_local",
                     [](Tape&, std::span<const Var> v) { return conv1d_channels_local(v[0], v[1]); },
                     {{"y", rt({4, 30})}, {"kernels", rt({30, 3})}}});
    cases.push_back({"scale_channels",
                     [](Tape&, std::span<const Var> v) { return scale_channels(v[0], v[1]); },
                     {{"x", rt({2, 6, 4, 4})}, {"omega", rt({2, 6})}}});
    cases.push_back({"linear", [](Tape&, std::span<const Var> v) { return linear(v[0], v[1]); },
                     {{"y", rt({4, 12})}, {"W", rt({9, 12})}}});
    cases.push_back({"channel_mul", [](Tape&, std::span<const Var> v) { return channel_mul(v[0], v[1]); },
                     {{"y", rt({4, 12})}, {"w", rt({12})}}});
    cases.push_back({"grouped_linear",
                     [](Tape&, std::span<const Var> v) { return grouped_linear(v[0], v[1]); },
                     {{"y", rt({4, 12})}, {"blocks", rt({3, 4, 4})}}});
    cases.push_back({"add_bias", [](Tape&, std::span<const Var> v) { return add_bias(v[0], v[1]); },
                     {{"y", rt({4, 7})}, {"b", rt({7})}}});
    cases.push_back({"add", [](Tape&, std::span<const Var> v) { return add(v[0], v[1]); },
                     {{"a", rt({3, 11})}, {"b", rt({3, 11})}}});
    cases.push_back({"mul", [](Tape&, std::span<const Var> v) { return mul(v[0], v[1]); },
                     {{"a", rt({3, 11})}, {"b", rt({3, 11})}}});
    cases.push_back({"sum", [](Tape&, std::span<const Var> v) { return sum(mul(v[0], v[0])); },
                     {{"x", rt({5, 9})}}});
    cases.push_back({"mean", [](Tape&, std::span<const Var> v) { return mean(mul(v[0], v[0])); },
                     {{"x", rt({5, 9})}}});
    cases.push_back({"conv2d_stride1",
                     [](Tape&, std::span<const Var> v) { return conv2d(v[0], v[1], 1, 1); },
                     {{"x", rt({3, 3, 6, 6})}, {"filters", rt({4, 3, 3, 3})}}});
    cases.push_back({"conv2d_stride2",
                     [](Tape&, std::span<const Var> v) { return conv2d(v[0], v[1], 2, 1); },
                     {{"x", rt({10, 2, 7, 7})}, {"filters", rt({3, 2, 3, 3})}}});
    cases.push_back({"group_norm",
                     [](Tape&, std::span<const Var> v) { return group_norm(v[0], v[1], v[2], 2); },
                     {{"x", rt({2, 4, 3, 3})}, {"gamma", rt({4})}, {"beta", rt({4})}}});
    const std::vector<int> labels{0, 3, 1, 4, 2, 2};
    cases.push_back({"softmax_cross_entropy",
                     [labels](Tape&, std::span<const Var> v) { return softmax_cross_entropy(v[0], labels); },
                     {{"logits", rt({6, 5})}}});
    return cases;
}

} // namespace cak
