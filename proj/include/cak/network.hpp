#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cak/attention.hpp"
#include "cak/autograd.hpp"
#include "cak/dataset.hpp"
#include "cak/error.hpp"
#include "cak/ops.hpp"
#include "cak/rng.hpp"
#include "cak/tensor.hpp"

namespace cak {

struct StageSpec {
    std::size_t channels = 0;
    std::size_t blocks = 0;
    std::size_t stride = 1;
    bool operator==(const StageSpec&) const = default;
};

/// Residual micro-network layout. `attention.channels` is ignored; each
/// block applies the attention config at its own output width.
struct NetworkSpec {
    std::size_t in_channels = 3;
    std::size_t stem_channels = 16;
    std::size_t stem_kernel = 3;
    std::vector<StageSpec> stages{{16, 2, 1}, {32, 2, 2}, {64, 2, 2}};
    std::size_t num_classes = 10;
    std::size_t norm_groups = 4;
    AttentionConfig attention{};

    /// Output channels of every residual block in order.
    std::vector<std::size_t> block_channels() const {
        std::vector<std::size_t> out;
        for (const auto& s : stages)
            for (std::size_t b = 0; b < s.blocks; ++b) out.push_back(s.channels);
        return out;
    }

    void validate() const {
        auto positive = [](std::size_t v, const char* what) {
            if (v == 0) throw ConfigError(std::string("network: ") + what + " must be positive");
        };
        positive(in_channels, "in_channels");
        positive(stem_channels, "stem_channels");
        positive(num_classes, "classes");
        positive(norm_groups, "norm_groups");
        if (stem_kernel % 2 == 0) throw ConfigError("network: stem kernel size must be odd");
        auto check_norm = [&](std::size_t c) {
            if (c % norm_groups != 0)
                throw ConfigError("network: " + std::to_string(c) + " channels not divisible into " +
                                  std::to_string(norm_groups) + " norm groups");
        };
        check_norm(stem_channels);
        for (const auto& s : stages) {
            positive(s.channels, "stage channels");
            positive(s.blocks, "stage blocks");
            if (s.stride != 1 && s.stride != 2) throw ConfigError("network: stage stride must be 1 or 2");
            check_norm(s.channels);
            attention.with_channels(s.channels).validate();
        }
    }
};

inline std::string to_text(const NetworkSpec& spec) {
    std::ostringstream os;
    os << "in_channels=" << spec.in_channels << '\n';
    os << "stem_channels=" << spec.stem_channels << '\n';
    os << "stem_kernel=" << spec.stem_kernel << '\n';
    for (const auto& s : spec.stages) os << "stage=" << s.channels << ',' << s.blocks << ',' << s.stride << '\n';
    os << "classes=" << spec.num_classes << '\n';
    os << "norm_groups=" << spec.norm_groups << '\n';
    const auto& a = spec.attention;
    os << "attn=" << to_string(a.kind) << '\n';
    os << "r=" << a.reduction << '\n';
    os << "g=" << a.groups << '\n';
    os << "k=" << (a.kernel ? std::to_string(*a.kernel) : std::string("adaptive")) << '\n';
    os << "gamma=" << a.policy.gamma << '\n';
    os << "b=" << a.policy.b << '\n';
    os << "tie_break=" << (a.policy.tie_break == TieBreak::down ? "down" : "up") << '\n';
    return os.str();
}

/// Parses `key=value` lines (see to_text). Unspecified keys keep their
/// defaults; any `stage=` line replaces the default stage list.
inline NetworkSpec parse_network_spec(std::istream& in) {
    NetworkSpec spec;
    bool saw_stage = false;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw FormatError(FormatErrc::parse, "line " + std::to_string(lineno) + ": " + why);
    };
    auto to_uint = [&](const std::string& v) -> std::size_t {
        std::size_t pos = 0;
        unsigned long long x = 0;
        try {
            x = std::stoull(v, &pos);
        } catch (const std::exception&) {
            fail("expected an integer, got '" + v + "'");
        }
        if (pos != v.size() || v.empty() || v.front() == '-') fail("expected an integer, got '" + v + "'");
        return static_cast<std::size_t>(x);
    };
    auto to_int = [&](const std::string& v) -> std::int64_t {
        std::size_t pos = 0;
        long long x = 0;
        try {
            x = std::stoll(v, &pos);
        } catch (const std::exception&) {
            fail("expected an integer, got '" + v + "'");
        }
        if (pos != v.size()) fail("expected an integer, got '" + v + "'");
        return x;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "in_channels") spec.in_channels = to_uint(value);
            else if (key == "stem_channels") spec.stem_channels = to_uint(value);
            else if (key == "stem_kernel") spec.stem_kernel = to_uint(value);
            else if (key == "classes") spec.num_classes = to_uint(value);
            else if (key == "norm_groups") spec.norm_groups = to_uint(value);
            else if (key == "stage") {
                if (!saw_stage) spec.stages.clear();
                saw_stage = true;
                std::istringstream parts(value);
                std::string c, b, s;
                if (!std::getline(parts, c, ',') || !std::getline(parts, b, ',') || !std::getline(parts, s) ||
                    s.find(',') != std::string::npos)
                    fail("stage must be channels,blocks,stride");
                spec.stages.push_back({to_uint(c), to_uint(b), to_uint(s)});
            } else if (key == "attn") spec.attention.kind = parse_attention_kind(value);
            else if (key == "r") spec.attention.reduction = to_uint(value);
            else if (key == "g") spec.attention.groups = to_uint(value);
            else if (key == "k") {
                if (value == "adaptive") spec.attention.kernel.reset();
                else spec.attention.kernel = to_uint(value);
            } else if (key == "gamma") spec.attention.policy.gamma = to_int(value);
            else if (key == "b") spec.attention.policy.b = to_int(value);
            else if (key == "tie_break") {
                if (value == "down") spec.attention.policy.tie_break = TieBreak::down;
                else if (value == "up") spec.attention.policy.tie_break = TieBreak::up;
                else fail("tie_break must be down or up");
            } else fail("unknown key '" + key + "'");
        } catch (const ConfigError& e) {
            fail(e.what());
        }
    }
    return spec;
}

inline NetworkSpec parse_network_spec(const std::string& text) {
    std::istringstream in(text);
    return parse_network_spec(in);
}

enum class ParamRole { backbone, attention, buffer };

struct Param {
    std::string name;
    Tensor value;
    ParamRole role = ParamRole::backbone;

    bool learnable() const { return role != ParamRole::buffer; }
};

/// One attention insertion point.
struct AttentionSite {
    std::string name;
    AttentionConfig config;
};

// Micro residual CNN: stem conv, stages of basic blocks, GAP and a linear
// classifier. Each block is conv-norm-relu-conv-norm, then channel
// attention, then the residual addition and relu. Shortcuts that change
// width or resolution use a 1x1 conv and norm. Inputs are standardized with
// per-channel statistics stored as buffers.
class Network {
public:
    struct Pass {
        Var logits;
        std::vector<Var> omegas; // one per attention site
        std::vector<Var> vars;   // aligned with params()
    };

    Network(NetworkSpec spec, std::uint64_t seed, AttentionInit attention_init = AttentionInit::uniform)
        : spec_(std::move(spec)) {
        spec_.validate();
        Rng rng(seed);
        build(rng, attention_init);
    }

    /// Rebuilds a network from stored parameters; names and shapes must match the spec.
    static Network from_params(NetworkSpec spec, std::vector<Param> params) {
        Network net(std::move(spec), 0, AttentionInit::zero);
        if (params.size() != net.params_.size())
            throw FormatError(FormatErrc::parse, "parameter count " + std::to_string(params.size()) +
                                                     " does not match spec (" +
                                                     std::to_string(net.params_.size()) + ")");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].name != net.params_[i].name || params[i].value.shape() != net.params_[i].value.shape())
                throw FormatError(FormatErrc::parse, "parameter '" + params[i].name + "' does not match spec entry '" +
                                                         net.params_[i].name + "'");
            net.params_[i].value = std::move(params[i].value);
        }
        return net;
    }

    const NetworkSpec& spec() const noexcept { return spec_; }
    const std::vector<Param>& params() const noexcept { return params_; }
    std::vector<Param>& params() noexcept { return params_; }
    const std::vector<AttentionSite>& sites() const noexcept { return sites_; }

    std::size_t param_count(ParamRole role) const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.role == role) n += p.value.size();
        return n;
    }
    std::size_t learnable_count() const { return param_count(ParamRole::backbone) + param_count(ParamRole::attention); }

    void set_input_normalization(const ChannelStats& stats) {
        if (stats.mean.size() != spec_.in_channels) throw ShapeError("input normalization: channel mismatch");
        params_[input_mean_].value = Tensor(Shape{spec_.in_channels}, stats.mean);
        params_[input_std_].value = Tensor(Shape{spec_.in_channels}, stats.stddev);
    }

    /// Sets every attention parameter to zero, so every gate becomes sigma(0).
    void zero_attention() {
        for (auto& p : params_)
            if (p.role == ParamRole::attention) p.value.fill(0.0);
    }

    Pass forward(Tape& tape, const Tensor& images, bool track_grads = false) const {
        expect_rank(images, 4, "network input");
        if (images.dim(1) != spec_.in_channels)
            throw ShapeError("network input has " + std::to_string(images.dim(1)) + " channels, expected " +
                             std::to_string(spec_.in_channels));
        Pass pass;
        for (const auto& p : params_) pass.vars.push_back(tape.leaf(p.value, track_grads && p.learnable()));
        const auto& v = pass.vars;

        Var h = tape.constant(standardize(images));
        h = relu(conv_norm(h, stem_, v));
        for (const auto& blk : blocks_) {
            Var o = relu(conv_norm(h, blk.conv1, v));
            o = conv_norm(o, blk.conv2, v);
            if (blk.site) {
                std::vector<Var> attn_vars;
                for (std::size_t idx : blk.attention) attn_vars.push_back(v[idx]);
                const auto a = attend(sites_[*blk.site].config, attn_vars, o);
                pass.omegas.push_back(a.omega);
                o = a.out;
            }
            const Var shortcut = blk.shortcut ? conv_norm(h, *blk.shortcut, v) : h;
            h = relu(add(o, shortcut));
        }
        pass.logits = add_bias(linear(gap(h), v[fc_weight_]), v[fc_bias_]);
        return pass;
    }

    /// Logits without recording gradients.
    Tensor logits(const Tensor& images) const {
        Tape tape;
        return forward(tape, images).logits.value();
    }

private:
    struct ConvNorm {
        std::size_t conv, gamma, beta, stride, pad;
    };
    struct Block {
        ConvNorm conv1, conv2;
        std::optional<ConvNorm> shortcut;
        std::vector<std::size_t> attention;
        std::optional<std::size_t> site;
    };

    std::size_t add_param(std::string name, Tensor value, ParamRole role) {
        params_.push_back({std::move(name), std::move(value), role});
        return params_.size() - 1;
    }

    ConvNorm add_conv_norm(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                           std::size_t stride, Rng& rng) {
        Tensor w(Shape{cout, cin, k, k});
        const double sd = std::sqrt(2.0 / static_cast<double>(cin * k * k));
        for (double& x : w.data()) x = sd * rng.normal();
        ConvNorm cn{};
        cn.conv = add_param(name + ".conv", std::move(w), ParamRole::backbone);
        cn.gamma = add_param(name + ".norm.gamma", Tensor(Shape{cout}, 1.0), ParamRole::backbone);
        cn.beta = add_param(name + ".norm.beta", Tensor(Shape{cout}, 0.0), ParamRole::backbone);
        cn.stride = stride;
        cn.pad = k / 2;
        return cn;
    }

    void build(Rng& rng, AttentionInit attention_init) {
        stem_ = add_conv_norm("stem", spec_.in_channels, spec_.stem_channels, spec_.stem_kernel, 1, rng);
        std::size_t cin = spec_.stem_channels;
        for (std::size_t s = 0; s < spec_.stages.size(); ++s) {
            const auto& stage = spec_.stages[s];
            for (std::size_t b = 0; b < stage.blocks; ++b) {
                const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
                const std::size_t stride = b == 0 ? stage.stride : 1;
                const std::size_t cout = stage.channels;
                Block blk{};
                blk.conv1 = add_conv_norm(name + ".conv1", cin, cout, 3, stride, rng);
                blk.conv2 = add_conv_norm(name + ".conv2", cout, cout, 3, 1, rng);
                if (spec_.attention.kind != AttentionKind::none) {
                    const AttentionConfig cfg = spec_.attention.with_channels(cout);
                    const auto attn = init_attention_params(cfg, rng, attention_init);
                    for (const auto& t : attn.tensors)
                        blk.attention.push_back(add_param(name + ".attn." + t.name, t.value, ParamRole::attention));
                    blk.site = sites_.size();
                    sites_.push_back({name, cfg});
                }
                if (cin != cout || stride != 1) blk.shortcut = add_conv_norm(name + ".shortcut", cin, cout, 1, stride, rng);
                blocks_.push_back(std::move(blk));
                cin = cout;
            }
        }
        Tensor fc(Shape{spec_.num_classes, cin});
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
        for (double& x : fc.data()) x = rng.uniform(-bound, bound);
        fc_weight_ = add_param("fc.weight", std::move(fc), ParamRole::backbone);
        fc_bias_ = add_param("fc.bias", Tensor(Shape{spec_.num_classes}, 0.0), ParamRole::backbone);
        input_mean_ = add_param("input.mean", Tensor(Shape{spec_.in_channels}, 0.0), ParamRole::buffer);
        input_std_ = add_param("input.std", Tensor(Shape{spec_.in_channels}, 1.0), ParamRole::buffer);
    }

    Var conv_norm(const Var& x, const ConvNorm& cn, const std::vector<Var>& v) const {
        return group_norm(conv2d(x, v[cn.conv], cn.stride, cn.pad), v[cn.gamma], v[cn.beta], spec_.norm_groups);
    }

    Tensor standardize(const Tensor& images) const {
        const Tensor& mu = params_[input_mean_].value;
        const Tensor& sd = params_[input_std_].value;
        Tensor out = images;
        const std::size_t N = images.dim(0), C = images.dim(1), HW = images.dim(2) * images.dim(3);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < HW; ++i) {
                    double& x = out[(n * C + c) * HW + i];
                    x = (x - mu[c]) / sd[c];
                }
        return out;
    }

    NetworkSpec spec_;
    std::vector<Param> params_;
    std::vector<AttentionSite> sites_;
    ConvNorm stem_{};
    std::vector<Block> blocks_;
    std::size_t fc_weight_ = 0, fc_bias_ = 0, input_mean_ = 0, input_std_ = 0;
};

/// Builds the network for `spec` with parameters drawn from `seed`.
inline Network build_network(const NetworkSpec& spec, std::uint64_t seed,
                             AttentionInit attention_init = AttentionInit::uniform) {
    return Network(spec, seed, attention_init);
}

} // namespace cak
