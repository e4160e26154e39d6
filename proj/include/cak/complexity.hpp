#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cak/attention.hpp"
#include "cak/error.hpp"

namespace cak {

/// Closed-form learnable parameter count of one attention module.
inline std::uint64_t count_params(const AttentionConfig& cfg) {
    cfg.validate();
    const std::uint64_t C = cfg.channels;
    switch (cfg.kind) {
    case AttentionKind::none:
    case AttentionKind::se_var1: return 0;
    case AttentionKind::se: return 2 * C * C / cfg.reduction;
    case AttentionKind::se_var2: return C;
    case AttentionKind::se_var3: return C * C;
    case AttentionKind::se_gc: return C * C / cfg.groups;
    case AttentionKind::eca_ns: return cfg.kernel_size() * C;
    case AttentionKind::eca: return cfg.kernel_size();
    }
    return 0;
}

/// Operation counts of one attention module applied to an H x W map.
struct FlopCount {
    std::uint64_t gap_adds = 0;       // one add per input element
    std::uint64_t transform_macs = 0; // channel transform multiply-adds
    std::uint64_t sigmoid_evals = 0;
    std::uint64_t scale_muls = 0;     // recalibration multiplies

    FlopCount& operator+=(const FlopCount& o) {
        gap_adds += o.gap_adds;
        transform_macs += o.transform_macs;
        sigmoid_evals += o.sigmoid_evals;
        scale_muls += o.scale_muls;
        return *this;
    }
    bool operator==(const FlopCount&) const = default;
};

/// Transform MACs follow the dense closed forms: every band row is charged k
/// MACs even where zero padding makes some of them vanish.
inline FlopCount count_flops(const AttentionConfig& cfg, std::size_t height, std::size_t width) {
    cfg.validate();
    FlopCount f;
    if (cfg.kind == AttentionKind::none) return f;
    const std::uint64_t C = cfg.channels;
    const std::uint64_t hw = static_cast<std::uint64_t>(height) * width;
    f.gap_adds = C * hw;
    f.sigmoid_evals = C;
    f.scale_muls = C * hw;
    switch (cfg.kind) {
    case AttentionKind::se: f.transform_macs = 2 * C * C / cfg.reduction; break;
    case AttentionKind::se_var2: f.transform_macs = C; break;
    case AttentionKind::se_var3: f.transform_macs = C * C; break;
    case AttentionKind::se_gc: f.transform_macs = C * C / cfg.groups; break;
    case AttentionKind::eca_ns:
    case AttentionKind::eca: f.transform_macs = cfg.kernel_size() * C; break;
    default: break;
    }
    return f;
}

enum class FlopConvention { mac2, mac1 };

inline std::string_view to_string(FlopConvention c) { return c == FlopConvention::mac2 ? "mac2" : "mac1"; }

inline std::uint64_t flops_per_mac(FlopConvention c) { return c == FlopConvention::mac2 ? 2 : 1; }

/// One attention site in a network layout.
struct LayoutBlock {
    std::size_t channels = 0;
    std::size_t spatial = 0; // 0 when the layout does not record it
};

struct ComplexityEntry {
    std::string name;
    std::size_t channels = 0;
    std::size_t kernel = 0; // 0 for variants without a kernel
    std::uint64_t params = 0;
    FlopCount ops;
    std::uint64_t flops = 0; // transform MACs under the report convention
};

struct ComplexityReport {
    AttentionKind kind = AttentionKind::none;
    FlopConvention convention = FlopConvention::mac2;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    FlopCount ops;
    std::vector<ComplexityEntry> breakdown;
};

/// Attention-only complexity of a network: `attn` is applied at every block
/// with that block's channel count (adaptive kernels resolve per block).
inline ComplexityReport count_network_params(const std::vector<LayoutBlock>& layout, const AttentionConfig& attn,
                                             FlopConvention convention = FlopConvention::mac2) {
    ComplexityReport report;
    report.kind = attn.kind;
    report.convention = convention;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const AttentionConfig cfg = attn.with_channels(layout[i].channels);
        ComplexityEntry e;
        e.name = "block" + std::to_string(i);
        e.channels = layout[i].channels;
        e.kernel = cfg.uses_kernel() ? cfg.kernel_size() : 0;
        e.params = count_params(cfg);
        e.ops = count_flops(cfg, layout[i].spatial, layout[i].spatial);
        e.flops = e.ops.transform_macs * flops_per_mac(convention);
        report.params += e.params;
        report.flops += e.flops;
        report.ops += e.ops;
        report.breakdown.push_back(std::move(e));
    }
    return report;
}

/// Parses a layout: one `channels=<C>` line per block in stage order, with an
/// optional `spatial=<S>` token. Blank lines and `#` comments are skipped.
/// Errors carry the 1-based line number.
inline std::vector<LayoutBlock> parse_layout(std::istream& in) {
    std::vector<LayoutBlock> blocks;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw FormatError(FormatErrc::parse, "line " + std::to_string(lineno) + ": " + why);
    };
    auto parse_positive = [&](std::string_view text) -> std::size_t {
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(std::string(text), &pos);
        } catch (const std::exception&) {
            fail("expected a positive integer, got '" + std::string(text) + "'");
        }
        if (pos != text.size() || v == 0 || text.front() == '-')
            fail("expected a positive integer, got '" + std::string(text) + "'");
        return static_cast<std::size_t>(v);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream tokens(line);
        std::string tok;
        LayoutBlock block;
        bool any = false;
        while (tokens >> tok) {
            any = true;
            const auto eq = tok.find('=');
            if (eq == std::string::npos) fail("expected key=value, got '" + tok + "'");
            const std::string key = tok.substr(0, eq);
            const std::string value = tok.substr(eq + 1);
            if (key == "channels")
                block.channels = parse_positive(value);
            else if (key == "spatial")
                block.spatial = parse_positive(value);
            else
                fail("unknown key '" + key + "'");
        }
        if (!any) continue;
        if (block.channels == 0) fail("missing channels=");
        blocks.push_back(block);
    }
    return blocks;
}

inline std::vector<LayoutBlock> load_layout(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatErrc::io, "cannot open layout '" + path + "'");
    return parse_layout(in);
}

/// Block layout of a ResNet-50 style network: stages of (channels, blocks).
inline std::vector<LayoutBlock> resnet50_layout() {
    std::vector<LayoutBlock> layout;
    const std::size_t stages[4][3] = {{256, 3, 56}, {512, 4, 28}, {1024, 6, 14}, {2048, 3, 7}};
    for (const auto& s : stages)
        for (std::size_t i = 0; i < s[1]; ++i) layout.push_back({s[0], s[2]});
    return layout;
}

/// ResNet-50 backbone cost used as the denominator for overhead ratios.
inline constexpr double kResNet50GFlops = 3.86;

inline std::string to_csv(const ComplexityReport& r) {
    std::ostringstream os;
    os << "site,channels,kernel,params,transform_macs,flops,gap_adds,sigmoid_evals,scale_muls\n";
    for (const auto& e : r.breakdown)
        os << e.name << ',' << e.channels << ',' << e.kernel << ',' << e.params << ',' << e.ops.transform_macs << ','
           << e.flops << ',' << e.ops.gap_adds << ',' << e.ops.sigmoid_evals << ',' << e.ops.scale_muls << '\n';
    os << "total,,," << r.params << ',' << r.ops.transform_macs << ',' << r.flops << ',' << r.ops.gap_adds << ','
       << r.ops.sigmoid_evals << ',' << r.ops.scale_muls << '\n';
    return os.str();
}

inline std::string to_text(const ComplexityReport& r) {
    std::ostringstream os;
    os << "attention: " << to_string(r.kind) << '\n';
    os << "sites: " << r.breakdown.size() << '\n';
    os << "params: " << r.params << '\n';
    os << "transform_macs: " << r.ops.transform_macs << '\n';
    os << "flops(" << to_string(r.convention) << "): " << r.flops << '\n';
    os << "gap_adds: " << r.ops.gap_adds << '\n';
    os << "sigmoid_evals: " << r.ops.sigmoid_evals << '\n';
    os << "scale_muls: " << r.ops.scale_muls << '\n';
    return os.str();
}

} // namespace cak
