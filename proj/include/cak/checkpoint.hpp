#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cak/bytes.hpp"
#include "cak/error.hpp"
#include "cak/network.hpp"

namespace cak {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): "CAKC", u32 version, then the payload
//   u32 spec length, spec text (UTF-8)
//   u32 array count; per array: u32 name length, name, u32 rank, u32 dims, f64 values
// and finally the u64 FNV-1a hash of the payload bytes.
inline std::vector<std::uint8_t> encode_checkpoint(const Network& net) {
    ByteWriter w;
    w.raw("CAKC");
    w.u32(kCheckpointVersion);
    const std::string spec = to_text(net.spec());
    w.u32(static_cast<std::uint32_t>(spec.size()));
    w.raw(spec);
    w.u32(static_cast<std::uint32_t>(net.params().size()));
    for (const auto& p : net.params()) {
        w.u32(static_cast<std::uint32_t>(p.name.size()));
        w.raw(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : p.value.data()) w.f64(v);
    }
    const auto& bytes = w.bytes();
    w.u64(fnv1a64(bytes.data() + 8, bytes.size() - 8));
    return std::move(w.bytes());
}

inline Network decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::string(bytes.begin(), bytes.begin() + 4) != "CAKC")
        throw FormatError(FormatErrc::bad_magic, "not a checkpoint file");
    if (bytes.size() < 16) throw FormatError(FormatErrc::truncated_payload, "checkpoint too short");
    ByteReader header(bytes.data() + 4, 4);
    const std::uint32_t version = header.u32();
    if (version != kCheckpointVersion)
        throw FormatError(FormatErrc::version_mismatch, "checkpoint version " + std::to_string(version));
    const std::size_t payload = bytes.size() - 16;
    ByteReader tail(bytes.data() + bytes.size() - 8, 8);
    if (tail.u64() != fnv1a64(bytes.data() + 8, payload))
        throw FormatError(FormatErrc::hash_mismatch, "checkpoint payload is corrupted");

    ByteReader r(bytes.data() + 8, payload);
    const std::string spec_text = r.raw(r.u32());
    const NetworkSpec spec = parse_network_spec(spec_text);
    const std::uint32_t count = r.u32();
    std::vector<Param> params;
    for (std::uint32_t i = 0; i < count; ++i) {
        Param p;
        p.name = r.raw(r.u32());
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        r.need(numel(shape) * 8);
        std::vector<double> data(numel(shape));
        for (double& v : data) v = r.f64();
        p.value = Tensor(std::move(shape), std::move(data));
        params.push_back(std::move(p));
    }
    if (r.remaining() != 0) throw FormatError(FormatErrc::truncated_payload, "trailing bytes in checkpoint");
    return Network::from_params(spec, std::move(params));
}

inline void save_checkpoint(const Network& net, const std::string& path) { write_file(path, encode_checkpoint(net)); }

inline Network load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

} // namespace cak
