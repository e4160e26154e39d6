#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cak/bytes.hpp"
#include "cak/error.hpp"
#include "cak/rng.hpp"
#include "cak/tensor.hpp"

namespace cak {

/// Labelled images, images[N,C,H,W] with labels in [0, num_classes).
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string split = "train";

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    std::size_t channels() const { return images.rank() == 4 ? images.dim(1) : 0; }

    void validate() const {
        if (images.rank() != 4) throw ShapeError("dataset images must be [N,C,H,W]");
        if (images.dim(0) != labels.size()) throw ShapeError("dataset: image and label counts differ");
        for (int l : labels)
            if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
                throw FormatError(FormatErrc::label_out_of_range, "label " + std::to_string(l));
    }

    /// Samples at the given indices, in that order.
    Dataset subset(const std::vector<std::size_t>& idx) const {
        const std::size_t per = images.dim(1) * images.dim(2) * images.dim(3);
        Dataset out;
        out.num_classes = num_classes;
        out.split = split;
        out.images = Tensor(Shape{idx.size(), images.dim(1), images.dim(2), images.dim(3)});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                        out.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
            out.labels.push_back(labels[idx[i]]);
        }
        return out;
    }

    Dataset head(std::size_t n) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < std::min(n, size()); ++i) idx.push_back(i);
        return subset(idx);
    }
};

/// Per-channel mean and standard deviation over all pixels.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

inline ChannelStats channel_stats(const Tensor& images) {
    expect_rank(images, 4, "channel_stats");
    const std::size_t N = images.dim(0), C = images.dim(1), HW = images.dim(2) * images.dim(3);
    ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 1.0)};
    if (N * HW == 0) return s;
    const auto M = static_cast<double>(N * HW);
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < HW; ++i) acc += images[(n * C + c) * HW + i];
        const double mu = acc / M;
        double sq = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < HW; ++i) {
                const double d = images[(n * C + c) * HW + i] - mu;
                sq += d * d;
            }
        s.mean[c] = mu;
        const double sd = std::sqrt(sq / M);
        s.stddev[c] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

struct SynthOptions {
    std::size_t num_classes = 10;
    std::size_t n_per_class = 200;
    std::size_t size = 16;
    std::size_t channels = 3;
    double noise = 0.6;
    std::uint64_t seed = 0;
    std::string split = "train";
};

/// Procedural class-conditional images. Each class owns two Gaussian blobs
/// with per-channel amplitudes; samples jitter the blob positions and
/// amplitudes, add a random distractor blob and pixel noise. Class patterns
/// depend only on `seed`, so train and val splits share them. Pixels are
/// stored at float32 precision to match the on-disk format. Sample i has
/// label i mod num_classes.
inline Dataset synth_dataset(const SynthOptions& opt) {
    struct Blob {
        double cy, cx, sigma;
        std::vector<double> amp;
    };
    const std::size_t K = opt.num_classes, S = opt.size, C = opt.channels;
    if (K == 0 || S == 0 || C == 0) throw ConfigError("synth_dataset: classes, size and channels must be positive");
    const auto Sd = static_cast<double>(S);

    Rng pattern_rng(opt.seed);
    auto random_blob = [&](Rng& rng) {
        Blob b{rng.uniform(0.2, 0.8) * Sd, rng.uniform(0.2, 0.8) * Sd, rng.uniform(0.1, 0.25) * Sd, {}};
        for (std::size_t c = 0; c < C; ++c) b.amp.push_back(rng.uniform(-1.0, 1.0));
        return b;
    };
    std::vector<std::vector<Blob>> classes(K);
    for (auto& blobs : classes)
        for (int i = 0; i < 2; ++i) blobs.push_back(random_blob(pattern_rng));

    std::uint64_t split_hash = fnv1a64(reinterpret_cast<const std::uint8_t*>(opt.split.data()), opt.split.size());
    Rng rng(opt.seed ^ split_hash);

    const std::size_t N = K * opt.n_per_class;
    Dataset ds;
    ds.num_classes = K;
    ds.split = opt.split;
    ds.images = Tensor(Shape{N, C, S, S});
    ds.labels.resize(N);
    std::vector<double> img(C * S * S);
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t label = n % K;
        ds.labels[n] = static_cast<int>(label);
        std::fill(img.begin(), img.end(), 0.0);
        auto paint = [&](const Blob& b, double gain, double dy, double dx) {
            const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
            for (std::size_t h = 0; h < S; ++h)
                for (std::size_t w = 0; w < S; ++w) {
                    const double ry = static_cast<double>(h) - (b.cy + dy);
                    const double rx = static_cast<double>(w) - (b.cx + dx);
                    const double v = gain * std::exp(-(ry * ry + rx * rx) * inv);
                    for (std::size_t c = 0; c < C; ++c) img[(c * S + h) * S + w] += b.amp[c] * v;
                }
        };
        for (const Blob& b : classes[label]) {
            const double gain = 1.0 + 0.2 * rng.normal();
            paint(b, gain, 0.08 * Sd * rng.normal(), 0.08 * Sd * rng.normal());
        }
        paint(random_blob(rng), 0.5, 0.0, 0.0);
        for (std::size_t i = 0; i < img.size(); ++i) {
            const double v = img[i] + opt.noise * rng.normal();
            ds.images[n * img.size() + i] = static_cast<double>(static_cast<float>(v));
        }
    }
    return ds;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

/// Binary layout (little-endian): "CAKD", version, N, C, H, W, num_classes
/// as u32, then N*C*H*W float32 pixels, then N u16 labels.
inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
    ds.validate();
    if (ds.num_classes > 65536) throw ConfigError("dataset: too many classes for u16 labels");
    ByteWriter w;
    w.raw("CAKD");
    w.u32(kDatasetVersion);
    for (std::size_t d : ds.images.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(ds.num_classes));
    for (double v : ds.images.data()) w.f32(static_cast<float>(v));
    for (int l : ds.labels) w.u16(static_cast<std::uint16_t>(l));
    return std::move(w.bytes());
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes.data(), bytes.size());
    if (bytes.size() < 4 || r.raw(4) != "CAKD") throw FormatError(FormatErrc::bad_magic, "not a dataset file");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw FormatError(FormatErrc::version_mismatch, "dataset version " + std::to_string(version));
    Shape shape(4);
    for (auto& d : shape) d = r.u32();
    Dataset ds;
    ds.num_classes = r.u32();
    const std::uint64_t expected = static_cast<std::uint64_t>(numel(shape)) * 4 + static_cast<std::uint64_t>(shape[0]) * 2;
    if (r.remaining() != expected)
        throw FormatError(FormatErrc::truncated_payload, "header promises " + std::to_string(expected) +
                                                             " payload bytes, file has " +
                                                             std::to_string(r.remaining()));
    std::vector<double> pixels(numel(shape));
    for (double& v : pixels) v = static_cast<double>(r.f32());
    ds.images = Tensor(shape, std::move(pixels));
    ds.labels.resize(shape[0]);
    for (int& l : ds.labels) {
        l = r.u16();
        if (static_cast<std::size_t>(l) >= ds.num_classes)
            throw FormatError(FormatErrc::label_out_of_range,
                              "label " + std::to_string(l) + " >= num_classes " + std::to_string(ds.num_classes));
    }
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) { write_file(path, encode_dataset(ds)); }

inline Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

} // namespace cak
