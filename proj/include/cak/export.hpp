#pragma once

#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cak/dataset.hpp"
#include "cak/error.hpp"
#include "cak/network.hpp"

namespace cak {

/// Mean channel weight per attention site, per class and over all samples.
struct ChannelWeightTable {
    struct Site {
        std::string name;
        std::size_t channels = 0;
        std::vector<std::vector<double>> per_class; // [class][channel]
        std::vector<double> overall;                // [channel]
    };
    std::size_t num_classes = 0;
    std::vector<Site> sites;
};

inline ChannelWeightTable channel_weights(const Network& net, const Dataset& ds, std::size_t batch = 100) {
    if (ds.labels.empty() || ds.images.rank() != 4 || ds.images.dim(0) != ds.labels.size())
        throw Error("channel weight export needs a labelled dataset");
    ds.validate();
    const std::size_t K = ds.num_classes;
    ChannelWeightTable table;
    table.num_classes = K;
    for (const auto& s : net.sites()) {
        ChannelWeightTable::Site site;
        site.name = s.name;
        site.channels = s.config.channels;
        site.per_class.assign(K, std::vector<double>(site.channels, 0.0));
        site.overall.assign(site.channels, 0.0);
        table.sites.push_back(std::move(site));
    }
    std::vector<std::size_t> counts(K, 0);
    const std::size_t N = ds.size();
    for (std::size_t start = 0; start < N; start += batch) {
        std::vector<std::size_t> idx(std::min(batch, N - start));
        std::iota(idx.begin(), idx.end(), start);
        const Dataset part = ds.subset(idx);
        Tape tape;
        const auto pass = net.forward(tape, part.images);
        for (std::size_t s = 0; s < table.sites.size(); ++s) {
            const Tensor& w = pass.omegas[s].value();
            auto& site = table.sites[s];
            for (std::size_t b = 0; b < idx.size(); ++b)
                for (std::size_t c = 0; c < site.channels; ++c) {
                    site.per_class[static_cast<std::size_t>(part.labels[b])][c] += w.at(b, c);
                    site.overall[c] += w.at(b, c);
                }
        }
        for (int l : part.labels) ++counts[static_cast<std::size_t>(l)];
    }
    for (auto& site : table.sites) {
        for (std::size_t k = 0; k < K; ++k)
            for (double& v : site.per_class[k]) v = counts[k] ? v / static_cast<double>(counts[k]) : std::nan("");
        for (double& v : site.overall) v /= static_cast<double>(N);
    }
    return table;
}

/// One row per (site, class, channel) plus the all-class mean, giving
/// sum over sites of C_site * (num_classes + 1) rows after the header.
inline std::string to_csv(const ChannelWeightTable& table) {
    std::ostringstream os;
    os << "site,class,channel,weight\n";
    char buf[64];
    for (const auto& site : table.sites) {
        for (std::size_t k = 0; k < table.num_classes; ++k)
            for (std::size_t c = 0; c < site.channels; ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", site.per_class[k][c]);
                os << site.name << ',' << k << ',' << c << ',' << buf << '\n';
            }
        for (std::size_t c = 0; c < site.channels; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", site.overall[c]);
            os << site.name << ",all," << c << ',' << buf << '\n';
        }
    }
    return os.str();
}

inline std::string export_channel_weights(const Network& net, const Dataset& ds) {
    return to_csv(channel_weights(net, ds));
}

} // namespace cak
