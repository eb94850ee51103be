#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <boost/crc.hpp>
#include <json.hpp>

#include "emct2/error.hpp"

namespace emct2 {

/// Timing and pulse description of a multi-echo spin-echo acquisition.
///
/// All times are in milliseconds. `echo_selection` holds the 1-based indices of the
/// echoes kept for analysis; an empty selection means "all echoes".
struct SequenceProtocol {
    double te1 = 15.0;
    double delta_te = 15.0;
    int n_echoes = 10;
    double nominal_refocus_deg = 180.0;
    double tr = 4100.0;
    double t1_assumed = 1000.0;
    std::vector<int> echo_selection;

    /// Retained echo indices, with the empty-means-all default resolved.
    std::vector<int> retained() const {
        if (!echo_selection.empty()) return echo_selection;
        std::vector<int> all(static_cast<size_t>(std::max(n_echoes, 0)));
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i) + 1;
        return all;
    }

    size_t n_retained() const { return echo_selection.empty() ? static_cast<size_t>(n_echoes) : echo_selection.size(); }

    double echo_time(int echo_index) const { return te1 + (echo_index - 1) * delta_te; }

    std::vector<double> retained_echo_times() const {
        std::vector<double> times;
        for (int k : retained()) times.push_back(echo_time(k));
        return times;
    }

    void validate() const {
        if (!(te1 > 0.0) || !std::isfinite(te1)) throw InvalidArgument("protocol: te1 must be positive");
        if (!(delta_te > 0.0) || !std::isfinite(delta_te)) throw InvalidArgument("protocol: delta_te must be positive");
        if (n_echoes < 1) throw InvalidArgument("protocol: n_echoes must be >= 1");
        if (!(tr > n_echoes * delta_te)) throw InvalidArgument("protocol: tr must exceed the echo train duration");
        if (!(t1_assumed > 0.0)) throw InvalidArgument("protocol: t1_assumed must be positive");
        if (!(nominal_refocus_deg > 0.0) || !std::isfinite(nominal_refocus_deg))
            throw InvalidArgument("protocol: nominal refocusing angle must be positive");
        int prev = 0;
        for (int k : echo_selection) {
            if (k <= prev || k > n_echoes)
                throw InvalidArgument("protocol: echo_selection must be strictly increasing within 1..n_echoes");
            prev = k;
        }
    }

    /// Same protocol with `indices` (positions into the currently retained echoes, 1-based)
    /// applied on top of the existing selection.
    SequenceProtocol with_selection(const std::vector<int>& indices) const {
        const auto current = retained();
        SequenceProtocol out = *this;
        out.echo_selection.clear();
        int prev = 0;
        for (int i : indices) {
            if (i <= prev || i < 1 || static_cast<size_t>(i) > current.size())
                throw InvalidArgument("echo selection index " + std::to_string(i) + " out of range or not increasing");
            out.echo_selection.push_back(current[static_cast<size_t>(i) - 1]);
            prev = i;
        }
        return out;
    }

    bool operator==(const SequenceProtocol& o) const {
        return te1 == o.te1 && delta_te == o.delta_te && n_echoes == o.n_echoes &&
               nominal_refocus_deg == o.nominal_refocus_deg && tr == o.tr && t1_assumed == o.t1_assumed &&
               retained() == o.retained();
    }
};

inline void to_json(nlohmann::json& j, const SequenceProtocol& p) {
    j = nlohmann::json{{"te1", p.te1},
                       {"delta_te", p.delta_te},
                       {"n_echoes", p.n_echoes},
                       {"nominal_refocus_deg", p.nominal_refocus_deg},
                       {"tr", p.tr},
                       {"t1_assumed", p.t1_assumed},
                       {"echo_selection", p.retained()}};
}

inline void from_json(const nlohmann::json& j, SequenceProtocol& p) {
    static const char* known[] = {"te1", "delta_te", "n_echoes", "nominal_refocus_deg", "tr", "t1_assumed",
                                  "echo_selection"};
    if (!j.is_object()) throw InvalidArgument("protocol: expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw InvalidArgument("protocol: unknown key '" + it.key() + "'");
    }
    try {
        SequenceProtocol d;
        p.te1 = j.value("te1", d.te1);
        p.delta_te = j.value("delta_te", d.delta_te);
        p.n_echoes = j.value("n_echoes", d.n_echoes);
        p.nominal_refocus_deg = j.value("nominal_refocus_deg", d.nominal_refocus_deg);
        p.tr = j.value("tr", d.tr);
        p.t1_assumed = j.value("t1_assumed", d.t1_assumed);
        p.echo_selection = j.value("echo_selection", std::vector<int>{});
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("protocol: ") + e.what());
    }
    p.validate();
    // "All echoes" is stored canonically as the empty selection.
    if (static_cast<int>(p.echo_selection.size()) == p.n_echoes) p.echo_selection.clear();
}

/// CRC32 of the canonical JSON form. Two protocols hash equal iff they describe the same
/// acquisition and echo selection.
inline uint32_t protocol_hash(const SequenceProtocol& p) {
    const std::string canonical = nlohmann::json(p).dump();
    boost::crc_32_type crc;
    crc.process_bytes(canonical.data(), canonical.size());
    return crc.checksum();
}

} // namespace emct2
