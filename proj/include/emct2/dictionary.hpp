#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "emct2/binary_io.hpp"
#include "emct2/epg.hpp"
#include "emct2/error.hpp"
#include "emct2/parallel.hpp"
#include "emct2/protocol.hpp"

namespace emct2 {

/// Inclusive arithmetic range lo, lo+step, ..., <= hi. Values are rounded to 1e-9 so that
/// decimal steps such as 0.02 land on clean grid points.
inline std::vector<double> arithmetic_range(double lo, double hi, double step) {
    if (!(step > 0.0) || !std::isfinite(lo) || !std::isfinite(hi) || hi < lo)
        throw InvalidArgument("range requires lo <= hi and step > 0");
    const auto n = static_cast<size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9;
    return v;
}

/// (T2, B1) grid spanned by a dictionary. T2 in ms, B1 dimensionless.
struct DictionaryGrid {
    std::vector<double> t2_values;
    std::vector<double> b1_values;

    /// T2 10-300 ms step 1, B1 0.7-1.3 step 0.02.
    static DictionaryGrid standard() { return {arithmetic_range(10, 300, 1), arithmetic_range(0.7, 1.3, 0.02)}; }

    size_t rows() const { return t2_values.size() * b1_values.size(); }

    size_t encode(size_t t2_index, size_t b1_index) const { return t2_index * b1_values.size() + b1_index; }
    std::pair<size_t, size_t> decode(size_t row) const { return {row / b1_values.size(), row % b1_values.size()}; }

    bool covers_t2(double t2) const {
        return !t2_values.empty() && t2 >= t2_values.front() && t2 <= t2_values.back();
    }
    bool covers_b1(double b1) const {
        return !b1_values.empty() && b1 >= b1_values.front() && b1 <= b1_values.back();
    }

    void validate() const {
        if (t2_values.empty() || b1_values.empty()) throw InvalidArgument("dictionary grid is empty");
        for (size_t i = 0; i < t2_values.size(); ++i) {
            if (!(t2_values[i] > 0.0)) throw InvalidArgument("grid T2 values must be positive");
            if (i && !(t2_values[i] > t2_values[i - 1])) throw InvalidArgument("grid T2 values must increase strictly");
        }
        for (size_t i = 0; i < b1_values.size(); ++i) {
            if (!(b1_values[i] > 0.0 && b1_values[i] <= 2.0)) throw InvalidArgument("grid B1 values must lie in (0, 2]");
            if (i && !(b1_values[i] > b1_values[i - 1])) throw InvalidArgument("grid B1 values must increase strictly");
        }
    }

    bool operator==(const DictionaryGrid&) const = default;
};

/// Scales `curve` to unit L2 norm in place and returns the original norm. A zero or
/// non-finite norm leaves the curve untouched.
inline double normalize_curve(std::span<double> curve) {
    double ss = 0.0;
    for (double v : curve) ss += v * v;
    const double norm = std::sqrt(ss);
    if (norm > 0.0 && std::isfinite(norm))
        for (double& v : curve) v /= norm;
    return norm;
}

/// Grid of simulated, unit-normalized echo-modulation curves.
///
/// Row r holds (t2_values[r / |b1|], b1_values[r % |b1|]). Immutable once built and safe to
/// share between threads.
struct EMCDictionary {
    DictionaryGrid grid;
    SequenceProtocol protocol;
    std::vector<ProfileSample> slice_profile; ///< empty = hard pulse
    size_t echoes = 0;
    std::vector<double> curves;          ///< rows x echoes, row-major
    std::vector<double> raw_first_echo; ///< first retained echo before normalization
    /// Lowest-index row with identical values (within kDuplicateRowTolerance) for every row.
    std::vector<size_t> canonical;

    size_t rows() const { return grid.rows(); }
    std::span<const double> row(size_t r) const { return {curves.data() + r * echoes, echoes}; }
    double t2_of(size_t r) const { return grid.t2_values[grid.decode(r).first]; }
    double b1_of(size_t r) const { return grid.b1_values[grid.decode(r).second]; }
};

/// Rows closer than this (max abs difference) are treated as the same curve. Large enough to
/// absorb float32 storage, far below the spacing of distinct grid rows.
inline constexpr double kDuplicateRowTolerance = 1e-6;

/// Fills dict.canonical. Duplicates arise from the b1 <-> 2 - b1 mirror symmetry of hard pulses.
inline void assign_canonical_rows(EMCDictionary& dict) {
    const size_t n = dict.rows();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const auto ra = dict.row(a), rb = dict.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    dict.canonical.resize(n);
    size_t group_start = 0;
    auto close = [&](size_t a, size_t b) {
        const auto ra = dict.row(a), rb = dict.row(b);
        for (size_t k = 0; k < ra.size(); ++k)
            if (std::abs(ra[k] - rb[k]) > kDuplicateRowTolerance) return false;
        return true;
    };
    for (size_t i = 1; i <= n; ++i) {
        if (i < n && close(order[i - 1], order[i])) continue;
        const size_t lowest = *std::min_element(order.begin() + static_cast<ptrdiff_t>(group_start), order.begin() + static_cast<ptrdiff_t>(i));
        for (size_t k = group_start; k < i; ++k) dict.canonical[order[k]] = lowest;
        group_start = i;
    }
}

struct BuildOptions {
    unsigned threads = 0;
    std::vector<ProfileSample> slice_profile;
};

inline EMCDictionary build_dictionary(const DictionaryGrid& grid, const SequenceProtocol& protocol,
                                      const BuildOptions& options = {}) {
    grid.validate();
    protocol.validate();
    EMCDictionary dict{grid, protocol, options.slice_profile, protocol.n_retained(), {}, {}, {}};
    dict.curves.resize(grid.rows() * dict.echoes);
    dict.raw_first_echo.resize(grid.rows());
    parallel_for(grid.rows(), options.threads, [&](size_t begin, size_t end) {
        for (size_t r = begin; r < end; ++r) {
            const auto [ti, bi] = grid.decode(r);
            const double t2 = grid.t2_values[ti];
            const double b1 = grid.b1_values[bi];
            const EMCCurve c = options.slice_profile.empty()
                                   ? simulate_emc(t2, b1, protocol)
                                   : simulate_emc_profile(t2, b1, protocol, options.slice_profile);
            std::span<double> out(dict.curves.data() + r * dict.echoes, dict.echoes);
            std::copy(c.values.begin(), c.values.end(), out.begin());
            dict.raw_first_echo[r] = c.values.front();
            normalize_curve(out);
        }
    });
    assign_canonical_rows(dict);
    return dict;
}

/// Rank-r temporal basis of a dictionary plus each row's coefficients in that basis.
struct CompressedDictionary {
    size_t rank = 0;
    Eigen::MatrixXd basis;        ///< echoes x rank, orthonormal columns
    Eigen::MatrixXd coefficients; ///< rows x rank
    Eigen::VectorXd singular_values;

    Eigen::VectorXd reconstruct(size_t row) const { return basis * coefficients.row(static_cast<Eigen::Index>(row)).transpose(); }
    Eigen::VectorXd project(std::span<const double> curve) const {
        const Eigen::Map<const Eigen::VectorXd> v(curve.data(), static_cast<Eigen::Index>(curve.size()));
        return basis.transpose() * v;
    }
};

inline CompressedDictionary compress_dictionary(const EMCDictionary& dict, size_t rank) {
    if (rank < 1 || rank > dict.echoes) throw InvalidArgument("compression rank must lie in 1..echoes");
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        dict.curves.data(), static_cast<Eigen::Index>(dict.rows()), static_cast<Eigen::Index>(dict.echoes));
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
    CompressedDictionary out;
    out.rank = rank;
    out.basis = svd.matrixV().leftCols(static_cast<Eigen::Index>(rank));
    out.coefficients = m * out.basis;
    out.singular_values = svd.singularValues();
    return out;
}

/// Largest per-row L2 reconstruction error of a compressed dictionary.
inline double max_reconstruction_error(const EMCDictionary& dict, const CompressedDictionary& c) {
    double worst = 0.0;
    for (size_t r = 0; r < dict.rows(); ++r) {
        const auto row = dict.row(r);
        const Eigen::Map<const Eigen::VectorXd> exact(row.data(), static_cast<Eigen::Index>(row.size()));
        worst = std::max(worst, (c.reconstruct(r) - exact).norm());
    }
    return worst;
}

// ---------------------------------------------------------------------------------------
// Dictionary file:
//   "EMCD" | u32 version | u64 header length | JSON header |
//   f32 curves (rows x echoes, row-major) | f32 raw_first_echo | u32 CRC32
// The trailing CRC32 covers every preceding byte.

inline constexpr uint32_t kDictionaryFormatVersion = 1;

inline void to_json(nlohmann::json& j, const ProfileSample& s) {
    j = nlohmann::json{{"angle_scale", s.angle_scale}, {"weight", s.weight}};
}
inline void from_json(const nlohmann::json& j, ProfileSample& s) {
    s.angle_scale = j.at("angle_scale").get<double>();
    s.weight = j.at("weight").get<double>();
}

namespace detail {

inline binary::Writer encode_dictionary_body(const EMCDictionary& dict) {
    const nlohmann::json header{{"grid", {{"t2", dict.grid.t2_values}, {"b1", dict.grid.b1_values}}},
                                {"protocol", dict.protocol},
                                {"protocol_hash", protocol_hash(dict.protocol)},
                                {"slice_profile", dict.slice_profile},
                                {"rows", dict.rows()},
                                {"echoes", dict.echoes},
                                {"checksum", "crc32"}};
    binary::Writer out;
    out.text("EMCD");
    out.u32(kDictionaryFormatVersion);
    const std::string text = header.dump();
    out.u64(text.size());
    out.text(text);
    for (double v : dict.curves) out.f32(static_cast<float>(v));
    for (double v : dict.raw_first_echo) out.f32(static_cast<float>(v));
    return out;
}

} // namespace detail

inline std::vector<unsigned char> encode_dictionary(const EMCDictionary& dict) {
    auto out = detail::encode_dictionary_body(dict);
    out.u32(binary::crc32(out.buffer()));
    return out.buffer();
}

/// Content checksum of a dictionary as stored on disk. Recorded in fit provenance.
inline uint32_t dictionary_checksum(const EMCDictionary& dict) {
    return binary::crc32(detail::encode_dictionary_body(dict).buffer());
}

inline EMCDictionary decode_dictionary(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4 + 4 + 8 + 4) throw IoError("truncated dictionary file");
    const auto body = bytes.first(bytes.size() - 4);
    binary::Reader tail(bytes.last(4));
    binary::Reader in(body);
    if (in.text(4, "magic") != "EMCD") throw IoError("not a dictionary file (bad magic)");
    const uint32_t version = in.u32("version");
    if (version != kDictionaryFormatVersion) throw IoError("unsupported dictionary version " + std::to_string(version));
    if (binary::crc32(body) != tail.u32("checksum")) throw IoError("dictionary checksum mismatch (truncated or corrupted file)");

    const uint64_t header_len = in.u64("header length");
    if (header_len > in.remaining()) throw IoError("truncated dictionary header");
    EMCDictionary dict;
    try {
        const auto header = nlohmann::json::parse(in.text(header_len, "header"));
        dict.grid.t2_values = header.at("grid").at("t2").get<std::vector<double>>();
        dict.grid.b1_values = header.at("grid").at("b1").get<std::vector<double>>();
        dict.protocol = header.at("protocol").get<SequenceProtocol>();
        dict.slice_profile = header.value("slice_profile", std::vector<ProfileSample>{});
        dict.echoes = header.at("echoes").get<size_t>();
        if (header.at("rows").get<size_t>() != dict.grid.rows()) throw IoError("dictionary row count disagrees with grid");
        if (header.value("protocol_hash", uint32_t{0}) != protocol_hash(dict.protocol))
            throw IoError("dictionary protocol hash disagrees with its protocol");
        if (dict.echoes != dict.protocol.n_retained()) throw IoError("dictionary echo count disagrees with protocol");
        dict.grid.validate();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt dictionary header: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("corrupt dictionary header: ") + e.what());
    }
    const size_t rows = dict.grid.rows();
    if (in.remaining() != (rows * dict.echoes + rows) * 4) throw IoError("dictionary payload size mismatch");
    dict.curves.resize(rows * dict.echoes);
    for (double& v : dict.curves) v = in.f32("curves");
    dict.raw_first_echo.resize(rows);
    for (double& v : dict.raw_first_echo) v = in.f32("raw_first_echo");
    assign_canonical_rows(dict);
    return dict;
}

inline void save_dictionary(const EMCDictionary& dict, const std::filesystem::path& path) {
    binary::write_file(path, encode_dictionary(dict));
}

inline EMCDictionary load_dictionary(const std::filesystem::path& path) {
    const auto bytes = binary::read_file(path);
    try {
        return decode_dictionary(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

} // namespace emct2
