#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "emct2/error.hpp"
#include "emct2/tensor.hpp"

namespace emct2 {

/// Per-pixel relative error |pred - ref| / ref * 100. Pixels outside the mask are NaN;
/// masked pixels with ref == 0 are NaN as well and counted in `zero_reference`.
struct ErrorMap {
    std::vector<double> percent;
    size_t zero_reference = 0;
};

inline ErrorMap relative_error_map(std::span<const float> pred, std::span<const float> ref,
                                   std::span<const uint8_t> mask = {}) {
    if (pred.size() != ref.size()) throw InvalidArgument("prediction and reference differ in size");
    if (!mask.empty() && mask.size() != ref.size()) throw InvalidArgument("mask size differs from the maps");
    ErrorMap out{std::vector<double>(ref.size(), std::numeric_limits<double>::quiet_NaN()), 0};
    for (size_t i = 0; i < ref.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const double r = ref[i];
        if (r == 0.0) {
            ++out.zero_reference;
            continue;
        }
        out.percent[i] = std::abs(static_cast<double>(pred[i]) - r) / std::abs(r) * 100.0;
    }
    return out;
}

/// Half-open reference-T2 bands [lo, lo+step), ..., up to hi.
struct RangeSpec {
    double lo = 40.0;
    double hi = 160.0;
    double step = 40.0;

    std::vector<std::pair<double, double>> bands() const {
        if (!(step > 0.0) || !(hi > lo)) throw InvalidArgument("T2 ranges require lo < hi and step > 0");
        std::vector<std::pair<double, double>> out;
        for (double a = lo; a < hi - 1e-9; a += step) out.emplace_back(a, std::min(a + step, hi));
        return out;
    }
};

struct RangeStats {
    double lo = 0.0;
    double hi = 0.0;
    size_t count = 0;
    double mean_error = std::numeric_limits<double>::quiet_NaN(); ///< NaN when count == 0
    std::optional<double> p_value;                                ///< vs a second method
};

struct EvalReport {
    std::vector<RangeStats> t2;
    double pd_mean_error = std::numeric_limits<double>::quiet_NaN();
    size_t pd_count = 0;
    std::optional<double> pd_p_value;
    size_t zero_reference_pixels = 0;
    std::string pd_support = "reference T2 in [lo, hi) and mask";
    double significance = 0.05;
    std::vector<std::string> warnings;
};

namespace detail {

inline int band_of(double ref_t2, const std::vector<std::pair<double, double>>& bands) {
    for (size_t b = 0; b < bands.size(); ++b)
        if (ref_t2 >= bands[b].first && ref_t2 < bands[b].second) return static_cast<int>(b);
    return -1;
}

/// Per-slice band means; slices without pixels in a band yield NaN.
struct SliceErrors {
    std::vector<std::vector<double>> t2; ///< [band][slice]
    std::vector<double> pd;              ///< [slice]
};

inline void check_maps(const ParameterMaps& pred, const ParameterMaps& ref, const Tensor<uint8_t>* mask) {
    if (pred.t2.shape != ref.t2.shape || pred.pd.shape != ref.pd.shape || pred.t2.shape != pred.pd.shape)
        throw InvalidArgument("predicted and reference maps are not co-registered (shape mismatch)");
    if (ref.t2.rank() != 3) throw InvalidArgument("maps must be 3-D (slices x rows x cols)");
    if (mask && mask->shape != ref.t2.shape) throw InvalidArgument("mask shape differs from the maps");
}

} // namespace detail

/// Mean relative T2 error inside masks built from the reference T2 only, plus the PD error over
/// the union of those masks.
inline EvalReport range_masked_t2_errors(const ParameterMaps& pred, const ParameterMaps& ref, const RangeSpec& ranges = {},
                                         const Tensor<uint8_t>* mask = nullptr) {
    detail::check_maps(pred, ref, mask);
    const auto bands = ranges.bands();
    const std::span<const uint8_t> m = mask ? std::span<const uint8_t>(mask->data) : std::span<const uint8_t>{};
    const auto t2_err = relative_error_map(pred.t2.data, ref.t2.data, m);
    const auto pd_err = relative_error_map(pred.pd.data, ref.pd.data, m);

    EvalReport report;
    std::vector<double> sums(bands.size(), 0.0);
    report.t2.resize(bands.size());
    double pd_sum = 0.0;
    for (size_t i = 0; i < ref.t2.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        const int b = detail::band_of(ref.t2[i], bands);
        if (b < 0) continue;
        if (!std::isnan(t2_err.percent[i])) {
            sums[static_cast<size_t>(b)] += t2_err.percent[i];
            ++report.t2[static_cast<size_t>(b)].count;
        }
        if (!std::isnan(pd_err.percent[i])) {
            pd_sum += pd_err.percent[i];
            ++report.pd_count;
        } else {
            ++report.zero_reference_pixels;
        }
    }
    for (size_t b = 0; b < bands.size(); ++b) {
        auto& r = report.t2[b];
        r.lo = bands[b].first;
        r.hi = bands[b].second;
        if (r.count) r.mean_error = sums[b] / static_cast<double>(r.count);
    }
    if (report.pd_count) report.pd_mean_error = pd_sum / static_cast<double>(report.pd_count);
    std::ostringstream support;
    support << "reference T2 in [" << ranges.lo << ", " << ranges.hi << ")" << (mask ? " and mask" : "");
    report.pd_support = support.str();
    if (report.zero_reference_pixels)
        report.warnings.push_back(std::to_string(report.zero_reference_pixels) +
                                  " pixel(s) with zero reference PD excluded from the PD error");
    return report;
}

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;
};

/// Two-sided paired Student t-test on per-case differences a[i] - b[i].
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("paired t-test needs equal-length samples");
    const size_t n = a.size();
    if (n < 2) throw DegenerateResult("paired t-test needs at least two cases");
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    double scale = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    // Differences that are constant up to rounding have no defined t statistic.
    if (!(sd > 1e-12 * std::max(1.0, scale))) throw DegenerateResult("paired differences have zero variance");
    const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const double df = static_cast<double>(n - 1);
    const boost::math::students_t dist(df);
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    return {t, df, std::min(1.0, p)};
}

/// Per-slice mean errors for each band and for PD; the cases of a paired comparison.
inline detail::SliceErrors per_slice_errors(const ParameterMaps& pred, const ParameterMaps& ref, const RangeSpec& ranges = {}) {
    detail::check_maps(pred, ref, nullptr);
    const auto bands = ranges.bands();
    const size_t slices = ref.t2.shape[0];
    const size_t plane = ref.t2.shape[1] * ref.t2.shape[2];
    detail::SliceErrors out;
    out.t2.assign(bands.size(), std::vector<double>(slices, std::numeric_limits<double>::quiet_NaN()));
    out.pd.assign(slices, std::numeric_limits<double>::quiet_NaN());
    for (size_t s = 0; s < slices; ++s) {
        ParameterMaps ps, rs;
        auto slice_of = [&](const Volume& v) {
            Volume out_v({1, v.shape[1], v.shape[2]});
            std::copy_n(v.data.begin() + static_cast<ptrdiff_t>(s * plane), plane, out_v.data.begin());
            return out_v;
        };
        ps.t2 = slice_of(pred.t2);
        ps.pd = slice_of(pred.pd);
        rs.t2 = slice_of(ref.t2);
        rs.pd = slice_of(ref.pd);
        const auto r = range_masked_t2_errors(ps, rs, ranges);
        for (size_t b = 0; b < bands.size(); ++b) out.t2[b][s] = r.t2[b].mean_error;
        out.pd[s] = r.pd_mean_error;
    }
    return out;
}

/// Attaches paired t-test p-values (per band and PD, cases = slices) comparing `pred` against
/// `other`. Bands where the test is undefined keep no p-value and add a warning.
inline void attach_paired_tests(EvalReport& report, const ParameterMaps& pred, const ParameterMaps& other,
                                const ParameterMaps& ref, const RangeSpec& ranges = {}) {
    const auto a = per_slice_errors(pred, ref, ranges);
    const auto b = per_slice_errors(other, ref, ranges);
    auto test = [&](const std::vector<double>& x, const std::vector<double>& y, const std::string& label) -> std::optional<double> {
        std::vector<double> xa, ya;
        for (size_t i = 0; i < x.size(); ++i)
            if (!std::isnan(x[i]) && !std::isnan(y[i])) {
                xa.push_back(x[i]);
                ya.push_back(y[i]);
            }
        try {
            return paired_t_test(xa, ya).p_value;
        } catch (const DegenerateResult& e) {
            report.warnings.push_back(label + ": " + e.what());
            return std::nullopt;
        }
    };
    for (size_t k = 0; k < report.t2.size(); ++k) {
        std::ostringstream label;
        label << "T2 [" << report.t2[k].lo << ", " << report.t2[k].hi << ")";
        report.t2[k].p_value = test(a.t2[k], b.t2[k], label.str());
    }
    report.pd_p_value = test(a.pd, b.pd, "PD");
}

// Report serialization. NaN (empty range) is written as JSON null.

inline nlohmann::json report_to_json(const EvalReport& r) {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& s : r.t2) {
        nlohmann::json e{{"lo", s.lo}, {"hi", s.hi}, {"count", s.count}, {"mean_error_percent", num(s.mean_error)}};
        if (s.p_value) e["p_value"] = *s.p_value;
        ranges.push_back(e);
    }
    nlohmann::json j{{"t2_ranges", ranges},
                     {"pd", {{"mean_error_percent", num(r.pd_mean_error)}, {"count", r.pd_count}, {"support", r.pd_support}}},
                     {"zero_reference_pixels", r.zero_reference_pixels},
                     {"significance", r.significance},
                     {"warnings", r.warnings}};
    if (r.pd_p_value) j["pd"]["p_value"] = *r.pd_p_value;
    return j;
}

inline std::string report_to_table(const EvalReport& r) {
    std::ostringstream o;
    const bool with_p = r.pd_p_value.has_value() || std::any_of(r.t2.begin(), r.t2.end(), [](const auto& s) { return s.p_value.has_value(); });
    auto cell = [](double v) {
        std::ostringstream c;
        if (std::isnan(v)) c << "n/a";
        else c << std::fixed << std::setprecision(4) << v;
        return c.str();
    };
    o << std::left << std::setw(16) << "range" << std::right << std::setw(10) << "pixels" << std::setw(14) << "error %";
    if (with_p) o << std::setw(12) << "p";
    o << '\n';
    for (const auto& s : r.t2) {
        std::ostringstream label;
        label << "T2 " << s.lo << "-" << s.hi;
        o << std::left << std::setw(16) << label.str() << std::right << std::setw(10) << s.count << std::setw(14) << cell(s.mean_error);
        if (with_p) o << std::setw(12) << (s.p_value ? cell(*s.p_value) : std::string("n/a"));
        o << '\n';
    }
    o << std::left << std::setw(16) << "PD" << std::right << std::setw(10) << r.pd_count << std::setw(14) << cell(r.pd_mean_error);
    if (with_p) o << std::setw(12) << (r.pd_p_value ? cell(*r.pd_p_value) : std::string("n/a"));
    o << '\n';
    return o.str();
}

inline std::string report_to_csv(const EvalReport& r) {
    std::ostringstream o;
    o << "quantity,lo,hi,count,mean_error_percent,p_value\n";
    auto val = [](double v) { return std::isnan(v) ? std::string() : std::to_string(v); };
    for (const auto& s : r.t2)
        o << "t2," << s.lo << ',' << s.hi << ',' << s.count << ',' << val(s.mean_error) << ','
          << (s.p_value ? std::to_string(*s.p_value) : std::string()) << '\n';
    o << "pd,,," << r.pd_count << ',' << val(r.pd_mean_error) << ',' << (r.pd_p_value ? std::to_string(*r.pd_p_value) : std::string())
      << '\n';
    return o.str();
}

} // namespace emct2
