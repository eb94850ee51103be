#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "emct2/dictionary.hpp"
#include "emct2/error.hpp"
#include "emct2/parallel.hpp"
#include "emct2/tensor.hpp"

namespace emct2 {

/// Outcome of matching one pixel curve.
struct Match {
    size_t row = 0;
    double t2_ms = 0.0;
    double b1_factor = 0.0;
    double residual = 0.0;      ///< L2 distance between the normalized curve and the row
    size_t evaluations = 0;     ///< number of dictionary rows compared
    bool degenerate = false;    ///< all-zero or non-finite input; no parameters assigned
    bool fallback = false;      ///< fast search resorted to the exhaustive scan
};

/// Squared distances closer than this count as ties and resolve to the lower row index.
/// Rows that differ only by rounding (e.g. the B1 mirror pairs of a hard-pulse dictionary)
/// then resolve deterministically.
inline constexpr double kTieTolerance = 1e-12;

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

/// Copies `curve` into `out` normalized; false for all-zero or non-finite curves.
inline bool normalized_copy(std::span<const double> curve, std::vector<double>& out) {
    out.assign(curve.begin(), curve.end());
    for (double v : out)
        if (!std::isfinite(v)) return false;
    const double norm = normalize_curve(out);
    return norm > 0.0 && std::isfinite(norm);
}

inline void check_curve_length(std::span<const double> curve, const EMCDictionary& dict) {
    if (curve.size() != dict.echoes)
        throw InvalidArgument("curve has " + std::to_string(curve.size()) + " echoes, dictionary has " +
                              std::to_string(dict.echoes));
}

inline bool better(double d, size_t row, double best_d, size_t best_row) {
    return d < best_d - kTieTolerance || (d <= best_d + kTieTolerance && row < best_row);
}

inline Match finish(const EMCDictionary& dict, size_t row, std::span<const double> x, size_t evaluations) {
    Match m;
    m.row = dict.canonical.empty() ? row : dict.canonical[row];
    m.t2_ms = dict.t2_of(m.row);
    m.b1_factor = dict.b1_of(m.row);
    m.residual = std::sqrt(squared_distance(x, dict.row(m.row)));
    m.evaluations = evaluations;
    return m;
}

inline Match exact_scan(std::span<const double> x, const EMCDictionary& dict) {
    size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t r = 0; r < dict.rows(); ++r) {
        const double d = squared_distance(x, dict.row(r));
        if (d < best_d - kTieTolerance) {
            best_d = d;
            best = r;
        }
    }
    return finish(dict, best, x, dict.rows());
}

} // namespace detail

/// Exhaustive L2 match of the normalized curve against every dictionary row.
inline Match match_pixel_exact(std::span<const double> curve, const EMCDictionary& dict) {
    detail::check_curve_length(curve, dict);
    std::vector<double> x;
    if (!detail::normalized_copy(curve, x)) return Match{.degenerate = true};
    return detail::exact_scan(x, dict);
}

struct FastSearchConfig {
    size_t t2_stride = 4;   ///< coarse stage samples every n-th T2 grid point
    size_t b1_stride = 3;   ///< and every n-th B1 grid point
    size_t max_starts = 4;  ///< local descents launched from the best coarse local minima
    size_t extra_starts = 2; ///< plus this many of the best coarse points that are not local minima
    int escape_radius = 2;  ///< widest ring probed before a descent stops
    /// Fall back to the exhaustive scan when the descended residual (normalized units, 0..2)
    /// exceeds this; such curves are too far from every row for the landscape to be trusted.
    double fallback_residual = 0.3;
};

namespace detail {

/// Grid indices sampled by the coarse stage: every stride-th point plus the last one.
inline std::vector<size_t> coarse_axis(size_t n, size_t stride) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < n; i += std::max<size_t>(stride, 1)) idx.push_back(i);
    if (idx.back() != n - 1) idx.push_back(n - 1);
    return idx;
}

/// Memoized distance evaluation for one pixel's search.
class DistanceCache {
public:
    DistanceCache(std::span<const double> x, const EMCDictionary& dict) : x_(x), dict_(dict) {}

    double operator()(size_t row) {
        for (const auto& [r, d] : seen_)
            if (r == row) return d;
        const double d = squared_distance(x_, dict_.row(row));
        seen_.emplace_back(row, d);
        return d;
    }
    size_t evaluations() const { return seen_.size(); }

private:
    std::span<const double> x_;
    const EMCDictionary& dict_;
    std::vector<std::pair<size_t, double>> seen_;
};

} // namespace detail

/// Coarse subsampled scan followed by steepest descent over adjacent grid cells.
inline Match match_pixel_fast(std::span<const double> curve, const EMCDictionary& dict,
                              const FastSearchConfig& config = {}) {
    detail::check_curve_length(curve, dict);
    std::vector<double> x;
    if (!detail::normalized_copy(curve, x)) return Match{.degenerate = true};

    const auto& grid = dict.grid;
    const size_t nt = grid.t2_values.size();
    const size_t nb = grid.b1_values.size();
    const auto ct = detail::coarse_axis(nt, config.t2_stride);
    const auto cb = detail::coarse_axis(nb, config.b1_stride);

    // Coarse stage; distances are not cached since the descent rarely revisits these rows.
    std::vector<double> coarse(ct.size() * cb.size());
    for (size_t i = 0; i < ct.size(); ++i)
        for (size_t j = 0; j < cb.size(); ++j)
            coarse[i * cb.size() + j] = detail::squared_distance(x, dict.row(grid.encode(ct[i], cb[j])));
    size_t evaluations = coarse.size();

    // Local minima of the coarse grid seed the descents, so separate basins each get a start.
    std::vector<std::pair<double, size_t>> starts, others;
    for (size_t i = 0; i < ct.size(); ++i) {
        for (size_t j = 0; j < cb.size(); ++j) {
            const double d = coarse[i * cb.size() + j];
            bool is_min = true;
            for (int di = -1; di <= 1 && is_min; ++di)
                for (int dj = -1; dj <= 1 && is_min; ++dj) {
                    const auto ii = static_cast<ptrdiff_t>(i) + di;
                    const auto jj = static_cast<ptrdiff_t>(j) + dj;
                    if ((di == 0 && dj == 0) || ii < 0 || jj < 0 || ii >= static_cast<ptrdiff_t>(ct.size()) ||
                        jj >= static_cast<ptrdiff_t>(cb.size()))
                        continue;
                    if (coarse[static_cast<size_t>(ii) * cb.size() + static_cast<size_t>(jj)] < d) is_min = false;
                }
            (is_min ? starts : others).emplace_back(d, grid.encode(ct[i], cb[j]));
        }
    }
    std::sort(starts.begin(), starts.end());
    if (starts.size() > config.max_starts) starts.resize(config.max_starts);
    // At short T2 the coarse landscape is bumpy enough that the true basin need not hold a
    // coarse local minimum.
    const size_t extra = std::min(config.extra_starts, others.size());
    std::partial_sort(others.begin(), others.begin() + static_cast<ptrdiff_t>(extra), others.end());
    starts.insert(starts.end(), others.begin(), others.begin() + static_cast<ptrdiff_t>(extra));

    detail::DistanceCache dist(x, dict);
    size_t best = starts.front().second;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& start : starts) {
        size_t cur = start.second;
        double cur_d = dist(cur);
        // Steepest descent over the 8 adjacent cells. At a local minimum the ring at distance 2
        // is probed once, which steps over the small ripples the grid spacing leaves along the
        // shallow T2-B1 valley.
        int radius = 1;
        for (;;) {
            const auto [ti, bi] = grid.decode(cur);
            size_t next = cur;
            double next_d = cur_d;
            for (int di = -radius; di <= radius; ++di)
                for (int dj = -radius; dj <= radius; ++dj) {
                    if (std::max(std::abs(di), std::abs(dj)) != radius && radius > 1) continue;
                    const auto ii = static_cast<ptrdiff_t>(ti) + di;
                    const auto jj = static_cast<ptrdiff_t>(bi) + dj;
                    if ((di == 0 && dj == 0) || ii < 0 || jj < 0 || ii >= static_cast<ptrdiff_t>(nt) ||
                        jj >= static_cast<ptrdiff_t>(nb))
                        continue;
                    const size_t r = grid.encode(static_cast<size_t>(ii), static_cast<size_t>(jj));
                    const double d = dist(r);
                    if (detail::better(d, r, next_d, next)) {
                        next = r;
                        next_d = d;
                    }
                }
            if (next == cur) {
                if (radius >= config.escape_radius) break;
                ++radius;
                continue;
            }
            radius = 1;
            cur = next;
            cur_d = next_d;
        }
        if (detail::better(cur_d, cur, best_d, best)) {
            best = cur;
            best_d = cur_d;
        }
    }
    evaluations += dist.evaluations();

    if (std::sqrt(best_d) > config.fallback_residual) {
        Match m = detail::exact_scan(x, dict);
        m.evaluations += evaluations;
        m.fallback = true;
        return m;
    }
    return detail::finish(dict, best, x, evaluations);
}

/// PD = I1 / exp(-TE1 / T2) per pixel; T2 = 0 marks an unfitted pixel and yields PD = 0.
inline std::vector<float> backproject_pd(std::span<const float> first_echo, std::span<const float> t2_map, double te1) {
    if (!(te1 > 0.0)) throw InvalidArgument("TE1 must be positive");
    if (first_echo.size() != t2_map.size()) throw InvalidArgument("first-echo image and T2 map differ in size");
    std::vector<float> pd(t2_map.size(), 0.0f);
    for (size_t i = 0; i < pd.size(); ++i) {
        if (!(t2_map[i] > 0.0f)) continue;
        pd[i] = static_cast<float>(static_cast<double>(first_echo[i]) / std::exp(-te1 / static_cast<double>(t2_map[i])));
    }
    return pd;
}

/// Back-projection is exact only across the uncontaminated interval up to echo 1, so the
/// first retained echo must be echo 1.
inline void require_first_echo_retained(const SequenceProtocol& protocol) {
    if (protocol.retained().front() != 1)
        throw UnsupportedProtocol("PD back-projection requires echo 1 to be retained");
}

enum class FitMethod { Exact, Fast };

inline const char* to_string(FitMethod m) { return m == FitMethod::Exact ? "exact" : "fast"; }

inline FitMethod parse_fit_method(const std::string& s) {
    if (s == "exact") return FitMethod::Exact;
    if (s == "fast") return FitMethod::Fast;
    throw InvalidArgument("unknown fit method '" + s + "' (expected exact|fast)");
}

struct FitOptions {
    FitMethod method = FitMethod::Exact;
    unsigned threads = 0;
    FastSearchConfig fast;
};

struct FitStats {
    size_t fitted_pixels = 0;
    size_t distance_evaluations = 0;
    size_t fallback_pixels = 0;
    size_t degenerate_pixels = 0;
};

/// Matches every masked pixel and back-projects PD from echo 1.
inline ParameterMaps fit_maps(const MESEStack& stack, const EMCDictionary& dict, const FitOptions& options = {},
                              FitStats* stats = nullptr) {
    stack.validate();
    if (protocol_hash(stack.protocol) != protocol_hash(dict.protocol))
        throw ProtocolMismatch("stack protocol does not match the dictionary protocol");
    if (stack.echoes() != dict.echoes) throw InvalidArgument("stack and dictionary echo counts differ");
    require_first_echo_retained(stack.protocol);

    const std::vector<size_t> shape{stack.slices(), stack.rows(), stack.cols()};
    ParameterMaps maps;
    maps.t2 = Volume(shape);
    maps.pd = Volume(shape);
    maps.b1 = Volume(shape);
    maps.residual = Volume(shape);
    maps.flags = Tensor<uint8_t>(shape);

    const size_t plane = stack.plane();
    std::atomic<size_t> evaluations{0}, fallbacks{0}, degenerates{0}, fitted{0};
    parallel_for(stack.pixels(), options.threads, [&](size_t begin, size_t end) {
        std::vector<double> curve(stack.echoes());
        size_t local_eval = 0, local_fb = 0, local_deg = 0, local_fit = 0;
        for (size_t p = begin; p < end; ++p) {
            if (!stack.masked_in(p)) {
                maps.flags[p] = kFlagMaskedOut;
                continue;
            }
            const size_t s = p / plane;
            const size_t q = p % plane;
            for (size_t e = 0; e < curve.size(); ++e) curve[e] = stack.at(s, e, q);
            const Match m = options.method == FitMethod::Exact ? match_pixel_exact(curve, dict)
                                                               : match_pixel_fast(curve, dict, options.fast);
            local_eval += m.evaluations;
            if (m.degenerate) {
                maps.flags[p] = kFlagDegenerate;
                ++local_deg;
                continue;
            }
            ++local_fit;
            maps.t2[p] = static_cast<float>(m.t2_ms);
            (*maps.b1)[p] = static_cast<float>(m.b1_factor);
            (*maps.residual)[p] = static_cast<float>(m.residual);
            if (m.fallback) {
                maps.flags[p] = kFlagFallback;
                ++local_fb;
            }
        }
        evaluations += local_eval;
        fallbacks += local_fb;
        degenerates += local_deg;
        fitted += local_fit;
    });

    std::vector<float> first_echo(stack.pixels());
    for (size_t p = 0; p < stack.pixels(); ++p) first_echo[p] = stack.at(p / plane, 0, p % plane);
    const auto pd = backproject_pd(first_echo, maps.t2.data, stack.protocol.te1);
    maps.pd.data.assign(pd.begin(), pd.end());

    maps.provenance = {to_string(options.method), dictionary_checksum(dict), stack.protocol.retained(),
                       fallbacks.load(), degenerates.load()};
    if (stats) *stats = {fitted.load(), evaluations.load(), fallbacks.load(), degenerates.load()};
    return maps;
}

} // namespace emct2
