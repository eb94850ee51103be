#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "emct2/dictionary.hpp"
#include "emct2/epg.hpp"
#include "emct2/error.hpp"
#include "emct2/parallel.hpp"
#include "emct2/tensor.hpp"

namespace emct2 {

enum class PhantomLayout { TissueBlocks, SmoothGradient };
enum class NoiseModel { Gaussian, Rician };

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Ground-truth description of a synthetic phantom.
struct PhantomSpec {
    size_t rows = 128;
    size_t cols = 120;
    size_t slices = 4;
    PhantomLayout layout = PhantomLayout::TissueBlocks;
    size_t blocks_y = 4;              ///< tissue-block tiling
    size_t blocks_x = 4;
    Range t2_range{30.0, 180.0};      ///< ms; blocks sweep it linearly, endpoints included
    double t2_quantum = 1.0;          ///< snap T2 to multiples of this (0 = continuous)
    Range pd_range{0.6, 1.0};
    bool b1_constant = false;
    Range b1_range{0.85, 1.15};       ///< planar ramp across columns, or {v, v} when constant
    double b1_quantum = 0.0;          ///< snap B1 to multiples of this (0 = continuous)
    double noise_sigma = 0.0;         ///< relative to the mean noiseless first-echo signal
    NoiseModel noise_model = NoiseModel::Gaussian;
    uint64_t seed = 1;
};

namespace detail {

inline double quantize(double v, double q) { return q > 0.0 ? std::round(v / q) * q : v; }

/// SplitMix64 finalizer; decorrelates per-pixel RNG seeds derived from one run seed.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::mt19937_64 pixel_rng(uint64_t seed, uint64_t stream, uint64_t pixel) {
    return std::mt19937_64(mix_seed(mix_seed(seed ^ mix_seed(stream)) + pixel));
}

} // namespace detail

inline void validate_phantom_spec(const PhantomSpec& spec, const DictionaryGrid& coverage) {
    if (spec.rows == 0 || spec.cols == 0 || spec.slices == 0) throw InvalidArgument("phantom shape must be non-empty");
    if (spec.layout == PhantomLayout::TissueBlocks && (spec.blocks_x == 0 || spec.blocks_y == 0))
        throw InvalidArgument("tissue-block layout needs at least one block");
    if (!(spec.t2_range.lo > 0.0) || spec.t2_range.hi < spec.t2_range.lo)
        throw InvalidArgument("phantom T2 range must be positive and ordered");
    const double t2lo = detail::quantize(spec.t2_range.lo, spec.t2_quantum);
    const double t2hi = detail::quantize(spec.t2_range.hi, spec.t2_quantum);
    if (!coverage.covers_t2(t2lo) || !coverage.covers_t2(t2hi))
        throw InvalidArgument("phantom T2 range lies outside the dictionary grid");
    if (spec.pd_range.lo < 0.0 || spec.pd_range.hi < spec.pd_range.lo) throw InvalidArgument("invalid PD range");
    const Range b1 = spec.b1_constant ? Range{spec.b1_range.lo, spec.b1_range.lo} : spec.b1_range;
    if (!(b1.lo > 0.0) || b1.hi < b1.lo || b1.hi > 2.0) throw InvalidArgument("invalid B1 range");
    if (!coverage.covers_b1(detail::quantize(b1.lo, spec.b1_quantum)) ||
        !coverage.covers_b1(detail::quantize(b1.hi, spec.b1_quantum)))
        throw InvalidArgument("phantom B1 range lies outside the dictionary grid");
    if (!(spec.noise_sigma >= 0.0)) throw InvalidArgument("noise sigma must be non-negative");
}

/// Deterministic ground-truth T2/PD/B1 maps for `spec`.
///
/// Tissue blocks take T2 values spaced evenly over t2_range (block order rotates by slice) with
/// a per-block PD drawn from pd_range. The smooth layout ramps T2 down the rows and PD across
/// the columns.
inline ParameterMaps make_phantom(const PhantomSpec& spec, const DictionaryGrid& coverage = DictionaryGrid::standard()) {
    validate_phantom_spec(spec, coverage);
    const std::vector<size_t> shape{spec.slices, spec.rows, spec.cols};
    ParameterMaps maps;
    maps.t2 = Volume(shape);
    maps.pd = Volume(shape);
    maps.b1 = Volume(shape);
    maps.provenance.fitter = "ground_truth";

    const size_t n_blocks = spec.blocks_x * spec.blocks_y;
    std::vector<double> block_t2(n_blocks);
    for (size_t b = 0; b < n_blocks; ++b) {
        const double f = n_blocks > 1 ? static_cast<double>(b) / static_cast<double>(n_blocks - 1) : 0.0;
        block_t2[b] = detail::quantize(spec.t2_range.lo + f * (spec.t2_range.hi - spec.t2_range.lo), spec.t2_quantum);
    }
    std::mt19937_64 rng(detail::mix_seed(spec.seed));
    std::uniform_real_distribution<double> pd_draw(spec.pd_range.lo, spec.pd_range.hi);
    std::vector<double> block_pd(n_blocks * spec.slices);
    for (double& v : block_pd) v = spec.pd_range.hi > spec.pd_range.lo ? pd_draw(rng) : spec.pd_range.lo;

    for (size_t s = 0; s < spec.slices; ++s) {
        for (size_t r = 0; r < spec.rows; ++r) {
            for (size_t c = 0; c < spec.cols; ++c) {
                const size_t p = (s * spec.rows + r) * spec.cols + c;
                double t2 = 0.0, pd = 0.0;
                if (spec.layout == PhantomLayout::TissueBlocks) {
                    const size_t by = r * spec.blocks_y / spec.rows;
                    const size_t bx = c * spec.blocks_x / spec.cols;
                    const size_t block = by * spec.blocks_x + bx;
                    t2 = block_t2[(block + s) % n_blocks];
                    pd = block_pd[s * n_blocks + block];
                } else {
                    const double fr = spec.rows > 1 ? static_cast<double>(r) / static_cast<double>(spec.rows - 1) : 0.0;
                    const double fc = spec.cols > 1 ? static_cast<double>(c) / static_cast<double>(spec.cols - 1) : 0.0;
                    t2 = detail::quantize(spec.t2_range.lo + fr * (spec.t2_range.hi - spec.t2_range.lo), spec.t2_quantum);
                    pd = spec.pd_range.lo + fc * (spec.pd_range.hi - spec.pd_range.lo);
                }
                double b1 = spec.b1_range.lo;
                if (!spec.b1_constant) {
                    const double fc = spec.cols > 1 ? static_cast<double>(c) / static_cast<double>(spec.cols - 1) : 0.0;
                    b1 = spec.b1_range.lo + fc * (spec.b1_range.hi - spec.b1_range.lo);
                }
                maps.t2[p] = static_cast<float>(t2);
                maps.pd[p] = static_cast<float>(pd);
                (*maps.b1)[p] = static_cast<float>(detail::quantize(b1, spec.b1_quantum));
            }
        }
    }
    return maps;
}

/// How the simulated curve is scaled to the pixel's PD.
enum class PdReference {
    /// Echo 1 equals PD * exp(-TE1/T2), the premise of first-echo back-projection.
    FirstEcho,
    /// Raw curve times PD; echo 1 then also carries the refocusing efficiency sin^2(a/2).
    Excitation,
};

struct ForwardOptions {
    double noise_sigma = 0.0;
    NoiseModel noise_model = NoiseModel::Gaussian;
    uint64_t seed = 1;
    unsigned threads = 0;
    PdReference pd_reference = PdReference::FirstEcho;
    std::vector<ProfileSample> slice_profile;
};

namespace detail {

inline std::vector<double> pixel_signal(double t2, double pd, double b1, const SequenceProtocol& full,
                                        const ForwardOptions& options) {
    std::vector<double> train = options.slice_profile.empty()
                                    ? simulate_echo_train(t2, b1, full)
                                    : simulate_emc_profile(t2, b1, full, options.slice_profile).values;
    double scale = pd;
    if (options.pd_reference == PdReference::FirstEcho) scale = pd * std::exp(-full.te1 / t2) / train.front();
    for (double& v : train) v *= scale;
    return train;
}

} // namespace detail

/// Per-pixel curves scaled by PD plus noise of standard deviation
/// noise_sigma * (mean noiseless first retained echo over pixels with PD > 0).
/// Gaussian noise is clamped at 0; Rician noise takes the magnitude of two noisy quadratures.
/// Pixel p draws from its own RNG stream, so output is independent of the thread count.
inline MESEStack forward_simulate(const ParameterMaps& maps, const SequenceProtocol& protocol,
                                  const ForwardOptions& options = {}) {
    maps.validate();
    protocol.validate();
    if (!(options.noise_sigma >= 0.0)) throw InvalidArgument("noise sigma must be non-negative");
    const size_t slices = maps.t2.shape[0], rows = maps.t2.shape[1], cols = maps.t2.shape[2];
    const size_t plane = rows * cols;
    const auto retained = protocol.retained();
    const size_t ne = retained.size();

    SequenceProtocol full = protocol;
    full.echo_selection.clear();

    MESEStack stack;
    stack.protocol = protocol;
    stack.data = Tensor<float>({slices, ne, rows, cols});
    std::vector<double> clean(slices * ne * plane, 0.0);
    parallel_for(slices * plane, options.threads, [&](size_t begin, size_t end) {
        for (size_t p = begin; p < end; ++p) {
            const double pd = maps.pd[p];
            const double t2 = maps.t2[p];
            if (!(pd > 0.0) || !(t2 > 0.0)) continue;
            const double b1 = maps.b1 ? static_cast<double>((*maps.b1)[p]) : 1.0;
            const auto signal = detail::pixel_signal(t2, pd, b1, full, options);
            const size_t s = p / plane, q = p % plane;
            for (size_t e = 0; e < ne; ++e)
                clean[(s * ne + e) * plane + q] = signal[static_cast<size_t>(retained[e]) - 1];
        }
    });

    double sigma = 0.0;
    if (options.noise_sigma > 0.0) {
        double sum = 0.0;
        size_t count = 0;
        for (size_t p = 0; p < slices * plane; ++p) {
            if (!(maps.pd[p] > 0.0f) || !(maps.t2[p] > 0.0f)) continue;
            sum += clean[(p / plane) * ne * plane + p % plane];
            ++count;
        }
        sigma = count ? options.noise_sigma * sum / static_cast<double>(count) : 0.0;
    }

    parallel_for(slices * plane, options.threads, [&](size_t begin, size_t end) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (size_t p = begin; p < end; ++p) {
            const size_t s = p / plane, q = p % plane;
            auto rng = detail::pixel_rng(options.seed, 0, p);
            normal.reset();
            for (size_t e = 0; e < ne; ++e) {
                const size_t i = (s * ne + e) * plane + q;
                double v = clean[i];
                if (sigma > 0.0) {
                    if (options.noise_model == NoiseModel::Gaussian) {
                        v = std::max(0.0, v + sigma * normal(rng));
                    } else {
                        const double re = v + sigma * normal(rng);
                        const double im = sigma * normal(rng);
                        v = std::hypot(re, im);
                    }
                }
                stack.data[i] = static_cast<float>(v);
            }
        }
    });
    return stack;
}

/// Keeps the stored echoes at 1-based positions `indices` and records the selection in the protocol.
inline MESEStack select_echoes(const MESEStack& stack, const std::vector<int>& indices) {
    stack.validate();
    if (indices.empty()) throw InvalidArgument("echo selection is empty");
    MESEStack out;
    out.protocol = stack.protocol.with_selection(indices);
    out.mask = stack.mask;
    const size_t plane = stack.plane();
    out.data = Tensor<float>({stack.slices(), indices.size(), stack.rows(), stack.cols()});
    for (size_t s = 0; s < stack.slices(); ++s)
        for (size_t e = 0; e < indices.size(); ++e) {
            const size_t src = static_cast<size_t>(indices[e]) - 1;
            std::copy_n(stack.data.data.begin() + static_cast<ptrdiff_t>((s * stack.echoes() + src) * plane), plane,
                        out.data.data.begin() + static_cast<ptrdiff_t>((s * indices.size() + e) * plane));
        }
    // Re-canonicalize so that an identity selection hashes like the original protocol.
    if (out.protocol.echo_selection.size() == static_cast<size_t>(out.protocol.n_echoes)) out.protocol.echo_selection.clear();
    return out;
}

// JSON form of the phantom spec used by the CLI. Unknown keys are rejected.

inline void from_json(const nlohmann::json& j, Range& r) {
    if (!j.is_array() || j.size() != 2) throw InvalidArgument("range must be a two-element array [lo, hi]");
    r.lo = j[0].get<double>();
    r.hi = j[1].get<double>();
}
inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{"rows",      "cols",        "slices",     "layout",     "blocks_y",
                                                "blocks_x",  "t2_range",    "t2_quantum", "pd_range",   "b1_field",
                                                "b1_range",  "b1_quantum",  "noise_sigma", "noise_model", "seed"};
    if (!j.is_object()) throw InvalidArgument("phantom spec must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw InvalidArgument("phantom spec: unknown key '" + it.key() + "'");
    PhantomSpec s;
    try {
        s.rows = j.value("rows", s.rows);
        s.cols = j.value("cols", s.cols);
        s.slices = j.value("slices", s.slices);
        const auto layout = j.value("layout", std::string("tissue-block"));
        if (layout == "tissue-block") s.layout = PhantomLayout::TissueBlocks;
        else if (layout == "smooth-gradient") s.layout = PhantomLayout::SmoothGradient;
        else throw InvalidArgument("phantom spec: layout must be tissue-block or smooth-gradient");
        s.blocks_y = j.value("blocks_y", s.blocks_y);
        s.blocks_x = j.value("blocks_x", s.blocks_x);
        if (j.contains("t2_range")) s.t2_range = j.at("t2_range").get<Range>();
        s.t2_quantum = j.value("t2_quantum", s.t2_quantum);
        if (j.contains("pd_range")) s.pd_range = j.at("pd_range").get<Range>();
        const auto field = j.value("b1_field", std::string("planar-ramp"));
        if (field == "constant") s.b1_constant = true;
        else if (field != "planar-ramp") throw InvalidArgument("phantom spec: b1_field must be constant or planar-ramp");
        if (j.contains("b1_range")) {
            if (s.b1_constant && j.at("b1_range").is_number()) s.b1_range = {j.at("b1_range").get<double>(), j.at("b1_range").get<double>()};
            else s.b1_range = j.at("b1_range").get<Range>();
        } else if (s.b1_constant) {
            s.b1_range = {1.0, 1.0};
        }
        s.b1_quantum = j.value("b1_quantum", s.b1_quantum);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        const auto model = j.value("noise_model", std::string("gaussian"));
        if (model == "gaussian") s.noise_model = NoiseModel::Gaussian;
        else if (model == "rician") s.noise_model = NoiseModel::Rician;
        else throw InvalidArgument("phantom spec: noise_model must be gaussian or rician");
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("phantom spec: ") + e.what());
    }
    return s;
}

} // namespace emct2
