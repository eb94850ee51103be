#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "emct2/error.hpp"
#include "emct2/protocol.hpp"

namespace emct2 {

/// Echo-modulation curve: one non-negative magnitude per retained echo.
struct EMCCurve {
    std::vector<double> values;
    double t2_ms = 0.0;
    double b1_factor = 1.0;
};

/// Configuration-state amplitudes of the extended phase graph, orders 0..Q.
///
/// f_plus[0] and f_minus[0] describe the same (observable) state and are kept
/// complex conjugates of each other.
struct EPGState {
    std::vector<std::complex<double>> f_plus;
    std::vector<std::complex<double>> f_minus;
    std::vector<std::complex<double>> z;

    explicit EPGState(size_t max_order) : f_plus(max_order + 1), f_minus(max_order + 1), z(max_order + 1) {}

    size_t max_order() const { return f_plus.size() - 1; }

    /// Ideal 90 degree excitation from equilibrium onto the axis at phase 0.
    static EPGState excited(size_t max_order) {
        EPGState s(max_order);
        s.f_plus[0] = 1.0;
        s.f_minus[0] = 1.0;
        return s;
    }

    /// Free relaxation over `dt` ms. Z0 recovers towards equilibrium magnetization 1.
    void relax(double dt, double t2, double t1) {
        const double e2 = std::exp(-dt / t2);
        const double e1 = std::exp(-dt / t1);
        for (size_t k = 0; k <= max_order(); ++k) {
            f_plus[k] *= e2;
            f_minus[k] *= e2;
            z[k] *= e1;
        }
        z[0] += 1.0 - e1;
    }

    /// Unit dephasing by an ideal crusher gradient. Orders beyond Q are dropped.
    void dephase() {
        const size_t q = max_order();
        for (size_t k = q; k >= 1; --k) f_plus[k] = f_plus[k - 1];
        for (size_t k = 0; k < q; ++k) f_minus[k] = f_minus[k + 1];
        f_minus[q] = 0.0;
        f_plus[0] = std::conj(f_minus[0]);
    }

    /// Instantaneous RF rotation by `alpha` radians about an axis at `phase` radians from x.
    void rotate(double alpha, double phase) {
        using namespace std::complex_literals;
        const double c2 = std::cos(alpha / 2.0) * std::cos(alpha / 2.0);
        const double s2 = std::sin(alpha / 2.0) * std::sin(alpha / 2.0);
        const double sa = std::sin(alpha);
        const double ca = std::cos(alpha);
        const std::complex<double> ep = std::exp(1i * phase);
        const std::complex<double> e2p = ep * ep;
        for (size_t k = 0; k <= max_order(); ++k) {
            const auto fp = f_plus[k];
            const auto fm = f_minus[k];
            const auto zk = z[k];
            f_plus[k] = c2 * fp + e2p * s2 * fm - 1i * ep * sa * zk;
            f_minus[k] = std::conj(e2p) * s2 * fp + c2 * fm + 1i * std::conj(ep) * sa * zk;
            z[k] = -0.5i * std::conj(ep) * sa * fp + 0.5i * ep * sa * fm + ca * zk;
        }
    }

    double echo_magnitude() const { return std::abs(f_plus[0]); }
};

struct EpgOptions {
    /// Highest configuration order tracked; 0 selects the number of echoes.
    size_t max_order = 0;
};

namespace detail {

inline void check_emc_args(double t2_ms, double b1_factor, const SequenceProtocol& protocol) {
    if (!(t2_ms > 0.0)) throw InvalidArgument("T2 must be positive");
    if (!(b1_factor > 0.0 && b1_factor <= 2.0)) throw InvalidArgument("B1 factor must lie in (0, 2]");
    protocol.validate();
}

inline std::vector<double> select(const std::vector<double>& full, const SequenceProtocol& protocol) {
    if (protocol.echo_selection.empty()) return full;
    std::vector<double> out;
    out.reserve(protocol.echo_selection.size());
    for (int k : protocol.echo_selection) out.push_back(full[static_cast<size_t>(k) - 1]);
    return out;
}

} // namespace detail

/// Magnitudes of every echo (selection ignored) of a CPMG train with hard refocusing
/// pulses of angle b1_factor * nominal.
///
/// With hard pulses the magnitudes are invariant under b1 -> 2 - b1 (at nominal 180):
/// a rotation by 360 - a equals the mirror image of a rotation by a, and T1 recovery
/// only adds a quadrature component. Only a slice profile breaks the symmetry.
inline std::vector<double> simulate_echo_train(double t2_ms, double b1_factor, const SequenceProtocol& protocol,
                                               EpgOptions options = {}) {
    detail::check_emc_args(t2_ms, b1_factor, protocol);
    const size_t n = static_cast<size_t>(protocol.n_echoes);
    const size_t q = options.max_order == 0 ? n : std::max(options.max_order, n);
    const double alpha = b1_factor * protocol.nominal_refocus_deg * std::numbers::pi / 180.0;
    // Excited magnetization lies along the axis at phase 0; CPMG refocuses about it.
    constexpr double refocus_phase = 0.0;

    EPGState state = EPGState::excited(q);
    std::vector<double> echoes(n);
    for (size_t e = 0; e < n; ++e) {
        const double half = (e == 0 ? protocol.te1 : protocol.delta_te) / 2.0;
        state.relax(half, t2_ms, protocol.t1_assumed);
        state.dephase();
        state.rotate(alpha, refocus_phase);
        state.dephase();
        state.relax(half, t2_ms, protocol.t1_assumed);
        echoes[e] = state.echo_magnitude();
    }
    return echoes;
}

/// Echo-modulation curve at the retained echoes of `protocol`.
inline EMCCurve simulate_emc(double t2_ms, double b1_factor, const SequenceProtocol& protocol, EpgOptions options = {}) {
    return {detail::select(simulate_echo_train(t2_ms, b1_factor, protocol, options), protocol), t2_ms, b1_factor};
}

/// One sample of a discrete slice profile: the local flip angle is `angle_scale` times the
/// pixel's effective angle, contributing with relative `weight`.
struct ProfileSample {
    double angle_scale = 1.0;
    double weight = 1.0;
};

/// Weighted average of hard-pulse curve magnitudes across a discrete slice profile.
inline EMCCurve simulate_emc_profile(double t2_ms, double b1_factor, const SequenceProtocol& protocol,
                                     std::span<const ProfileSample> profile, EpgOptions options = {}) {
    detail::check_emc_args(t2_ms, b1_factor, protocol);
    if (profile.empty()) throw InvalidArgument("slice profile is empty");
    double total = 0.0;
    std::vector<double> acc(static_cast<size_t>(protocol.n_echoes), 0.0);
    for (const auto& s : profile) {
        if (!(s.weight >= 0.0) || !(s.angle_scale > 0.0)) throw InvalidArgument("invalid slice profile sample");
        if (s.weight == 0.0) continue;
        // The profile may push the local angle past the 2x nominal bound accepted for B1 alone.
        SequenceProtocol local = protocol;
        local.nominal_refocus_deg *= s.angle_scale;
        const auto train = simulate_echo_train(t2_ms, b1_factor, local, options);
        for (size_t k = 0; k < acc.size(); ++k) acc[k] += s.weight * train[k];
        total += s.weight;
    }
    if (total <= 0.0) throw InvalidArgument("slice profile has zero total weight");
    for (double& v : acc) v /= total;
    return {detail::select(acc, protocol), t2_ms, b1_factor};
}

/// Pure mono-exponential decay pd * exp(-t/T2) at the retained echo times.
inline EMCCurve ideal_exponential(double t2_ms, double pd, const SequenceProtocol& protocol) {
    if (!(t2_ms > 0.0)) throw InvalidArgument("T2 must be positive");
    if (!(pd >= 0.0)) throw InvalidArgument("PD must be non-negative");
    protocol.validate();
    EMCCurve curve{{}, t2_ms, 1.0};
    for (double t : protocol.retained_echo_times()) curve.values.push_back(pd * std::exp(-t / t2_ms));
    return curve;
}

} // namespace emct2
