#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "emct2/epg.hpp"
#include "oracles.hpp"

using namespace emct2;

namespace {

SequenceProtocol standard_protocol() { return SequenceProtocol{}; }

} // namespace

TEST(Epg, ExcitedStateHasUnitF0Only) {
    const auto s = EPGState::excited(10);
    EXPECT_EQ(s.max_order(), 10u);
    EXPECT_EQ(s.f_plus[0], std::complex<double>(1.0));
    for (size_t k = 0; k <= s.max_order(); ++k) {
        if (k) {
            EXPECT_EQ(s.f_plus[k], std::complex<double>(0.0));
            EXPECT_EQ(s.f_minus[k], std::complex<double>(0.0));
        }
        EXPECT_EQ(s.z[k], std::complex<double>(0.0));
    }
}

TEST(Epg, PerfectRefocusingIsPureExponential) {
    const auto c = simulate_emc(100.0, 1.0, standard_protocol());
    ASSERT_EQ(c.values.size(), 10u);
    EXPECT_NEAR(c.values[0], 0.860708, 1e-6);
    for (size_t k = 0; k < 10; ++k) {
        const double expected = std::exp(-15.0 * static_cast<double>(k + 1) / 100.0);
        EXPECT_LE(std::abs(c.values[k] - expected) / expected, 1e-9) << "echo " << k + 1;
    }
}

TEST(Epg, ImperfectRefocusingMatchesIsochromatOracle) {
    const auto p = standard_protocol();
    const auto c = simulate_emc(80.0, 0.8, p);
    const auto ref = oracle::isochromat_cpmg(80.0, p.t1_assumed, 0.8, p.te1, p.delta_te, p.n_echoes);
    for (size_t k = 0; k < 10; ++k) EXPECT_NEAR(c.values[k], ref[k], 1e-4) << "echo " << k + 1;
    // Stimulated echoes make echo 2 exceed the pure exponential.
    EXPECT_GT(c.values[1], std::exp(-30.0 / 80.0) * 0.9);
}

TEST(Epg, EchoSelectionIsSubsampling) {
    auto p = standard_protocol();
    const auto full = simulate_emc(80.0, 0.85, p);
    p.echo_selection = {1, 3, 5};
    const auto sel = simulate_emc(80.0, 0.85, p);
    ASSERT_EQ(sel.values.size(), 3u);
    EXPECT_EQ(sel.values[0], full.values[0]);
    EXPECT_EQ(sel.values[1], full.values[2]);
    EXPECT_EQ(sel.values[2], full.values[4]);
}

TEST(Epg, IdealExponential) {
    const auto p = standard_protocol();
    for (double v : ideal_exponential(1e12, 1.0, p).values) EXPECT_NEAR(v, 1.0, 1e-9);
    EXPECT_NEAR(ideal_exponential(100.0, 2.0, p).values[0], 1.721416, 1e-6);
    for (double v : ideal_exponential(100.0, 0.0, p).values) EXPECT_EQ(v, 0.0);
}

TEST(Epg, RejectsInvalidArguments) {
    const auto p = standard_protocol();
    EXPECT_THROW(simulate_emc(0.0, 1.0, p), InvalidArgument);
    EXPECT_THROW(simulate_emc(-5.0, 1.0, p), InvalidArgument);
    EXPECT_THROW(simulate_emc(80.0, 0.0, p), InvalidArgument);
    EXPECT_THROW(simulate_emc(80.0, 2.5, p), InvalidArgument);
    EXPECT_THROW(ideal_exponential(80.0, -1.0, p), InvalidArgument);

    auto short_tr = p;
    short_tr.tr = 100.0;
    EXPECT_THROW(simulate_emc(80.0, 1.0, short_tr), InvalidArgument);
    auto bad_sel = p;
    bad_sel.echo_selection = {3, 1};
    EXPECT_THROW(simulate_emc(80.0, 1.0, bad_sel), InvalidArgument);
    bad_sel.echo_selection = {1, 11};
    EXPECT_THROW(simulate_emc(80.0, 1.0, bad_sel), InvalidArgument);
    auto no_echoes = p;
    no_echoes.n_echoes = 0;
    EXPECT_THROW(simulate_emc(80.0, 1.0, no_echoes), InvalidArgument);
}

TEST(Epg, SignalNonDecreasingInT2) {
    const auto p = standard_protocol();
    auto prev = simulate_emc(10.0, 1.0, p).values;
    for (double t2 = 11.0; t2 <= 300.0; t2 += 1.0) {
        const auto cur = simulate_emc(t2, 1.0, p).values;
        for (size_t k = 0; k < cur.size(); ++k) ASSERT_GE(cur[k], prev[k]) << "T2 " << t2 << " echo " << k + 1;
        prev = cur;
    }
}

TEST(Epg, CpmgIdentityAcrossT2) {
    const auto p = standard_protocol();
    for (double t2 = 40.0; t2 <= 300.0; t2 += 1.0) {
        const auto c = simulate_emc(t2, 1.0, p);
        const auto ideal = ideal_exponential(t2, 1.0, p);
        for (size_t k = 0; k < c.values.size(); ++k)
            ASSERT_LE(std::abs(c.values[k] - ideal.values[k]) / ideal.values[k], 1e-9);
    }
}

TEST(Epg, OracleEquivalenceGrid) {
    const auto p = standard_protocol();
    for (double t2 : {40.0, 80.0, 120.0, 160.0})
        for (double b1 : {0.7, 0.85, 1.0, 1.15, 1.3}) {
            const auto c = simulate_emc(t2, b1, p);
            const auto ref = oracle::isochromat_cpmg(t2, p.t1_assumed, b1, p.te1, p.delta_te, p.n_echoes);
            for (size_t k = 0; k < c.values.size(); ++k)
                ASSERT_NEAR(c.values[k], ref[k], 1e-4) << "T2 " << t2 << " B1 " << b1 << " echo " << k + 1;
        }
}

TEST(Epg, UnequalFirstEchoTimeMatchesOracle) {
    auto p = standard_protocol();
    p.te1 = 12.0;
    p.delta_te = 10.0;
    const auto c = simulate_emc(70.0, 0.9, p);
    const auto ref = oracle::isochromat_cpmg(70.0, p.t1_assumed, 0.9, p.te1, p.delta_te, p.n_echoes);
    for (size_t k = 0; k < c.values.size(); ++k) EXPECT_NEAR(c.values[k], ref[k], 1e-4);
}

TEST(Epg, TruncationStability) {
    const auto p = standard_protocol();
    for (double t2 : {20.0, 80.0, 250.0})
        for (double b1 : {0.7, 0.93, 1.3}) {
            const auto base = simulate_echo_train(t2, b1, p, {.max_order = 10});
            const auto doubled = simulate_echo_train(t2, b1, p, {.max_order = 20});
            for (size_t k = 0; k < base.size(); ++k) EXPECT_LE(std::abs(base[k] - doubled[k]), 1e-10);
        }
}

// Hard-pulse CPMG magnitudes are exactly symmetric under b1 -> 2 - b1, so B1 on either side of 1
// cannot be told apart. A slice profile breaks the symmetry.
TEST(Epg, HardPulseB1MirrorSymmetry) {
    const auto p = standard_protocol();
    const auto lo = simulate_emc(80.0, 0.8, p).values;
    const auto hi = simulate_emc(80.0, 1.2, p).values;
    for (size_t k = 0; k < lo.size(); ++k) EXPECT_NEAR(lo[k], hi[k], 1e-12);
}

TEST(Epg, SliceProfileBreaksB1Symmetry) {
    const auto p = standard_protocol();
    const std::vector<ProfileSample> profile{{0.6, 0.5}, {0.85, 1.0}, {1.0, 1.0}};
    const auto lo = simulate_emc_profile(80.0, 0.8, p, profile).values;
    const auto hi = simulate_emc_profile(80.0, 1.2, p, profile).values;
    EXPECT_GT(std::abs(lo[1] - hi[1]), 1e-3);
}

TEST(Epg, SliceProfileWeightedAverage) {
    const auto p = standard_protocol();
    const std::vector<ProfileSample> single{{1.0, 3.0}};
    const auto one = simulate_emc_profile(80.0, 0.9, p, single).values;
    const auto hard = simulate_emc(80.0, 0.9, p).values;
    for (size_t k = 0; k < one.size(); ++k) EXPECT_NEAR(one[k], hard[k], 1e-15);

    const std::vector<ProfileSample> two{{1.0, 1.0}, {0.5, 3.0}};
    const auto mixed = simulate_emc_profile(80.0, 1.0, p, two).values;
    auto half = p;
    half.nominal_refocus_deg = 90.0;
    const auto a = simulate_emc(80.0, 1.0, p).values;
    const auto b = simulate_emc(80.0, 1.0, half).values;
    for (size_t k = 0; k < mixed.size(); ++k) EXPECT_NEAR(mixed[k], 0.25 * a[k] + 0.75 * b[k], 1e-15);

    EXPECT_THROW(simulate_emc_profile(80.0, 1.0, p, std::vector<ProfileSample>{}), InvalidArgument);
    EXPECT_THROW(simulate_emc_profile(80.0, 1.0, p, std::vector<ProfileSample>{{1.0, -1.0}}), InvalidArgument);
}

TEST(Epg, RandomCurvesAreBoundedMagnitudes) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> t2d(5.0, 2000.0), b1d(0.05, 2.0), dte(2.0, 30.0);
    for (int i = 0; i < 300; ++i) {
        SequenceProtocol p;
        p.delta_te = dte(rng);
        p.te1 = p.delta_te;
        p.n_echoes = 1 + static_cast<int>(rng() % 32);
        p.tr = 10000.0;
        const auto c = simulate_emc(t2d(rng), b1d(rng), p);
        ASSERT_EQ(c.values.size(), static_cast<size_t>(p.n_echoes));
        for (double v : c.values) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0 + 1e-12);
        }
    }
}
