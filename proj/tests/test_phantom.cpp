#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "emct2/phantom.hpp"

using namespace emct2;

namespace {

PhantomSpec block_spec() {
    PhantomSpec s;
    s.rows = 32;
    s.cols = 32;
    s.slices = 1;
    s.blocks_y = 2;
    s.blocks_x = 2;
    s.t2_range = {60, 180};
    s.b1_constant = true;
    s.b1_range = {1.0, 1.0};
    return s;
}

} // namespace

TEST(Phantom, FourBlocksTakeEvenlySpacedT2) {
    const auto m = make_phantom(block_spec());
    std::set<float> values(m.t2.data.begin(), m.t2.data.end());
    EXPECT_EQ(values, (std::set<float>{60, 100, 140, 180}));
    EXPECT_EQ(m.t2[0], 60.0f);
    EXPECT_EQ(m.t2[31], 100.0f);
    EXPECT_EQ(m.t2[31 * 32], 140.0f);
    EXPECT_EQ(m.t2[32 * 32 - 1], 180.0f);
    for (float b : m.b1->data) EXPECT_EQ(b, 1.0f);
    for (float pd : m.pd.data) {
        EXPECT_GE(pd, 0.6f);
        EXPECT_LE(pd, 1.0f);
    }
}

TEST(Phantom, DeterministicForSeed) {
    auto s = block_spec();
    s.seed = 9;
    const auto a = make_phantom(s);
    const auto b = make_phantom(s);
    EXPECT_EQ(a.t2, b.t2);
    EXPECT_EQ(a.pd, b.pd);
    s.seed = 10;
    EXPECT_NE(make_phantom(s).pd, a.pd);
}

TEST(Phantom, SmoothGradientSpansRange) {
    PhantomSpec s;
    s.layout = PhantomLayout::SmoothGradient;
    s.rows = 64;
    s.cols = 16;
    s.slices = 1;
    s.t2_range = {40, 160};
    const auto m = make_phantom(s);
    EXPECT_EQ(*std::min_element(m.t2.data.begin(), m.t2.data.end()), 40.0f);
    EXPECT_EQ(*std::max_element(m.t2.data.begin(), m.t2.data.end()), 160.0f);
    EXPECT_FLOAT_EQ(*std::min_element(m.pd.data.begin(), m.pd.data.end()), 0.6f);
    EXPECT_FLOAT_EQ(*std::max_element(m.pd.data.begin(), m.pd.data.end()), 1.0f);
}

TEST(Phantom, RejectsOutOfCoverageParameters) {
    auto s = block_spec();
    s.t2_range = {5, 100};
    EXPECT_THROW(make_phantom(s), InvalidArgument);
    s = block_spec();
    s.t2_range = {50, 400};
    EXPECT_THROW(make_phantom(s), InvalidArgument);
    s = block_spec();
    s.b1_constant = false;
    s.b1_range = {0.5, 1.0};
    EXPECT_THROW(make_phantom(s), InvalidArgument);
    s = block_spec();
    s.rows = 0;
    EXPECT_THROW(make_phantom(s), InvalidArgument);
}

TEST(Phantom, NoiseFreeFirstEchoMatchesExponential) {
    const auto m = make_phantom(block_spec());
    const SequenceProtocol p;
    const auto stack = forward_simulate(m, p);
    ASSERT_EQ(stack.data.shape, (std::vector<size_t>{1, 10, 32, 32}));
    for (size_t q = 0; q < stack.plane(); ++q) {
        const auto ideal = ideal_exponential(m.t2[q], m.pd[q], p).values;
        // B1 = 1: the whole train is the pure exponential.
        for (size_t e = 0; e < 10; ++e) ASSERT_NEAR(stack.at(0, e, q), ideal[e], 1e-6 * ideal[0]);
    }
}

TEST(Phantom, ImperfectRefocusAnchorsFirstEcho) {
    auto s = block_spec();
    s.b1_range = {0.8, 0.8};
    const auto m = make_phantom(s);
    const SequenceProtocol p;
    const auto stack = forward_simulate(m, p);
    for (size_t q = 0; q < stack.plane(); q += 37) {
        EXPECT_NEAR(stack.at(0, 0, q), m.pd[q] * std::exp(-15.0 / m.t2[q]), 1e-6);
        auto train = simulate_emc(m.t2[q], 0.8, p).values;
        const double scale = stack.at(0, 0, q) / train[0];
        for (size_t e = 1; e < 10; ++e) EXPECT_NEAR(stack.at(0, e, q), scale * train[e], 1e-6);
    }
    const auto raw = forward_simulate(m, p, {.pd_reference = PdReference::Excitation});
    const auto train = simulate_emc(m.t2[0], 0.8, p).values;
    EXPECT_NEAR(raw.at(0, 0, 0), m.pd[0] * train[0], 1e-6);
}

TEST(Phantom, GaussianNoiseScale) {
    PhantomSpec s;
    s.rows = 256;
    s.cols = 256;
    s.slices = 2;
    s.b1_constant = true;
    s.b1_range = {1.0, 1.0};
    s.pd_range = {1.0, 1.0};
    s.t2_range = {300, 300};
    s.blocks_x = s.blocks_y = 1;
    const auto m = make_phantom(s);
    const SequenceProtocol p;
    const auto clean = forward_simulate(m, p);
    const double level = std::exp(-15.0 / 300.0);
    const auto noisy = forward_simulate(m, p, {.noise_sigma = 0.02, .seed = 5});
    double ss = 0.0, sum = 0.0;
    const size_t n = noisy.pixels();
    for (size_t px = 0; px < n; ++px) {
        const double d = noisy.at(px / noisy.plane(), 0, px % noisy.plane()) - clean.at(px / clean.plane(), 0, px % clean.plane());
        sum += d;
        ss += d * d;
    }
    ASSERT_GE(n, 100000u);
    const double sd = std::sqrt(ss / static_cast<double>(n) - (sum / n) * (sum / n));
    EXPECT_NEAR(sd / (0.02 * level), 1.0, 0.05);

    const auto again = forward_simulate(m, p, {.noise_sigma = 0.02, .seed = 5, .threads = 3});
    EXPECT_EQ(again.data, noisy.data);
    const auto other = forward_simulate(m, p, {.noise_sigma = 0.02, .seed = 6});
    EXPECT_NE(other.data, noisy.data);
}

TEST(Phantom, RicianNoiseIsNonNegativeAndBiased) {
    auto s = block_spec();
    s.pd_range = {0.05, 0.05};
    const auto m = make_phantom(s);
    const auto clean = forward_simulate(m, SequenceProtocol{});
    const auto noisy = forward_simulate(m, SequenceProtocol{}, {.noise_sigma = 0.5, .noise_model = NoiseModel::Rician});
    double bias = 0.0;
    for (size_t i = 0; i < noisy.data.size(); ++i) {
        ASSERT_GE(noisy.data[i], 0.0f);
        bias += noisy.data[i] - clean.data[i];
    }
    EXPECT_GT(bias, 0.0);
}

TEST(Phantom, SelectEchoesSubsamplesAndComposes) {
    const auto m = make_phantom(block_spec());
    const auto stack = forward_simulate(m, SequenceProtocol{});
    const auto odd = select_echoes(stack, {1, 3, 5});
    EXPECT_EQ(odd.protocol.retained_echo_times(), (std::vector<double>{15, 45, 75}));
    for (size_t q = 0; q < stack.plane(); q += 11) {
        EXPECT_EQ(odd.at(0, 0, q), stack.at(0, 0, q));
        EXPECT_EQ(odd.at(0, 1, q), stack.at(0, 2, q));
        EXPECT_EQ(odd.at(0, 2, q), stack.at(0, 4, q));
    }
    const auto two = select_echoes(odd, {1, 3});
    EXPECT_EQ(two.protocol.retained(), (std::vector<int>{1, 5}));
    EXPECT_EQ(two.data, select_echoes(stack, {1, 5}).data);

    SequenceProtocol direct;
    direct.echo_selection = {1, 3, 5};
    EXPECT_EQ(forward_simulate(m, direct).data, odd.data);
    EXPECT_EQ(protocol_hash(select_echoes(stack, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}).protocol), protocol_hash(stack.protocol));
    EXPECT_THROW(select_echoes(stack, {}), InvalidArgument);
    EXPECT_THROW(select_echoes(stack, {0, 2}), InvalidArgument);
    EXPECT_THROW(select_echoes(odd, {2, 4}), InvalidArgument);
}

TEST(Phantom, SpecFromJson) {
    const auto s = phantom_spec_from_json(nlohmann::json::parse(
        R"({"rows": 8, "cols": 6, "slices": 2, "layout": "smooth-gradient", "t2_range": [40, 160],
            "b1_field": "constant", "b1_range": 0.9, "noise_sigma": 0.02, "noise_model": "rician", "seed": 4})"));
    EXPECT_EQ(s.rows, 8u);
    EXPECT_EQ(s.layout, PhantomLayout::SmoothGradient);
    EXPECT_TRUE(s.b1_constant);
    EXPECT_EQ(s.b1_range.lo, 0.9);
    EXPECT_EQ(s.noise_model, NoiseModel::Rician);
    EXPECT_EQ(s.seed, 4u);
    EXPECT_THROW(phantom_spec_from_json(nlohmann::json::parse(R"({"rowz": 8})")), InvalidArgument);
    EXPECT_THROW(phantom_spec_from_json(nlohmann::json::parse(R"({"layout": "spiral"})")), InvalidArgument);
    EXPECT_THROW(phantom_spec_from_json(nlohmann::json::parse(R"({"t2_range": [40]})")), InvalidArgument);
}
