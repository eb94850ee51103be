#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "emct2/config.hpp"
#include "emct2/tensor.hpp"

using namespace emct2;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("emct2_io_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

TensorFile sample_file() {
    TensorFile f;
    f.tensor = Tensor<float>({2, 3, 4});
    for (size_t i = 0; i < f.tensor.size(); ++i) f.tensor[i] = static_cast<float>(i) * 0.25f - 1.0f;
    f.tensor[5] = std::numeric_limits<float>::denorm_min();
    f.tensor[6] = -0.0f;
    f.axes = {"slice", "row", "col"};
    f.provenance = {{"kind", "test"}};
    SequenceProtocol p;
    p.echo_selection = {1, 3, 5};
    f.protocol = p;
    return f;
}

} // namespace

TEST(TensorFile, RoundTripIsBitExact) {
    const auto f = sample_file();
    const auto bytes = encode_tensor_file(f);
    const auto g = decode_tensor_file(bytes);
    EXPECT_EQ(g.tensor.shape, f.tensor.shape);
    ASSERT_EQ(g.tensor.size(), f.tensor.size());
    EXPECT_EQ(std::memcmp(g.tensor.data.data(), f.tensor.data.data(), f.tensor.size() * sizeof(float)), 0);
    EXPECT_EQ(g.axes, f.axes);
    EXPECT_EQ(g.provenance, f.provenance);
    ASSERT_TRUE(g.protocol.has_value());
    EXPECT_EQ(*g.protocol, *f.protocol);
    EXPECT_EQ(encode_tensor_file(g), bytes);
}

TEST(TensorFile, SaveLoadThroughDisk) {
    const auto dir = temp_dir("disk");
    const auto f = sample_file();
    save_tensor_file(f, dir / "a.emct");
    EXPECT_FALSE(std::filesystem::exists(dir / "a.emct.tmp"));
    const auto g = load_tensor_file(dir / "a.emct");
    EXPECT_EQ(g.tensor, f.tensor);
    std::filesystem::remove_all(dir);
}

TEST(TensorFile, CorruptionIsRejected) {
    const auto bytes = encode_tensor_file(sample_file());
    auto payload_flip = bytes;
    payload_flip[payload_flip.size() - 3] ^= 0x40;
    EXPECT_THROW(decode_tensor_file(payload_flip), IoError);
    auto truncated = bytes;
    truncated.pop_back();
    EXPECT_THROW(decode_tensor_file(truncated), IoError);
    auto bad_magic = bytes;
    bad_magic[1] = 'Q';
    EXPECT_THROW(decode_tensor_file(bad_magic), IoError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_THROW(decode_tensor_file(bad_version), IoError);
    auto bad_header = bytes;
    bad_header[16] = '#';
    EXPECT_THROW(decode_tensor_file(bad_header), IoError);
    EXPECT_THROW(decode_tensor_file(std::vector<unsigned char>{'E', 'M'}), IoError);
    EXPECT_THROW(load_tensor_file("/nonexistent/dir/x.emct"), IoError);
}

TEST(TensorFile, ShapeMismatchOnEncode) {
    auto f = sample_file();
    f.tensor.data.pop_back();
    EXPECT_THROW(encode_tensor_file(f), InvalidArgument);
    f = sample_file();
    f.axes = {"a"};
    EXPECT_THROW(encode_tensor_file(f), InvalidArgument);
}

TEST(TensorFile, StackRoundTrip) {
    MESEStack s;
    s.protocol = SequenceProtocol{};
    s.data = Tensor<float>({1, 10, 2, 2});
    for (size_t i = 0; i < s.data.size(); ++i) s.data[i] = static_cast<float>(i);
    const auto back = stack_from_file(decode_tensor_file(encode_tensor_file(stack_to_file(s))));
    EXPECT_EQ(back.data, s.data);
    EXPECT_EQ(back.protocol, s.protocol);

    TensorFile no_protocol{s.data, {}, std::nullopt};
    EXPECT_THROW(stack_from_file(no_protocol), InvalidArgument);
    SequenceProtocol five;
    five.n_echoes = 5;
    TensorFile wrong{s.data, {}, five};
    EXPECT_THROW(stack_from_file(wrong), InvalidArgument);
}

TEST(TensorFile, MapsRoundTrip) {
    const auto dir = temp_dir("maps");
    ParameterMaps m;
    m.t2 = Volume({1, 2, 2});
    m.pd = Volume({1, 2, 2});
    m.b1 = Volume({1, 2, 2});
    m.flags = Tensor<uint8_t>({1, 2, 2});
    m.t2.data = {80, 0, 120, 33};
    m.pd.data = {0.5f, 0, 1, 0.75f};
    m.b1->data = {0.9f, 0, 1, 0.7f};
    m.flags.data = {0, kFlagDegenerate, kFlagFallback, 0};
    m.provenance = {"fast", 1234, {1, 3, 5}, 1, 1};
    save_maps(m, dir);
    const auto back = load_maps(dir);
    EXPECT_EQ(back.t2, m.t2);
    EXPECT_EQ(back.pd, m.pd);
    EXPECT_EQ(*back.b1, *m.b1);
    EXPECT_FALSE(back.residual.has_value());
    EXPECT_EQ(back.flags, m.flags);
    EXPECT_EQ(back.provenance, m.provenance);
    std::filesystem::remove_all(dir);
}

TEST(TensorFile, MaskConversion) {
    Volume v({1, 1, 3});
    v.data = {0.0f, 2.0f, -1.0f};
    const auto m = mask_from_volume(v);
    EXPECT_EQ(m.data, (std::vector<uint8_t>{0, 1, 1}));
    EXPECT_EQ(volume_from_mask(m).data, (std::vector<float>{0, 1, 1}));
}

TEST(Protocol, JsonRoundTripAndValidation) {
    SequenceProtocol p;
    p.te1 = 12;
    p.echo_selection = {1, 2, 6};
    const nlohmann::json j = p;
    EXPECT_EQ(j.get<SequenceProtocol>(), p);
    EXPECT_EQ(protocol_hash(j.get<SequenceProtocol>()), protocol_hash(p));

    SequenceProtocol full;
    full.echo_selection = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const nlohmann::json jf = full;
    EXPECT_TRUE(jf.get<SequenceProtocol>().echo_selection.empty());
    EXPECT_EQ(protocol_hash(jf.get<SequenceProtocol>()), protocol_hash(SequenceProtocol{}));

    EXPECT_NE(protocol_hash(p), protocol_hash(SequenceProtocol{}));
    auto bad = j;
    bad["mystery"] = 1;
    EXPECT_THROW(bad.get<SequenceProtocol>(), InvalidArgument);
}

TEST(Config, RangeTriplet) {
    const auto r = parse_range_triplet("40:160:40");
    EXPECT_EQ(r.lo, 40);
    EXPECT_EQ(r.hi, 160);
    EXPECT_EQ(r.step, 40);
    EXPECT_THROW(parse_range_triplet("40:160"), InvalidArgument);
    EXPECT_THROW(parse_range_triplet("40:x:1"), InvalidArgument);
    EXPECT_THROW(parse_range_triplet("40:160:0"), InvalidArgument);
    EXPECT_THROW(parse_range_triplet("160:40:1"), InvalidArgument);
}

TEST(Config, IndexList) {
    EXPECT_EQ(parse_index_list("1,3,5"), (std::vector<int>{1, 3, 5}));
    EXPECT_THROW(parse_index_list("1,,5"), InvalidArgument);
    EXPECT_THROW(parse_index_list("a"), InvalidArgument);
    EXPECT_THROW(parse_index_list(""), InvalidArgument);
}

TEST(Config, RunConfigToArgs) {
    const auto j = nlohmann::json::parse(R"({"t2": "40:160:40", "echo_select": [1, 3, 5], "threads": 2, "verbose": true})");
    const auto args = run_config_to_args(j, {"t2", "echo-select", "threads", "verbose"});
    const std::vector<std::string> expected{"--echo-select", "1,3,5", "--t2", "40:160:40", "--threads", "2", "--verbose"};
    EXPECT_EQ(args, expected);
    EXPECT_THROW(run_config_to_args(nlohmann::json::parse(R"({"bogus": 1})"), {"t2"}), InvalidArgument);
    EXPECT_THROW(run_config_to_args(nlohmann::json::parse(R"({"t2": {"lo": 1}})"), {"t2"}), InvalidArgument);
    EXPECT_THROW(run_config_to_args(nlohmann::json::parse("[1]"), {"t2"}), InvalidArgument);
}

TEST(Config, LoadJsonFileErrors) {
    const auto dir = temp_dir("cfg");
    {
        std::ofstream(dir / "bad.json") << "{ not json";
    }
    EXPECT_THROW(load_json_file(dir / "bad.json"), InvalidArgument);
    EXPECT_THROW(load_json_file(dir / "missing.json"), IoError);
    std::filesystem::remove_all(dir);
}
