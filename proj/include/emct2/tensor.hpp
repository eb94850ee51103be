#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emct2/binary_io.hpp"
#include "emct2/error.hpp"
#include "emct2/protocol.hpp"

namespace emct2 {

/// Dense row-major tensor.
template <class T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s, T fill = T{})
        : shape(std::move(s)), data(element_count(shape), fill) {}

    static size_t element_count(const std::vector<size_t>& s) {
        return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
    }

    size_t size() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }
    bool operator==(const Tensor&) const = default;
};

/// Image volume of shape slices x rows x cols.
using Volume = Tensor<float>;

/// Multi-echo spin-echo magnitudes, shape slices x echoes x rows x cols.
struct MESEStack {
    Tensor<float> data;
    SequenceProtocol protocol;
    std::optional<Tensor<uint8_t>> mask; ///< slices x rows x cols; nonzero = fit

    size_t slices() const { return data.shape.at(0); }
    size_t echoes() const { return data.shape.at(1); }
    size_t rows() const { return data.shape.at(2); }
    size_t cols() const { return data.shape.at(3); }
    size_t plane() const { return rows() * cols(); }
    size_t pixels() const { return slices() * plane(); }

    float at(size_t slice, size_t echo, size_t pixel_in_plane) const {
        return data[(slice * echoes() + echo) * plane() + pixel_in_plane];
    }

    bool masked_in(size_t pixel) const { return !mask || (*mask)[pixel] != 0; }

    void validate() const {
        if (data.rank() != 4) throw InvalidArgument("MESE stack must be 4-D (slices x echoes x rows x cols)");
        if (echoes() != protocol.n_retained())
            throw InvalidArgument("MESE stack echo axis (" + std::to_string(echoes()) +
                                  ") does not match the protocol's retained echoes (" +
                                  std::to_string(protocol.n_retained()) + ")");
        if (mask && mask->shape != std::vector<size_t>{slices(), rows(), cols()})
            throw InvalidArgument("mask shape does not match the stack");
        for (float v : data.data)
            if (!std::isfinite(v)) throw InvalidArgument("MESE stack contains non-finite values");
    }
};

enum PixelFlag : uint8_t {
    kFlagNone = 0,
    kFlagDegenerate = 1, ///< all-zero or non-finite curve; T2 and PD set to 0
    kFlagFallback = 2,   ///< fast search fell back to the exhaustive scan
    kFlagMaskedOut = 4,
};

struct Provenance {
    std::string fitter;
    uint32_t dictionary_checksum = 0;
    std::vector<int> echo_selection;
    size_t fallback_pixels = 0;
    size_t degenerate_pixels = 0;

    bool operator==(const Provenance&) const = default;
};

inline void to_json(nlohmann::json& j, const Provenance& p) {
    j = nlohmann::json{{"fitter", p.fitter},
                       {"dictionary_checksum", p.dictionary_checksum},
                       {"echo_selection", p.echo_selection},
                       {"fallback_pixels", p.fallback_pixels},
                       {"degenerate_pixels", p.degenerate_pixels}};
}

inline void from_json(const nlohmann::json& j, Provenance& p) {
    p.fitter = j.value("fitter", std::string{});
    p.dictionary_checksum = j.value("dictionary_checksum", uint32_t{0});
    p.echo_selection = j.value("echo_selection", std::vector<int>{});
    p.fallback_pixels = j.value("fallback_pixels", size_t{0});
    p.degenerate_pixels = j.value("degenerate_pixels", size_t{0});
}

/// Co-registered parameter maps, each slices x rows x cols.
struct ParameterMaps {
    Volume t2;
    Volume pd;
    std::optional<Volume> b1;
    std::optional<Volume> residual;
    Tensor<uint8_t> flags;
    Provenance provenance;

    std::vector<size_t> shape() const { return t2.shape; }

    void validate() const {
        if (t2.rank() != 3) throw InvalidArgument("parameter maps must be 3-D (slices x rows x cols)");
        if (pd.shape != t2.shape) throw InvalidArgument("PD map shape differs from T2 map");
        if (b1 && b1->shape != t2.shape) throw InvalidArgument("B1 map shape differs from T2 map");
        if (residual && residual->shape != t2.shape) throw InvalidArgument("residual map shape differs from T2 map");
        if (!flags.data.empty() && flags.shape != t2.shape) throw InvalidArgument("flag map shape differs from T2 map");
    }
};

// ---------------------------------------------------------------------------------------
// Tensor file: "EMCT" | u32 version | u64 header length | JSON header | f32 LE payload.
// The header carries dtype, shape, axis labels, optional protocol and provenance, and the
// CRC32 of the payload bytes.

inline constexpr uint32_t kTensorFormatVersion = 1;

struct TensorFile {
    Tensor<float> tensor;
    std::vector<std::string> axes;
    std::optional<SequenceProtocol> protocol;
    nlohmann::json provenance = nlohmann::json::object();
};

inline std::vector<unsigned char> encode_tensor_file(const TensorFile& file) {
    if (file.tensor.size() != Tensor<float>::element_count(file.tensor.shape))
        throw InvalidArgument("tensor data length does not match its shape");
    if (!file.axes.empty() && file.axes.size() != file.tensor.rank())
        throw InvalidArgument("axis labels do not match tensor rank");
    binary::Writer payload;
    for (float v : file.tensor.data) payload.f32(v);

    nlohmann::json header{{"dtype", "f32"},
                          {"shape", file.tensor.shape},
                          {"axes", file.axes},
                          {"provenance", file.provenance},
                          {"checksum", {{"algorithm", "crc32"}, {"value", binary::crc32(payload.buffer())}}}};
    if (file.protocol) header["protocol"] = *file.protocol;

    binary::Writer out;
    out.text("EMCT");
    out.u32(kTensorFormatVersion);
    const std::string text = header.dump();
    out.u64(text.size());
    out.text(text);
    out.bytes(payload.buffer().data(), payload.buffer().size());
    return out.buffer();
}

inline TensorFile decode_tensor_file(std::span<const unsigned char> bytes) {
    binary::Reader in(bytes);
    if (in.text(4, "magic") != "EMCT") throw IoError("not a tensor file (bad magic)");
    const uint32_t version = in.u32("version");
    if (version != kTensorFormatVersion) throw IoError("unsupported tensor file version " + std::to_string(version));
    const uint64_t header_len = in.u64("header length");
    if (header_len > in.remaining()) throw IoError("truncated file while reading header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.text(header_len, "header"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt tensor header: ") + e.what());
    }

    TensorFile file;
    try {
        if (header.at("dtype").get<std::string>() != "f32") throw IoError("unsupported dtype");
        file.tensor.shape = header.at("shape").get<std::vector<size_t>>();
        file.axes = header.value("axes", std::vector<std::string>{});
        file.provenance = header.value("provenance", nlohmann::json::object());
        if (header.contains("protocol")) file.protocol = header.at("protocol").get<SequenceProtocol>();
        const auto& checksum = header.at("checksum");
        if (checksum.at("algorithm").get<std::string>() != "crc32") throw IoError("unsupported checksum algorithm");
        const uint32_t expected = checksum.at("value").get<uint32_t>();

        const size_t count = Tensor<float>::element_count(file.tensor.shape);
        if (in.remaining() != count * 4)
            throw IoError("payload length " + std::to_string(in.remaining()) + " does not match shape (expected " +
                          std::to_string(count * 4) + " bytes)");
        const auto payload = bytes.subspan(in.position());
        if (binary::crc32(payload) != expected) throw IoError("tensor payload checksum mismatch");
        file.tensor.data.resize(count);
        for (size_t i = 0; i < count; ++i) file.tensor.data[i] = in.f32("payload");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt tensor header: ") + e.what());
    }
    return file;
}

inline void save_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
    binary::write_file(path, encode_tensor_file(file));
}

inline TensorFile load_tensor_file(const std::filesystem::path& path) {
    const auto bytes = binary::read_file(path);
    try {
        return decode_tensor_file(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

// Stack and map conveniences over the generic tensor file.

inline TensorFile stack_to_file(const MESEStack& stack) {
    return {stack.data, {"slice", "echo", "row", "col"}, stack.protocol, {{"kind", "mese_stack"}}};
}

inline MESEStack stack_from_file(const TensorFile& file) {
    if (!file.protocol) throw InvalidArgument("tensor file carries no protocol; not a MESE stack");
    MESEStack stack{file.tensor, *file.protocol, std::nullopt};
    stack.validate();
    return stack;
}

inline Tensor<uint8_t> mask_from_volume(const Volume& v) {
    Tensor<uint8_t> m(v.shape);
    for (size_t i = 0; i < v.size(); ++i) m[i] = v[i] != 0.0f ? 1 : 0;
    return m;
}

inline Volume volume_from_mask(const Tensor<uint8_t>& m) {
    Volume v(m.shape);
    for (size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? 1.0f : 0.0f;
    return v;
}

inline const std::vector<std::string>& volume_axes() {
    static const std::vector<std::string> axes{"slice", "row", "col"};
    return axes;
}

/// Writes t2/pd (and b1, residual, flags when present) as separate tensor files in `dir`.
inline void save_maps(const ParameterMaps& maps, const std::filesystem::path& dir,
                      const std::optional<SequenceProtocol>& protocol = std::nullopt) {
    maps.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    const nlohmann::json prov = maps.provenance;
    auto put = [&](const Volume& v, const char* name) {
        nlohmann::json p = prov;
        p["map"] = name;
        save_tensor_file({v, volume_axes(), protocol, p}, dir / (std::string(name) + ".emct"));
    };
    put(maps.t2, "t2");
    put(maps.pd, "pd");
    if (maps.b1) put(*maps.b1, "b1");
    if (maps.residual) put(*maps.residual, "residual");
    if (!maps.flags.data.empty()) {
        Volume f(maps.flags.shape);
        for (size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(maps.flags[i]);
        put(f, "flags");
    }
}

inline ParameterMaps load_maps(const std::filesystem::path& dir) {
    ParameterMaps maps;
    const auto t2 = load_tensor_file(dir / "t2.emct");
    maps.t2 = t2.tensor;
    maps.provenance = t2.provenance.get<Provenance>();
    maps.pd = load_tensor_file(dir / "pd.emct").tensor;
    if (std::filesystem::exists(dir / "b1.emct")) maps.b1 = load_tensor_file(dir / "b1.emct").tensor;
    if (std::filesystem::exists(dir / "residual.emct")) maps.residual = load_tensor_file(dir / "residual.emct").tensor;
    if (std::filesystem::exists(dir / "flags.emct")) {
        const auto f = load_tensor_file(dir / "flags.emct").tensor;
        maps.flags = Tensor<uint8_t>(f.shape);
        for (size_t i = 0; i < f.size(); ++i) maps.flags[i] = static_cast<uint8_t>(f[i]);
    }
    maps.validate();
    return maps;
}

} // namespace emct2
