#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "emct2/binary_io.hpp"
#include "emct2/error.hpp"

namespace emct2 {

/// "lo:hi:step" triplet as used by --t2, --b1 and --ranges.
struct RangeTriplet {
    double lo = 0.0;
    double hi = 0.0;
    double step = 0.0;
};

inline RangeTriplet parse_range_triplet(const std::string& text) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || end != item.c_str() + item.size()) throw InvalidArgument("malformed range '" + text + "' (expected lo:hi:step)");
        parts.push_back(v);
    }
    if (parts.size() != 3) throw InvalidArgument("malformed range '" + text + "' (expected lo:hi:step)");
    if (!(parts[2] > 0.0) || parts[1] < parts[0]) throw InvalidArgument("range '" + text + "' needs lo <= hi and step > 0");
    return {parts[0], parts[1], parts[2]};
}

/// Comma-separated 1-based echo indices, e.g. "1,3,5".
inline std::vector<int> parse_index_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        char* end = nullptr;
        const long v = std::strtol(item.c_str(), &end, 10);
        if (item.empty() || end != item.c_str() + item.size()) throw InvalidArgument("malformed echo list '" + text + "'");
        out.push_back(static_cast<int>(v));
    }
    if (out.empty()) throw InvalidArgument("empty echo list");
    return out;
}

/// Run configuration file: a flat JSON object whose keys are the long option names of one
/// command (dashes or underscores). Values are strings, numbers, booleans, or arrays (joined
/// with commas). Unknown keys and nested objects are rejected. The result is a token list that
/// is parsed ahead of the command line, so explicit flags take precedence.
inline std::vector<std::string> run_config_to_args(const nlohmann::json& config, const std::vector<std::string>& allowed) {
    if (!config.is_object()) throw InvalidArgument("run config must be a JSON object");
    std::vector<std::string> args;
    for (auto it = config.begin(); it != config.end(); ++it) {
        std::string key = it.key();
        std::replace(key.begin(), key.end(), '_', '-');
        if (key == "config" || std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw InvalidArgument("run config: unknown key '" + it.key() + "'");
        const auto& v = it.value();
        std::string value;
        if (v.is_string()) {
            value = v.get<std::string>();
        } else if (v.is_boolean()) {
            if (v.get<bool>()) args.push_back("--" + key);
            continue;
        } else if (v.is_number()) {
            value = v.dump();
        } else if (v.is_array()) {
            for (size_t i = 0; i < v.size(); ++i) {
                if (!v[i].is_number() && !v[i].is_string()) throw InvalidArgument("run config: '" + it.key() + "' must hold scalars");
                value += (i ? "," : "") + (v[i].is_string() ? v[i].get<std::string>() : v[i].dump());
            }
        } else {
            throw InvalidArgument("run config: '" + it.key() + "' has an unsupported value type");
        }
        args.push_back("--" + key);
        args.push_back(value);
    }
    return args;
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
    const auto bytes = binary::read_file(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(path.string() + ": malformed JSON: " + e.what());
    }
}

} // namespace emct2
