#pragma once

// Lossless float text encoding and the JSON containers shared by the dataset,
// model and config files.

#include "caesn/dynsys.hpp"

#include "json.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace caesn::io {

using nlohmann::json;

// Exact hexadecimal significand form as produced by std::to_chars(hex),
// e.g. "1.8p+0" for 1.5 and "-1p-2" for -0.25. Readable by Python's float.fromhex.
[[nodiscard]] std::string hex(double v);
// Accepts the form above with or without a "0x" prefix. Throws FormatError.
[[nodiscard]] double from_hex(std::string_view s);

// Reads a number stored either as a JSON number or as a hex string.
[[nodiscard]] double read_real(const json& j);

[[nodiscard]] json hex_array(const std::vector<double>& v);
[[nodiscard]] std::vector<double> read_real_array(const json& j);

[[nodiscard]] json to_json(const dynsys::MfeParams& p);
[[nodiscard]] dynsys::MfeParams mfe_params_from_json(const json& j);

// Dataset container: {"format": "caesn.dataset", "version": 1, "seed", "params",
// "columns": ["t","q1",...,"q9","re","k"], "series": [[row, ...], ...]} where each row
// is one space-separated string of hex floats in column order.
inline constexpr int kDatasetVersion = 1;

void save_dataset(const std::vector<dynsys::Trajectory>& series, const dynsys::MfeParams& p,
                  std::uint64_t seed, const std::string& path);

struct LoadedDataset {
  std::vector<dynsys::Trajectory> series;
  dynsys::MfeParams params;
  std::uint64_t seed = 0;
};

[[nodiscard]] LoadedDataset load_dataset(const std::string& path);

[[nodiscard]] json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace caesn::io
