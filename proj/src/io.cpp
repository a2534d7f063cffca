#include "caesn/io.hpp"

#include "caesn/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace caesn::io {

std::string hex(double v) {
  if (!std::isfinite(v)) throw FormatError("cannot serialize a non-finite value");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

double from_hex(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    neg = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s.remove_prefix(2);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("malformed hex float '" + std::string(s) + "'");
  }
  return neg ? -v : v;
}

double read_real(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return from_hex(j.get_ref<const std::string&>());
  throw FormatError("expected a number or hex float string");
}

json hex_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(hex(x));
  return a;
}

std::vector<double> read_real_array(const json& j) {
  if (!j.is_array()) throw FormatError("expected an array of reals");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(read_real(e));
  return out;
}

json to_json(const dynsys::MfeParams& p) {
  return json{{"re_base", hex(p.re_base)},
              {"re_ctrl", hex(p.re_ctrl)},
              {"lx", hex(p.lx)},
              {"lz", hex(p.lz)},
              {"integrator_dt", hex(p.integrator_dt)},
              {"sample_dt", hex(p.sample_dt)},
              {"blowup_bound", hex(p.blowup_bound)}};
}

dynsys::MfeParams mfe_params_from_json(const json& j) {
  dynsys::MfeParams p;
  for (const auto& [key, value] : j.items()) {
    if (key == "re_base") p.re_base = read_real(value);
    else if (key == "re_ctrl") p.re_ctrl = read_real(value);
    else if (key == "lx") p.lx = read_real(value);
    else if (key == "lz") p.lz = read_real(value);
    else if (key == "integrator_dt") p.integrator_dt = read_real(value);
    else if (key == "sample_dt") p.sample_dt = read_real(value);
    else if (key == "blowup_bound") p.blowup_bound = read_real(value);
    else throw ConfigError("unknown mfe parameter '" + key + "'");
  }
  return p;
}

namespace {

std::string encode_row(const dynsys::Trajectory& t, std::size_t i) {
  std::string row = hex(t.times[i]);
  for (int m = 0; m < dynsys::kModes; ++m) {
    row += ' ';
    row += hex(t.states[i][m]);
  }
  row += ' ';
  row += hex(t.actions[i].re);
  row += ' ';
  row += hex(t.k[i]);
  return row;
}

const std::vector<std::string>& dataset_columns() {
  static const std::vector<std::string> cols = {"t",  "q1", "q2", "q3", "q4", "q5", "q6",
                                                "q7", "q8", "q9", "re", "k"};
  return cols;
}

}  // namespace

void save_dataset(const std::vector<dynsys::Trajectory>& series, const dynsys::MfeParams& p,
                  std::uint64_t seed, const std::string& path) {
  json j;
  j["format"] = "caesn.dataset";
  j["version"] = kDatasetVersion;
  j["seed"] = seed;
  j["params"] = to_json(p);
  j["columns"] = dataset_columns();
  json arr = json::array();
  for (const auto& t : series) {
    json rows = json::array();
    for (std::size_t i = 0; i < t.size(); ++i) rows.push_back(encode_row(t, i));
    arr.push_back(std::move(rows));
  }
  j["series"] = std::move(arr);
  write_text_file(path, j.dump(1) + "\n");
}

LoadedDataset load_dataset(const std::string& path) {
  const json j = read_json_file(path);
  if (j.value("format", "") != "caesn.dataset") throw FormatError(path + ": not a dataset file");
  if (j.value("version", 0) != kDatasetVersion) {
    throw FormatError(path + ": unsupported dataset version");
  }
  if (j.at("columns").get<std::vector<std::string>>() != dataset_columns()) {
    throw FormatError(path + ": unexpected column layout");
  }
  LoadedDataset out;
  out.seed = j.at("seed").get<std::uint64_t>();
  out.params = mfe_params_from_json(j.at("params"));
  for (const auto& rows : j.at("series")) {
    dynsys::Trajectory t;
    for (const auto& row : rows) {
      std::istringstream is(row.get<std::string>());
      std::string tok;
      std::vector<double> vals;
      while (is >> tok) vals.push_back(from_hex(tok));
      if (vals.size() != dataset_columns().size()) throw FormatError(path + ": short row");
      dynsys::StateVector q;
      for (int m = 0; m < dynsys::kModes; ++m) q[m] = vals[1 + m];
      t.times.push_back(vals[0]);
      t.states.push_back(q);
      t.actions.push_back({vals[10]});
      t.k.push_back(vals[11]);
    }
    out.series.push_back(std::move(t));
  }
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace caesn::io
