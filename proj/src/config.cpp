// SPDX-License-Identifier: Apache-2.0
#include "evtrack/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "evtrack/error.hpp"

namespace evtrack::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& value) {
  throw FormatError("invalid value '" + value + "' for key '" + key + "'");
}

template <class T>
T parse_int(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad(key, v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad(key, v);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void apply(RunConfig& c, const std::string& key, const std::string& v) {
  auto& t = c.tracker;
  auto& m = t.model;
  if (key == "dt_us") {
    t.dt_us = parse_int<std::int64_t>(key, v);
  } else if (key == "patch") {
    m.patch = parse_int<std::size_t>(key, v);
  } else if (key == "embed_dim") {
    m.embed_dim = parse_int<std::size_t>(key, v);
  } else if (key == "heads") {
    m.heads = parse_int<std::size_t>(key, v);
  } else if (key == "mlp_ratio") {
    m.mlp_ratio = parse_int<std::size_t>(key, v);
  } else if (key == "layers_per_stage") {
    const auto parts = split_list(v);
    if (parts.size() != 3) bad(key, v);
    for (std::size_t i = 0; i < 3; ++i) m.layers_per_stage[i] = parse_int<std::size_t>(key, parts[i]);
  } else if (key == "injection_order") {
    const auto parts = split_list(v);
    if (parts.size() != 3) bad(key, v);
    try {
      for (std::size_t i = 0; i < 3; ++i) m.injection_order[i] = frames::density_from_name(parts[i]);
    } catch (const Error&) {
      bad(key, v);
    }
  } else if (key == "tau") {
    t.tau = parse_double(key, v);
  } else if (key == "alpha") {
    c.loss.alpha = parse_double(key, v);
  } else if (key == "e_start") {
    c.loss.e_start = parse_double(key, v);
  } else if (key == "e_total") {
    c.loss.e_total = parse_double(key, v);
  } else if (key == "dps_start_layer") {
    m.dps_start_layer = parse_int<std::size_t>(key, v);
  } else if (key == "template_factor") {
    t.template_factor = parse_double(key, v);
  } else if (key == "search_factor") {
    t.search_factor = parse_double(key, v);
  } else if (key == "head_channels") {
    m.head_channels = parse_int<std::size_t>(key, v);
  } else if (key == "seed") {
    t.seed = parse_int<std::uint64_t>(key, v);
  } else if (key == "dps") {
    t.dps_enabled = parse_bool(key, v);
  } else if (key == "moe") {
    t.moe_enabled = parse_bool(key, v);
  } else if (key == "routing_noise") {
    t.routing_noise = parse_bool(key, v);
  } else {
    throw FormatError("unknown key '" + key + "'");
  }
}

RunConfig parse(std::istream& in) {
  RunConfig c;
  std::set<std::string> seen;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("expected key = value", n);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw FormatError("duplicate key '" + key + "'", n);
    try {
      apply(c, key, value);
    } catch (const FormatError& e) {
      throw FormatError(e.what(), n);
    }
  }
  c.tracker.validate();
  c.loss.validate();
  return c;
}

RunConfig parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse(in);
}

std::string to_text(const RunConfig& c) {
  const auto& t = c.tracker;
  const auto& m = t.model;
  std::ostringstream os;
  os << "dt_us = " << t.dt_us << "\n"
     << "patch = " << m.patch << "\n"
     << "embed_dim = " << m.embed_dim << "\n"
     << "heads = " << m.heads << "\n"
     << "mlp_ratio = " << m.mlp_ratio << "\n"
     << "layers_per_stage = " << m.layers_per_stage[0] << "," << m.layers_per_stage[1] << ","
     << m.layers_per_stage[2] << "\n"
     << "injection_order = " << frames::name(m.injection_order[0]) << "," << frames::name(m.injection_order[1])
     << "," << frames::name(m.injection_order[2]) << "\n"
     << "tau = " << fmt(t.tau) << "\n"
     << "alpha = " << fmt(c.loss.alpha) << "\n"
     << "e_start = " << fmt(c.loss.e_start) << "\n"
     << "e_total = " << fmt(c.loss.e_total) << "\n"
     << "dps_start_layer = " << m.dps_start_layer << "\n"
     << "template_factor = " << fmt(t.template_factor) << "\n"
     << "search_factor = " << fmt(t.search_factor) << "\n"
     << "head_channels = " << m.head_channels << "\n"
     << "seed = " << t.seed << "\n"
     << "dps = " << (t.dps_enabled ? "true" : "false") << "\n"
     << "moe = " << (t.moe_enabled ? "true" : "false") << "\n"
     << "routing_noise = " << (t.routing_noise ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace evtrack::config
