// SPDX-License-Identifier: Apache-2.0
#include "evtrack/traces.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "evtrack/error.hpp"

namespace evtrack::traces {

namespace {

constexpr int kPrecision = 17;

template <class F>
void for_each_line(std::istream& in, F&& f) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    try {
      f(ls);
    } catch (const FormatError& e) {
      throw FormatError(e.what(), n);
    } catch (const Error& e) {
      throw FormatError(e.what(), n);
    }
    std::string extra;
    if (ls >> extra) throw FormatError("trailing field '" + extra + "'", n);
  }
}

template <class T>
T field(std::istringstream& ls, const char* what) {
  T v{};
  if (!(ls >> v)) throw FormatError(std::string("missing or malformed ") + what);
  return v;
}

}  // namespace

void write_boxes(const tracker::TrackResult& r, std::ostream& out) {
  out.precision(kPrecision);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const BBox& b = r.boxes[i];
    const auto sel = r.selected(i);
    out << r.frames[i] << ' ' << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << ' ' << r.halting[i].halting_layer
        << ' ' << (sel ? frames::name(*sel) : "none") << '\n';
  }
}

std::vector<metrics::FrameRecord> read_boxes(std::istream& in) {
  std::vector<metrics::FrameRecord> out;
  for_each_line(in, [&](std::istringstream& ls) {
    metrics::FrameRecord f;
    f.k = field<std::size_t>(ls, "frame index");
    f.box.x = field<double>(ls, "x");
    f.box.y = field<double>(ls, "y");
    f.box.w = field<double>(ls, "w");
    f.box.h = field<double>(ls, "h");
    f.halting_layer = field<std::size_t>(ls, "halting layer");
    const auto sel = field<std::string>(ls, "selected density");
    if (sel != "none") f.selected = frames::density_from_name(sel);
    if (!out.empty() && f.k <= out.back().k) throw FormatError("frame indices must increase");
    out.push_back(f);
  });
  return out;
}

std::vector<metrics::FrameRecord> read_boxes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open box file " + path.string());
  return read_boxes(in);
}

void write_halting(const tracker::TrackResult& r, std::ostream& out) {
  out.precision(kPrecision);
  for (std::size_t i = 0; i < r.size(); ++i) {
    out << r.frames[i] << ' ' << r.halting[i].halting_layer;
    for (double c : r.halting[i].cumulative) out << ' ' << c;
    out << '\n';
  }
}

std::vector<HaltingLine> read_halting(std::istream& in) {
  std::vector<HaltingLine> out;
  for_each_line(in, [&](std::istringstream& ls) {
    HaltingLine h;
    h.frame = field<std::size_t>(ls, "frame index");
    h.halting_layer = field<std::size_t>(ls, "halting layer");
    double c = 0.0;
    while (ls >> c) h.cumulative.push_back(c);
    if (!ls.eof()) throw FormatError("malformed cumulative value");
    out.push_back(std::move(h));
  });
  return out;
}

void write_routing(const tracker::TrackResult& r, std::ostream& out) {
  out.precision(kPrecision);
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (const moe::RoutingRecord& rec : r.routing[i]) {
      out << r.frames[i] << ' ' << rec.layer << ' ' << rec.active;
      for (std::size_t j = 0; j < rec.active; ++j) out << ' ' << rec.logits[j];
      out << ' ' << frames::name(rec.selected) << '\n';
    }
  }
}

std::vector<RoutingLine> read_routing(std::istream& in) {
  std::vector<RoutingLine> out;
  for_each_line(in, [&](std::istringstream& ls) {
    RoutingLine r;
    r.frame = field<std::size_t>(ls, "frame index");
    r.layer = field<std::size_t>(ls, "layer");
    r.active = field<std::size_t>(ls, "K");
    if (r.active < 1 || r.active > 3) throw FormatError("K must be in [1, 3]");
    for (std::size_t j = 0; j < r.active; ++j) r.logits.push_back(field<double>(ls, "logit"));
    r.selected = frames::density_from_name(field<std::string>(ls, "selected density"));
    out.push_back(std::move(r));
  });
  return out;
}

void write_timing(const tracker::TrackResult& r, std::ostream& out) {
  out.precision(kPrecision);
  for (std::size_t i = 0; i < r.size(); ++i) out << r.frames[i] << ' ' << r.timing_us[i] << '\n';
}

std::vector<double> read_timing(std::istream& in) {
  std::vector<double> out;
  for_each_line(in, [&](std::istringstream& ls) {
    field<std::size_t>(ls, "frame index");
    const double t = field<double>(ls, "microseconds");
    if (!(t >= 0.0)) throw FormatError("negative timing");
    out.push_back(t);
  });
  return out;
}

}  // namespace evtrack::traces
