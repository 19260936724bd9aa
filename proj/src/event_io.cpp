// SPDX-License-Identifier: Apache-2.0
#include "evtrack/event_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string_view>

#include "evtrack/error.hpp"
#include "evtrack/nn/rng.hpp"

namespace evtrack {

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  // Areas from the same corner differences as the overlap: iou(a, a) == 1.
  const double area_a = (a.x + a.w - a.x) * (a.y + a.h - a.y);
  const double area_b = (b.x + b.w - b.x) * (b.y + b.h - b.y);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace evtrack

namespace evtrack::events {

namespace {

constexpr std::array<char, 4> kMagic{'E', 'V', 'B', '1'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 8 + 8;
constexpr std::size_t kRecordBytes = 16;

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
T parse_int(std::string_view field, std::size_t line, const char* what) {
  T value{};
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw FormatError("invalid " + std::string(what) + " '" + std::string(field) + "'", line);
  }
  return value;
}

double parse_real(std::string_view field, std::size_t line, const char* what) {
  // from_chars for double is not available on every libstdc++ we target.
  std::string s(field);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw FormatError("invalid " + std::string(what) + " '" + s + "'", line);
  }
  return v;
}

void check_event(const Event& e, std::uint16_t w, std::uint16_t h, std::uint64_t duration,
                 std::size_t line) {
  if (e.p != 1 && e.p != -1) throw FormatError("polarity must be -1 or +1", line);
  if (e.x >= w || e.y >= h) {
    throw FormatError("coordinate (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                          ") outside " + std::to_string(w) + "x" + std::to_string(h) + " sensor",
                      line);
  }
  if (e.t > duration) {
    throw FormatError("timestamp " + std::to_string(e.t) + " beyond duration " +
                          std::to_string(duration),
                      line);
  }
}

template <typename T>
void put_le(std::string& buf, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>(u & 0xFF));
    u = static_cast<U>(u >> 8);
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) u = static_cast<U>((u << 8) | p[i]);
  return static_cast<T>(u);
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = {}) {
  std::ifstream in(path, mode);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = {}) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

void validate(const EventStream& s) {
  if (s.sensor_w == 0 || s.sensor_h == 0) throw FormatError("sensor dimensions must be positive");
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    check_event(s.events[i], s.sensor_w, s.sensor_h, s.duration_us, 0);
    if (i > 0 && s.events[i].t < s.events[i - 1].t) {
      throw FormatError("events not sorted by timestamp at index " + std::to_string(i));
    }
  }
}

EventStream parse_text(std::istream& in) {
  EventStream s;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (fields[0].starts_with('#')) {
      // Header is "# evt1 W H T"; the '#' may also be glued to the tag.
      std::vector<std::string_view> rest(fields.begin() + 1, fields.end());
      if (fields[0].size() > 1) rest.insert(rest.begin(), fields[0].substr(1));
      if (!rest.empty() && rest[0] == "evt1") {
        if (have_header) throw FormatError("duplicate header", lineno);
        if (rest.size() != 4) throw FormatError("header must be '# evt1 <W> <H> <T_us>'", lineno);
        s.sensor_w = parse_int<std::uint16_t>(rest[1], lineno, "sensor width");
        s.sensor_h = parse_int<std::uint16_t>(rest[2], lineno, "sensor height");
        s.duration_us = parse_int<std::uint64_t>(rest[3], lineno, "duration");
        if (s.sensor_w == 0 || s.sensor_h == 0) {
          throw FormatError("sensor dimensions must be positive", lineno);
        }
        have_header = true;
      }
      continue;
    }
    if (!have_header) throw FormatError("event before '# evt1' header", lineno);
    if (fields.size() != 4) {
      throw FormatError("expected 4 fields 't x y p', got " + std::to_string(fields.size()), lineno);
    }
    Event e;
    e.t = parse_int<std::uint64_t>(fields[0], lineno, "timestamp");
    e.x = parse_int<std::uint16_t>(fields[1], lineno, "x");
    e.y = parse_int<std::uint16_t>(fields[2], lineno, "y");
    const int p = parse_int<int>(fields[3], lineno, "polarity");
    if (p != 1 && p != -1) throw FormatError("polarity must be -1 or +1", lineno);
    e.p = static_cast<std::int8_t>(p);
    check_event(e, s.sensor_w, s.sensor_h, s.duration_us, lineno);
    s.events.push_back(e);
  }
  if (!have_header) throw FormatError("missing '# evt1 <W> <H> <T_us>' header");
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return s;
}

EventStream parse_text(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_text(in);
}

void write_text(const EventStream& s, std::ostream& out) {
  out << "# evt1 " << s.sensor_w << ' ' << s.sensor_h << ' ' << s.duration_us << '\n';
  for (const Event& e : s.events) {
    out << e.t << ' ' << e.x << ' ' << e.y << ' ' << static_cast<int>(e.p) << '\n';
  }
}

void write_text(const EventStream& s, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_text(s, out);
}

EventStream parse_binary(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4) throw FormatError("truncated header");
  if (std::memcmp(data, kMagic.data(), 3) != 0) throw FormatError("bad magic");
  if (data[3] != static_cast<unsigned char>(kMagic[3])) {
    throw VersionError("unsupported event file version '" + std::string(1, bytes[3]) +
                       "', expected '1'");
  }
  if (bytes.size() < kHeaderBytes) throw FormatError("truncated header");

  EventStream s;
  s.sensor_w = get_le<std::uint16_t>(data + 4);
  s.sensor_h = get_le<std::uint16_t>(data + 6);
  s.duration_us = get_le<std::uint64_t>(data + 8);
  const auto count = get_le<std::uint64_t>(data + 16);
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (count > payload / kRecordBytes) {
    throw FormatError("truncated record: header declares " + std::to_string(count) +
                      " events, file holds " + std::to_string(payload / kRecordBytes));
  }
  if (payload != count * kRecordBytes) throw FormatError("trailing bytes after last record");

  s.events.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const unsigned char* r = data + kHeaderBytes + i * kRecordBytes;
    Event& e = s.events[i];
    e.t = get_le<std::uint64_t>(r);
    e.x = get_le<std::uint16_t>(r + 8);
    e.y = get_le<std::uint16_t>(r + 10);
    e.p = static_cast<std::int8_t>(r[12]);
    if (r[13] != 0 || r[14] != 0 || r[15] != 0) {
      throw FormatError("non-zero padding in record " + std::to_string(i));
    }
  }
  validate(s);
  return s;
}

EventStream parse_binary(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  return parse_binary(in);
}

void write_binary(const EventStream& s, std::ostream& out) {
  std::string buf;
  buf.reserve(kHeaderBytes + s.events.size() * kRecordBytes);
  buf.append(kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(buf, s.sensor_w);
  put_le<std::uint16_t>(buf, s.sensor_h);
  put_le<std::uint64_t>(buf, s.duration_us);
  put_le<std::uint64_t>(buf, s.events.size());
  for (const Event& e : s.events) {
    put_le<std::uint64_t>(buf, e.t);
    put_le<std::uint16_t>(buf, e.x);
    put_le<std::uint16_t>(buf, e.y);
    put_le<std::int8_t>(buf, e.p);
    buf.append(3, '\0');
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_binary(const EventStream& s, const std::filesystem::path& path) {
  auto out = open_out(path, std::ios::binary);
  write_binary(s, out);
}

EventStream load(const std::filesystem::path& path) {
  std::array<char, 3> head{};
  {
    auto in = open_in(path, std::ios::binary);
    in.read(head.data(), head.size());
    if (in.gcount() == 3 && std::memcmp(head.data(), kMagic.data(), 3) == 0) {
      in.seekg(0);
      return parse_binary(in);
    }
  }
  return parse_text(path);
}

GroundTruth parse_ground_truth(std::istream& in) {
  GroundTruth gt;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_ws(line);
    if (fields.empty() || fields[0].starts_with('#')) continue;
    if (fields.size() != 5) throw FormatError("expected 5 fields 'k x y w h'", lineno);
    const auto k = parse_int<std::size_t>(fields[0], lineno, "segment index");
    if (k != gt.boxes.size()) {
      throw FormatError("segment index " + std::to_string(k) + " out of order, expected " +
                            std::to_string(gt.boxes.size()),
                        lineno);
    }
    BBox b{parse_real(fields[1], lineno, "x"), parse_real(fields[2], lineno, "y"),
           parse_real(fields[3], lineno, "w"), parse_real(fields[4], lineno, "h")};
    if (!b.valid()) throw FormatError("box size must be positive", lineno);
    gt.boxes.push_back(b);
  }
  return gt;
}

GroundTruth parse_ground_truth(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_ground_truth(in);
}

void write_ground_truth(const GroundTruth& gt, std::ostream& out) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t k = 0; k < gt.boxes.size(); ++k) {
    const BBox& b = gt.boxes[k];
    os << k << ' ' << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << '\n';
  }
  out << os.str();
}

void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_ground_truth(gt, out);
}

// ---------------------------------------------------------------------------
// Synthetic scenes

std::pair<double, double> target_center(const SceneSpec& spec, double t) {
  const auto& wp = spec.trajectory;
  if (wp.empty()) throw InvalidArgument("scene trajectory has no waypoints");
  if (t <= static_cast<double>(wp.front().t_us)) return {wp.front().cx, wp.front().cy};
  for (std::size_t i = 1; i < wp.size(); ++i) {
    const auto t1 = static_cast<double>(wp[i].t_us);
    if (t <= t1) {
      const auto t0 = static_cast<double>(wp[i - 1].t_us);
      const double a = t1 > t0 ? (t - t0) / (t1 - t0) : 1.0;
      return {wp[i - 1].cx + a * (wp[i].cx - wp[i - 1].cx),
              wp[i - 1].cy + a * (wp[i].cy - wp[i - 1].cy)};
    }
  }
  return {wp.back().cx, wp.back().cy};
}

BBox target_box(const SceneSpec& spec, double t) {
  const auto [cx, cy] = target_center(spec, t);
  return {cx - 0.5 * spec.target_w, cy - 0.5 * spec.target_h, static_cast<double>(spec.target_w),
          static_cast<double>(spec.target_h)};
}

namespace {

void validate_scene(const SceneSpec& spec) {
  if (spec.sensor_w == 0 || spec.sensor_h == 0) throw InvalidArgument("sensor dims must be > 0");
  if (spec.segment_us == 0) throw InvalidArgument("segment length must be > 0");
  if (spec.duration_us < spec.segment_us) {
    throw InvalidArgument("duration shorter than one segment");
  }
  if (spec.target_w < 2 || spec.target_h < 2) throw InvalidArgument("target must be >= 2x2 px");
  if (!(spec.edge_rate >= 0.0) || !(spec.noise_rate >= 0.0) || !std::isfinite(spec.edge_rate) ||
      !std::isfinite(spec.noise_rate)) {
    throw InvalidArgument("event rates must be finite and non-negative");
  }
  if (spec.trajectory.empty()) throw InvalidArgument("scene trajectory has no waypoints");
  for (std::size_t i = 0; i < spec.trajectory.size(); ++i) {
    const Waypoint& w = spec.trajectory[i];
    if (i > 0 && w.t_us < spec.trajectory[i - 1].t_us) {
      throw InvalidArgument("waypoints must be ordered by time");
    }
    // Waypoint boxes inside the sensor imply every interpolated box is too.
    const double x0 = std::round(w.cx - 0.5 * spec.target_w);
    const double y0 = std::round(w.cy - 0.5 * spec.target_h);
    if (x0 < 0.0 || y0 < 0.0 || x0 + spec.target_w > spec.sensor_w ||
        y0 + spec.target_h > spec.sensor_h) {
      throw InvalidArgument("trajectory leaves sensor bounds at waypoint " + std::to_string(i));
    }
  }
}

// Perimeter pixel `i` of a w x h rectangle and its outward normal.
struct EdgePixel {
  int dx, dy;  // offset from the top-left corner
  int nx, ny;
};

EdgePixel perimeter_pixel(std::uint64_t i, int w, int h) {
  const auto top = static_cast<std::uint64_t>(w);
  if (i < top) {
    const int dx = static_cast<int>(i);
    return {dx, 0, (dx == 0 ? -1 : 0) + (dx == w - 1 ? 1 : 0), -1};
  }
  i -= top;
  if (i < top) {
    const int dx = static_cast<int>(i);
    return {dx, h - 1, (dx == 0 ? -1 : 0) + (dx == w - 1 ? 1 : 0), 1};
  }
  i -= top;
  const auto side = static_cast<std::uint64_t>(h - 2);
  if (i < side) return {0, static_cast<int>(i) + 1, -1, 0};
  i -= side;
  return {w - 1, static_cast<int>(i) + 1, 1, 0};
}

}  // namespace

std::pair<EventStream, GroundTruth> generate_synthetic(const SceneSpec& spec, std::uint64_t seed) {
  validate_scene(spec);
  EventStream stream;
  stream.sensor_w = spec.sensor_w;
  stream.sensor_h = spec.sensor_h;
  stream.duration_us = spec.duration_us;

  const auto T = static_cast<double>(spec.duration_us);

  // Background: superposed per-pixel Poisson processes = one process with
  // rate noise_rate * W * H and uniformly chosen pixels.
  std::vector<Event> noise;
  {
    nn::Rng rng(seed ^ 0x6E6F697365ULL);
    const double rate = spec.noise_rate * spec.sensor_w * spec.sensor_h;
    const std::uint64_t pixels = std::uint64_t{spec.sensor_w} * spec.sensor_h;
    if (rate > 0.0) {
      for (double t = rng.exponential(rate); t < T; t += rng.exponential(rate)) {
        const std::uint64_t pix = rng.uniform_int(pixels);
        const int p = rng.uniform() < 0.5 ? -1 : 1;
        noise.push_back({static_cast<std::uint64_t>(t), static_cast<std::uint16_t>(pix % spec.sensor_w),
                         static_cast<std::uint16_t>(pix / spec.sensor_w), static_cast<std::int8_t>(p)});
      }
    }
  }

  // Edge events: the perimeter pixel count is constant, so the total edge
  // rate is constant and arrivals form a homogeneous process.
  std::vector<Event> edges;
  {
    nn::Rng rng(seed ^ 0x65646765ULL);
    const int w = spec.target_w;
    const int h = spec.target_h;
    const std::uint64_t perimeter = 2ULL * static_cast<std::uint64_t>(w + h) - 4ULL;
    const double rate = spec.edge_rate * static_cast<double>(perimeter);
    if (rate > 0.0) {
      for (double t = rng.exponential(rate); t < T; t += rng.exponential(rate)) {
        const auto [cx, cy] = target_center(spec, t);
        const double step = 1.0;  // velocity by forward difference over 1 us
        const auto [cx2, cy2] = target_center(spec, std::min(t + step, T));
        const auto [cx0, cy0] = target_center(spec, std::max(t - step, 0.0));
        const double vx = cx2 - cx0;
        const double vy = cy2 - cy0;
        const auto px = perimeter_pixel(rng.uniform_int(perimeter), w, h);
        const auto x0 = static_cast<int>(std::round(cx - 0.5 * w));
        const auto y0 = static_cast<int>(std::round(cy - 0.5 * h));
        const double lead = px.nx * vx + px.ny * vy;
        int p;
        if (lead > 0.0) {
          p = 1;
        } else if (lead < 0.0) {
          p = -1;
        } else {
          p = rng.uniform() < 0.5 ? -1 : 1;
        }
        edges.push_back({static_cast<std::uint64_t>(t), static_cast<std::uint16_t>(x0 + px.dx),
                         static_cast<std::uint16_t>(y0 + px.dy), static_cast<std::int8_t>(p)});
      }
    }
  }

  stream.events.resize(noise.size() + edges.size());
  std::merge(edges.begin(), edges.end(), noise.begin(), noise.end(), stream.events.begin(),
             [](const Event& a, const Event& b) { return a.t < b.t; });

  GroundTruth gt;
  const std::uint64_t segments = spec.duration_us / spec.segment_us;
  gt.boxes.reserve(segments);
  for (std::uint64_t k = 0; k < segments; ++k) {
    const double tk = static_cast<double>(k * spec.segment_us + spec.segment_us / 2);
    gt.boxes.push_back(target_box(spec, tk));
  }
  return {std::move(stream), std::move(gt)};
}

std::vector<Waypoint> bouncing_trajectory(const SceneSpec& spec, double speed_px_s) {
  const double lo_x = 0.5 * spec.target_w + 1.0;
  const double hi_x = spec.sensor_w - 0.5 * spec.target_w - 1.0;
  const double lo_y = 0.5 * spec.target_h + 1.0;
  const double hi_y = spec.sensor_h - 0.5 * spec.target_h - 1.0;
  if (hi_x <= lo_x || hi_y <= lo_y) throw InvalidArgument("target does not fit the sensor");

  // Reflect an unbounded coordinate into [lo, hi].
  auto reflect = [](double v, double lo, double hi) {
    const double span = hi - lo;
    double u = std::fmod(v - lo, 2.0 * span);
    if (u < 0.0) u += 2.0 * span;
    return lo + (u <= span ? u : 2.0 * span - u);
  };

  const double vx = speed_px_s * 1e-6;  // px per us, horizontal
  const double vy = 0.5 * vx;
  const double x0 = 0.5 * (lo_x + hi_x);
  const double y0 = 0.5 * (lo_y + hi_y);
  std::vector<Waypoint> wp;
  for (std::uint64_t t = 0;; t += spec.segment_us / 4 ? spec.segment_us / 4 : 1) {
    const auto tt = std::min(t, spec.duration_us);
    const double d = static_cast<double>(tt);
    wp.push_back({tt, reflect(x0 + vx * d, lo_x, hi_x), reflect(y0 + vy * d, lo_y, hi_y)});
    if (tt == spec.duration_us) break;
  }
  return wp;
}

}  // namespace evtrack::events
