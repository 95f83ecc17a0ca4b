#include "vertereg/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "vertereg/error.hpp"

namespace vertereg {

using json = nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& what, std::uint64_t offset) {
  throw Error(Errc::parse_error, what, offset);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::uint16_t get_u16(std::string_view b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    (static_cast<unsigned char>(b[at + 1]) << 8));
}

/// Validates magic and dimensions; returns (width, height).
std::pair<int, int> read_raster_header(std::string_view bytes, std::string_view magic, std::size_t header_size) {
  if (bytes.size() < header_size) parse_fail("file is shorter than its header", bytes.size());
  if (bytes.substr(0, 4) != magic) parse_fail("bad magic, expected " + std::string(magic), 0);
  const std::uint32_t w = get_u32(bytes, 4);
  const std::uint32_t h = get_u32(bytes, 8);
  if (w == 0 || w > (1u << 16)) parse_fail("invalid width", 4);
  if (h == 0 || h > (1u << 16)) parse_fail("invalid height", 8);
  return {static_cast<int>(w), static_cast<int>(h)};
}

void expect_size(std::string_view bytes, std::size_t expected) {
  if (bytes.size() < expected) parse_fail("file is truncated", bytes.size());
  if (bytes.size() > expected) parse_fail("unexpected trailing bytes", expected);
}

struct Line {
  std::string_view text;
  std::size_t offset = 0;
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back({line, pos});
    pos = end + 1;
  }
  return lines;
}

struct Field {
  std::string_view text;
  std::size_t offset = 0;
};

std::vector<Field> split_fields(const Line& line, char sep) {
  std::vector<Field> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t end = line.text.find(sep, pos);
    const std::size_t stop = end == std::string_view::npos ? line.text.size() : end;
    out.push_back({line.text.substr(pos, stop - pos), line.offset + pos});
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

std::vector<Field> split_words(const Line& line) {
  std::vector<Field> out;
  std::size_t pos = 0;
  const std::string_view t = line.text;
  while (pos < t.size()) {
    while (pos < t.size() && (t[pos] == ' ' || t[pos] == '\t')) ++pos;
    if (pos >= t.size()) break;
    std::size_t end = pos;
    while (end < t.size() && t[end] != ' ' && t[end] != '\t') ++end;
    out.push_back({t.substr(pos, end - pos), line.offset + pos});
    pos = end;
  }
  return out;
}

double parse_double(const Field& f) {
  double v = 0.0;
  const char* first = f.text.data();
  const char* last = first + f.text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || f.text.empty()) {
    parse_fail("expected a number, got '" + std::string(f.text) + "'", f.offset);
  }
  return v;
}

long long parse_int(const Field& f) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(f.text.data(), f.text.data() + f.text.size(), v);
  if (ec != std::errc() || ptr != f.text.data() + f.text.size() || f.text.empty()) {
    parse_fail("expected an integer, got '" + std::string(f.text) + "'", f.offset);
  }
  return v;
}

bool parse_flag(const Field& f) {
  if (f.text == "0") return false;
  if (f.text == "1") return true;
  parse_fail("expected 0 or 1, got '" + std::string(f.text) + "'", f.offset);
}

/// Data rows of a CSV file with a fixed header; blank lines are skipped.
std::vector<std::vector<Field>> parse_csv(std::string_view text, std::string_view header) {
  const std::vector<Line> lines = split_lines(text);
  if (lines.empty() || lines[0].text != header) parse_fail("expected header '" + std::string(header) + "'", 0);
  const std::size_t columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  std::vector<std::vector<Field>> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].text.empty()) continue;
    std::vector<Field> fields = split_fields(lines[i], ',');
    if (fields.size() != columns) {
      parse_fail("expected " + std::to_string(columns) + " fields, got " + std::to_string(fields.size()),
                 lines[i].offset);
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(Errc::parse_error, "expected a 3-vector");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json transform_json(const RigidTransform& t) {
  return {{"q", json::array({t.rotation.w, t.rotation.x, t.rotation.y, t.rotation.z})},
          {"t", vec_json(t.translation)}};
}

RigidTransform json_transform(const json& j) {
  const json& q = j.at("q");
  if (!q.is_array() || q.size() != 4) throw Error(Errc::parse_error, "expected a quaternion");
  return {{q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()},
          json_vec(j.at("t"))};
}

json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics json_intrinsics(const json& j) {
  CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                     j.at("cy").get<double>(), j.at("width").get<int>(),   j.at("height").get<int>()};
  k.validate();
  return k;
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(Errc::parse_error, e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
}

template <typename F>
auto with_json_errors(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
}

constexpr const char* kLandmarkNames[3] = {"spinous_process", "left_transverse", "right_transverse"};

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::io_error, "cannot read " + path.string());
  return data;
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io_error, "cannot write " + path.string() + ": " + ec.message());
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string encode_depth(const DepthMap& depth, float mm_per_unit) {
  if (!(mm_per_unit > 0.0f) || !std::isfinite(mm_per_unit)) {
    throw Error(Errc::invalid_argument, "depth unit must be positive");
  }
  std::string out = "DPTH";
  out.reserve(16 + 2 * depth.size());
  put_u32(out, static_cast<std::uint32_t>(depth.width));
  put_u32(out, static_cast<std::uint32_t>(depth.height));
  put_u32(out, std::bit_cast<std::uint32_t>(mm_per_unit));
  for (float d : depth.data) {
    double units = 0.0;
    if (d > 0.0f) units = std::round(static_cast<double>(d) / static_cast<double>(mm_per_unit));
    if (!(units <= 65535.0)) throw Error(Errc::invalid_argument, "depth exceeds the 16-bit range");
    put_u16(out, static_cast<std::uint16_t>(units));
  }
  return out;
}

DepthMap decode_depth(std::string_view bytes) {
  const auto [w, h] = read_raster_header(bytes, "DPTH", 16);
  const float unit = std::bit_cast<float>(get_u32(bytes, 12));
  if (!(unit > 0.0f) || !std::isfinite(unit)) parse_fail("depth unit must be positive", 12);
  expect_size(bytes, 16 + 2 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  DepthMap depth(w, h);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const std::uint16_t raw = get_u16(bytes, 16 + 2 * i);
    depth.data[i] = raw == 0 ? 0.0f : static_cast<float>(raw) * unit;
  }
  return depth;
}

std::string encode_mask(const BinaryMask& mask) {
  std::string out = "MSK1";
  put_u32(out, static_cast<std::uint32_t>(mask.width));
  put_u32(out, static_cast<std::uint32_t>(mask.height));
  const int row_bytes = (mask.width + 7) / 8;
  for (int v = 0; v < mask.height; ++v) {
    for (int b = 0; b < row_bytes; ++b) {
      unsigned char byte = 0;
      for (int bit = 0; bit < 8; ++bit) {
        const int u = 8 * b + bit;
        if (u < mask.width && mask.at(u, v)) byte |= static_cast<unsigned char>(0x80u >> bit);
      }
      out.push_back(static_cast<char>(byte));
    }
  }
  return out;
}

BinaryMask decode_mask(std::string_view bytes) {
  const auto [w, h] = read_raster_header(bytes, "MSK1", 12);
  const std::size_t row_bytes = (static_cast<std::size_t>(w) + 7) / 8;
  expect_size(bytes, 12 + row_bytes * static_cast<std::size_t>(h));
  BinaryMask mask(w, h);
  for (int v = 0; v < h; ++v) {
    for (std::size_t b = 0; b < row_bytes; ++b) {
      const std::size_t at = 12 + static_cast<std::size_t>(v) * row_bytes + b;
      const auto byte = static_cast<unsigned char>(bytes[at]);
      for (int bit = 0; bit < 8; ++bit) {
        const int u = static_cast<int>(8 * b) + bit;
        const bool on = (byte & (0x80u >> bit)) != 0;
        if (u < w) {
          mask.at(u, v) = on ? 1 : 0;
        } else if (on) {
          parse_fail("row padding bits must be zero", at);
        }
      }
    }
  }
  return mask;
}

std::string encode_ply(const PlyCloud& cloud) {
  const bool normals = !cloud.normals.empty();
  if (normals && cloud.normals.size() != cloud.points.size()) {
    throw Error(Errc::dimension_mismatch, "normals and points differ in length");
  }
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.points.size()) + "\n";
  for (const char* n : {"x", "y", "z"}) out += std::string("property double ") + n + "\n";
  if (normals) {
    for (const char* n : {"nx", "ny", "nz"}) out += std::string("property double ") + n + "\n";
  }
  out += "end_header\n";
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out += format_double(p.x()) + ' ' + format_double(p.y()) + ' ' + format_double(p.z());
    if (normals) {
      const Vec3& n = cloud.normals[i];
      out += ' ' + format_double(n.x()) + ' ' + format_double(n.y()) + ' ' + format_double(n.z());
    }
    out += '\n';
  }
  return out;
}

PlyCloud decode_ply(std::string_view text) {
  const std::vector<Line> lines = split_lines(text);
  std::size_t li = 0;
  auto next = [&]() -> const Line& {
    if (li >= lines.size()) parse_fail("unexpected end of file", text.size());
    return lines[li++];
  };
  if (next().text != "ply") parse_fail("missing 'ply' signature", 0);
  std::optional<std::size_t> count;
  std::vector<std::string> props;
  for (;;) {
    const Line& line = next();
    const std::vector<Field> w = split_words(line);
    if (w.empty()) continue;
    if (w[0].text == "comment" || w[0].text == "obj_info") continue;
    if (w[0].text == "end_header") break;
    if (w[0].text == "format") {
      if (w.size() != 3 || w[1].text != "ascii" || w[2].text != "1.0") {
        parse_fail("only 'format ascii 1.0' is supported", line.offset);
      }
    } else if (w[0].text == "element") {
      if (w.size() != 3 || w[1].text != "vertex" || count) parse_fail("only one vertex element is supported", line.offset);
      const long long n = parse_int(w[2]);
      if (n < 0) parse_fail("negative vertex count", w[2].offset);
      count = static_cast<std::size_t>(n);
    } else if (w[0].text == "property") {
      if (w.size() != 3) parse_fail("malformed property", line.offset);
      const std::string_view type = w[1].text;
      if (type != "double" && type != "float" && type != "float64" && type != "float32") {
        parse_fail("unsupported property type '" + std::string(type) + "'", w[1].offset);
      }
      props.emplace_back(w[2].text);
    } else {
      parse_fail("unknown header line", line.offset);
    }
  }
  if (!count) parse_fail("missing vertex element", text.size());
  const std::vector<std::string> xyz{"x", "y", "z"};
  const std::vector<std::string> xyzn{"x", "y", "z", "nx", "ny", "nz"};
  if (props != xyz && props != xyzn) parse_fail("properties must be x y z [nx ny nz]", 0);
  const bool normals = props.size() == 6;

  PlyCloud cloud;
  cloud.points.reserve(*count);
  for (std::size_t i = 0; i < *count; ++i) {
    const Line& line = next();
    const std::vector<Field> w = split_words(line);
    if (w.size() != props.size()) {
      parse_fail("expected " + std::to_string(props.size()) + " values per vertex", line.offset);
    }
    cloud.points.emplace_back(parse_double(w[0]), parse_double(w[1]), parse_double(w[2]));
    if (normals) cloud.normals.emplace_back(parse_double(w[3]), parse_double(w[4]), parse_double(w[5]));
  }
  for (; li < lines.size(); ++li) {
    if (!split_words(lines[li]).empty()) parse_fail("data after the last vertex", lines[li].offset);
  }
  return cloud;
}

void write_model(const fs::path& stem, const VertebraModel& model) {
  model.validate();
  PlyCloud ply;
  ply.points = model.surface_points;
  ply.normals = model.surface_normals;
  const std::size_t surface = ply.points.size();

  struct Key {
    double x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      const auto h = [](double v) { return std::hash<std::uint64_t>{}(std::bit_cast<std::uint64_t>(v)); };
      return h(k.x) ^ (h(k.y) * 0x9e3779b97f4a7c15ull) ^ (h(k.z) * 0xc2b2ae3d27d4eb4full);
    }
  };
  std::unordered_map<Key, std::size_t, KeyHash> lookup;
  for (std::size_t i = 0; i < surface; ++i) {
    const Vec3& p = model.surface_points[i];
    lookup.emplace(Key{p.x(), p.y(), p.z()}, i);
  }
  std::vector<std::size_t> reg, pedicle;
  for (const Vec3& p : model.reg_points) {
    const auto it = lookup.find(Key{p.x(), p.y(), p.z()});
    if (it != lookup.end()) {
      reg.push_back(it->second);
    } else {
      reg.push_back(ply.points.size());
      ply.points.push_back(p);
      ply.normals.push_back(Vec3::Zero());
    }
  }
  for (const Vec3& p : model.pedicle_points) {
    pedicle.push_back(ply.points.size());
    ply.points.push_back(p);
    ply.normals.push_back(Vec3::Zero());
  }

  json side;
  side["id"] = model.id;
  side["level"] = level_name(model.id);
  side["surface_count"] = surface;
  side["reg_point_indices"] = reg;
  side["pedicle_point_indices"] = pedicle;
  for (int i = 0; i < 3; ++i) side["landmarks"][kLandmarkNames[i]] = vec_json(model.landmarks[i]);
  side["screws"] = json::array();
  for (const ScrewPlan& s : model.screws) {
    side["screws"].push_back({{"side", to_string(s.side)},
                              {"entry", vec_json(s.entry)},
                              {"direction", vec_json(s.direction)},
                              {"radius", s.radius},
                              {"length", s.length}});
  }
  fs::path ply_path = stem;
  ply_path += ".ply";
  fs::path json_path = stem;
  json_path += ".json";
  write_file(ply_path, encode_ply(ply));
  write_file(json_path, side.dump(2) + "\n");
}

VertebraModel read_model(const fs::path& stem) {
  fs::path ply_path = stem;
  ply_path += ".ply";
  fs::path json_path = stem;
  json_path += ".json";
  const PlyCloud ply = parse_file(ply_path, decode_ply);
  const json side = parse_file(json_path, parse_json);
  VertebraModel m = with_json_errors([&] {
    VertebraModel out;
    out.id = side.at("id").get<int>();
    const auto surface = side.at("surface_count").get<std::size_t>();
    if (surface > ply.points.size()) throw Error(Errc::parse_error, "surface_count exceeds the vertex count");
    out.surface_points.assign(ply.points.begin(), ply.points.begin() + static_cast<std::ptrdiff_t>(surface));
    if (!ply.normals.empty()) {
      out.surface_normals.assign(ply.normals.begin(), ply.normals.begin() + static_cast<std::ptrdiff_t>(surface));
    } else if (surface > 0) {
      throw Error(Errc::parse_error, "model surface needs normals");
    }
    auto gather = [&](const char* key, PointList& dst) {
      for (const json& j : side.at(key)) {
        const auto i = j.get<std::size_t>();
        if (i >= ply.points.size()) throw Error(Errc::parse_error, std::string(key) + " index out of range");
        dst.push_back(ply.points[i]);
      }
    };
    gather("reg_point_indices", out.reg_points);
    gather("pedicle_point_indices", out.pedicle_points);
    for (int i = 0; i < 3; ++i) out.landmarks[i] = json_vec(side.at("landmarks").at(kLandmarkNames[i]));
    const json& screws = side.at("screws");
    if (!screws.is_array() || screws.size() != 2) throw Error(Errc::parse_error, "expected two screw plans");
    for (const json& s : screws) {
      ScrewPlan plan;
      plan.side = parse_side(s.at("side").get<std::string>());
      plan.entry = json_vec(s.at("entry"));
      plan.direction = json_vec(s.at("direction"));
      plan.radius = s.at("radius").get<double>();
      plan.length = s.at("length").get<double>();
      out.screws[static_cast<int>(plan.side)] = plan;
    }
    return out;
  });
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(Errc::parse_error, json_path.string() + ": " + e.what());
  }
  return m;
}

std::vector<VertebraModel> read_models(const fs::path& dir) {
  std::vector<VertebraModel> out;
  for (int id = 1; id <= kVertebraCount; ++id) {
    VertebraModel m = read_model(dir / level_name(id));
    if (m.id != id) throw Error(Errc::parse_error, level_name(id) + " declares id " + std::to_string(m.id));
    out.push_back(std::move(m));
  }
  return out;
}

void write_models(const fs::path& dir, std::span<const VertebraModel> models) {
  for (const VertebraModel& m : models) write_model(dir / level_name(m.id), m);
}

std::string encode_poses(std::span<const PoseRow> rows) {
  std::string out = std::string(kPoseHeader) + "\n";
  for (const PoseRow& r : rows) {
    const Quaternion& q = r.pose.rotation;
    const Vec3& t = r.pose.translation;
    out += std::to_string(r.frame) + ',' + std::to_string(r.vertebra) + ',' + (r.valid ? '1' : '0') + ',' +
           (r.updated ? '1' : '0');
    for (double v : {q.w, q.x, q.y, q.z, t.x(), t.y(), t.z()}) out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

std::vector<PoseRow> decode_poses(std::string_view text) {
  std::vector<PoseRow> rows;
  for (const std::vector<Field>& f : parse_csv(text, kPoseHeader)) {
    PoseRow r;
    const long long frame = parse_int(f[0]);
    const long long vertebra = parse_int(f[1]);
    if (frame < 1 || frame > INT32_MAX) parse_fail("frame must be positive", f[0].offset);
    if (vertebra < 1 || vertebra > kDrillSlot) parse_fail("vertebra must be 1..6", f[1].offset);
    r.frame = static_cast<int>(frame);
    r.vertebra = static_cast<int>(vertebra);
    r.valid = parse_flag(f[2]);
    r.updated = parse_flag(f[3]);
    r.pose.rotation = {parse_double(f[4]), parse_double(f[5]), parse_double(f[6]), parse_double(f[7])};
    r.pose.translation = {parse_double(f[8]), parse_double(f[9]), parse_double(f[10])};
    rows.push_back(r);
  }
  return rows;
}

std::vector<PoseRow> pose_rows(const FrameResult& result) {
  std::vector<PoseRow> rows;
  for (const VertebraResult& v : result.vertebrae) rows.push_back({result.frame, v.id, v.valid, v.updated, v.pose});
  return rows;
}

std::string frame_file_name(int index, const char* extension) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.%s", index, extension);
  return buf;
}

std::string encode_markers(const std::map<int, std::vector<MarkerObservation>>& markers) {
  std::string out = "frame,marker,corner,ul,vl,ur,vr\n";
  for (const auto& [frame, list] : markers) {
    for (const MarkerObservation& m : list) {
      for (int c = 0; c < 4; ++c) {
        out += std::to_string(frame) + ',' + std::to_string(m.id) + ',' + std::to_string(c);
        for (double v : {m.left[c].x(), m.left[c].y(), m.right[c].x(), m.right[c].y()}) out += ',' + format_double(v);
        out += '\n';
      }
    }
  }
  return out;
}

std::map<int, std::vector<MarkerObservation>> decode_markers(std::string_view text) {
  std::map<int, std::vector<MarkerObservation>> out;
  std::map<std::pair<int, int>, int> seen;  // (frame, marker) -> corners read
  for (const std::vector<Field>& f : parse_csv(text, "frame,marker,corner,ul,vl,ur,vr")) {
    const auto frame = static_cast<int>(parse_int(f[0]));
    const auto id = static_cast<int>(parse_int(f[1]));
    const long long corner = parse_int(f[2]);
    int& count = seen[{frame, id}];
    if (corner != count) parse_fail("corners must be listed 0..3 in order", f[2].offset);
    std::vector<MarkerObservation>& list = out[frame];
    if (count == 0) {
      list.push_back({});
      list.back().id = id;
    }
    MarkerObservation& m = list.back();
    if (m.id != id) parse_fail("marker rows must be contiguous", f[1].offset);
    m.left[corner] = {parse_double(f[3]), parse_double(f[4])};
    m.right[corner] = {parse_double(f[5]), parse_double(f[6])};
    ++count;
  }
  for (const auto& [key, count] : seen) {
    if (count != 4) {
      throw Error(Errc::parse_error, "marker " + std::to_string(key.second) + " of frame " +
                                         std::to_string(key.first) + " has " + std::to_string(count) + " corners");
    }
  }
  return out;
}

void write_recording(const fs::path& dir, const SimulatedRecording& recording) {
  const Scene& scene = recording.scene();
  const RecordingSpec& spec = recording.spec();
  json meta;
  meta["format"] = "vertereg-recording";
  meta["version"] = 1;
  meta["frame_count"] = spec.frame_count;
  meta["fps"] = spec.fps;
  meta["seed"] = recording.seed();
  meta["intrinsics"] = intrinsics_json(scene.intrinsics);
  meta["stereo"] = {{"left", intrinsics_json(scene.rig.left)},
                    {"right", intrinsics_json(scene.rig.right)},
                    {"right_in_left", transform_json(scene.rig.right_in_left)}};
  for (const auto& [id, corners] : scene.sleeve.corners) {
    json c = json::array();
    for (const Vec3& p : corners) c.push_back(vec_json(p));
    meta["sleeve_markers"][std::to_string(id)] = c;
  }
  meta["target"] = {{"vertebra", spec.target_vertebra}, {"side", to_string(spec.target_side)}};
  meta["simulation"] = {{"depth_noise_mm", spec.depth_noise_mm},
                        {"dropout", spec.dropout},
                        {"tilt_deg", spec.tilt_deg},
                        {"prior_error_deg", spec.prior_error_deg},
                        {"placement_jitter_deg", spec.placement_jitter_deg},
                        {"placement_jitter_mm", spec.placement_jitter_mm},
                        {"deformation_deg", spec.deformation_deg},
                        {"deformation_mm", spec.deformation_mm},
                        {"occluders", spec.occluders.size()},
                        {"motions", spec.motions.size()}};

  write_models(dir / "models", scene.vertebrae);
  std::string prior = "frame,qw,qx,qy,qz\n";
  std::vector<PoseRow> gt;
  std::map<int, std::vector<MarkerObservation>> markers;
  for (int k = 1; k <= spec.frame_count; ++k) {
    const Frame f = recording.frame(k);
    write_file(dir / "depth" / frame_file_name(k, "dpth"), encode_depth(f.depth));
    write_file(dir / "mask" / frame_file_name(k, "msk"), encode_mask(f.oracle->mask));
    const Quaternion& q = f.oracle->prior;
    prior += std::to_string(k);
    for (double v : {q.w, q.x, q.y, q.z}) prior += ',' + format_double(v);
    prior += '\n';
    for (int i = 0; i < static_cast<int>(f.oracle->gt_poses.size()); ++i) {
      gt.push_back({k, i + 1, true, false, f.oracle->gt_poses[i]});
    }
    if (f.oracle->drill_pose) gt.push_back({k, kDrillSlot, true, false, *f.oracle->drill_pose});
    if (!f.markers.empty()) markers[k] = f.markers;
  }
  write_file(dir / "prior.csv", prior);
  write_file(dir / "gt_poses.csv", encode_poses(gt));
  if (spec.markers) write_file(dir / "markers.csv", encode_markers(markers));
  write_file(dir / "recording.json", meta.dump(2) + "\n");
}

DiskRecording::DiskRecording(fs::path dir) : dir_(std::move(dir)) {
  const json meta = parse_file(dir_ / "recording.json", parse_json);
  info_ = with_json_errors([&] {
    RecordingInfo info;
    if (meta.at("format").get<std::string>() != "vertereg-recording") {
      throw Error(Errc::parse_error, "not a recording directory");
    }
    info.frame_count = meta.at("frame_count").get<int>();
    info.fps = meta.at("fps").get<double>();
    if (info.frame_count < 1 || !(info.fps > 0.0)) throw Error(Errc::parse_error, "invalid frame count or fps");
    info.seed = meta.value("seed", std::uint64_t{0});
    info.intrinsics = json_intrinsics(meta.at("intrinsics"));
    if (meta.contains("stereo")) {
      const json& s = meta.at("stereo");
      info.rig = StereoRig{json_intrinsics(s.at("left")), json_intrinsics(s.at("right")),
                           json_transform(s.at("right_in_left"))};
    }
    if (meta.contains("sleeve_markers")) {
      for (const auto& [key, corners] : meta.at("sleeve_markers").items()) {
        std::array<Vec3, 4> c;
        if (!corners.is_array() || corners.size() != 4) throw Error(Errc::parse_error, "a marker has four corners");
        for (int i = 0; i < 4; ++i) c[i] = json_vec(corners.at(i));
        info.sleeve.corners[std::stoi(key)] = c;
      }
    }
    if (meta.contains("target")) {
      info.target_vertebra = meta.at("target").at("vertebra").get<int>();
      info.target_side = parse_side(meta.at("target").at("side").get<std::string>());
    }
    return info;
  });

  priors_.assign(static_cast<std::size_t>(info_.frame_count), Quaternion{});
  if (fs::exists(dir_ / "prior.csv")) {
    std::vector<bool> have(priors_.size(), false);
    parse_file(dir_ / "prior.csv", [&](std::string_view text) {
      for (const std::vector<Field>& f : parse_csv(text, "frame,qw,qx,qy,qz")) {
        const long long k = parse_int(f[0]);
        if (k < 1 || k > info_.frame_count) parse_fail("frame out of range", f[0].offset);
        priors_[k - 1] = {parse_double(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4])};
        have[k - 1] = true;
      }
      return 0;
    });
    if (std::find(have.begin(), have.end(), false) != have.end()) {
      throw Error(Errc::parse_error, "prior.csv must cover every frame");
    }
  }
  if (fs::exists(dir_ / "markers.csv")) markers_ = parse_file(dir_ / "markers.csv", decode_markers);
  if (fs::exists(dir_ / "gt_poses.csv")) {
    gt_.assign(static_cast<std::size_t>(info_.frame_count), std::vector<RigidTransform>(kVertebraCount));
    gt_drill_.assign(static_cast<std::size_t>(info_.frame_count), std::nullopt);
    for (const PoseRow& r : parse_file(dir_ / "gt_poses.csv", decode_poses)) {
      if (r.frame > info_.frame_count) throw Error(Errc::parse_error, "ground truth frame out of range");
      if (r.vertebra == kDrillSlot) {
        gt_drill_[r.frame - 1] = r.pose;
      } else {
        gt_[r.frame - 1][r.vertebra - 1] = r.pose;
      }
    }
  }
}

std::vector<MarkerObservation> DiskRecording::markers(int index) const {
  const auto it = markers_.find(index);
  return it == markers_.end() ? std::vector<MarkerObservation>{} : it->second;
}

Frame DiskRecording::frame(int index) const {
  if (index < 1 || index > info_.frame_count) {
    throw Error(Errc::invalid_argument, "frame " + std::to_string(index) + " is outside the recording");
  }
  Frame f;
  f.index = index;
  f.timestamp = (index - 1) / info_.fps;
  f.depth = parse_file(dir_ / "depth" / frame_file_name(index, "dpth"), decode_depth);
  if (!f.depth.same_shape(Raster<float>(info_.intrinsics.width, info_.intrinsics.height))) {
    throw Error(Errc::dimension_mismatch, "depth frame does not match the intrinsics");
  }
  const fs::path mask_path = dir_ / "mask" / frame_file_name(index, "msk");
  if (fs::exists(mask_path)) {
    FrameOracle oracle;
    oracle.mask = parse_file(mask_path, decode_mask);
    oracle.prior = priors_[index - 1];
    if (!gt_.empty()) oracle.gt_poses = gt_[index - 1];
    if (!gt_drill_.empty()) oracle.drill_pose = gt_drill_[index - 1];
    f.oracle = std::move(oracle);
  }
  f.markers = markers(index);
  return f;
}

}  // namespace vertereg
