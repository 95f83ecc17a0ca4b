#include "vertereg/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>

#include "vertereg/error.hpp"
#include "vertereg/io.hpp"

namespace vertereg {

namespace {

[[noreturn]] void config_fail(const std::string& what, std::size_t offset) {
  throw Error(Errc::config_error, what, offset);
}

std::string_view trim(std::string_view s, std::size_t& offset) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
    ++offset;
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double to_double(std::string_view v, std::size_t at) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) config_fail("expected a number", at);
  return out;
}

int to_int(std::string_view v, std::size_t at) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) config_fail("expected an integer", at);
  return out;
}

bool to_bool(std::string_view v, std::size_t at) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  config_fail("expected true or false", at);
}

}  // namespace

StreamTarget parse_stream_target(std::string_view text) {
  std::string_view host;
  std::string_view port;
  if (!text.empty() && text.front() == '[') {
    const std::size_t close = text.find(']');
    if (close == std::string_view::npos || close + 1 >= text.size() || text[close + 1] != ':') {
      throw Error(Errc::config_error, "stream target must be [host]:port");
    }
    host = text.substr(1, close - 1);
    port = text.substr(close + 2);
  } else {
    const std::size_t colon = text.rfind(':');
    if (colon == std::string_view::npos) throw Error(Errc::config_error, "stream target must be host:port");
    host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  unsigned value = 0;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (host.empty() || port.empty() || ec != std::errc() || ptr != port.data() + port.size() || value == 0 ||
      value > 65535) {
    throw Error(Errc::config_error, "invalid stream target '" + std::string(text) + "'");
  }
  return {std::string(host), static_cast<std::uint16_t>(value)};
}

std::string to_string(const StreamTarget& target) {
  const bool v6 = target.host.find(':') != std::string::npos;
  return (v6 ? "[" + target.host + "]" : target.host) + ":" + std::to_string(target.port);
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  auto path_value = [&](std::string_view v, std::size_t at, bool must_exist) {
    std::filesystem::path p{std::string(v)};
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    if (must_exist && !std::filesystem::exists(p)) config_fail("path does not exist: " + p.string(), at);
    return p;
  };
  using Setter = std::function<void(std::string_view, std::size_t)>;
  RegistrationConfig& r = cfg.registration;
  KalmanConfig& k = cfg.kalman;
  const std::map<std::string_view, Setter> setters{
      {"general_max_corr", [&](auto v, auto at) { r.general_max_corr = to_double(v, at); }},
      {"general_max_iters", [&](auto v, auto at) { r.general_max_iters = to_int(v, at); }},
      {"epsilon", [&](auto v, auto at) { r.epsilon = to_double(v, at); }},
      {"piecewise_inlier", [&](auto v, auto at) { r.piecewise_inlier = to_double(v, at); }},
      {"piecewise_max_iters", [&](auto v, auto at) { r.piecewise_max_iters = to_int(v, at); }},
      {"piecewise_force_full_iters", [&](auto v, auto at) { r.piecewise_force_full_iters = to_bool(v, at); }},
      {"update_gate", [&](auto v, auto at) { r.update_gate = to_double(v, at); }},
      {"kalman_sigma_accel_mm", [&](auto v, auto at) { k.sigma_accel_mm = to_double(v, at); }},
      {"kalman_sigma_meas_mm", [&](auto v, auto at) { k.sigma_meas_mm = to_double(v, at); }},
      {"kalman_sigma_accel_rot", [&](auto v, auto at) { k.sigma_accel_rot = to_double(v, at); }},
      {"kalman_sigma_meas_rot", [&](auto v, auto at) { k.sigma_meas_rot = to_double(v, at); }},
      {"stream",
       [&](auto v, auto at) {
         try {
           cfg.stream = parse_stream_target(v);
         } catch (const Error& e) {
           config_fail(e.what(), at);
         }
       }},
      {"recording", [&](auto v, auto at) { cfg.recording = path_value(v, at, true); }},
      {"models", [&](auto v, auto at) { cfg.models = path_value(v, at, true); }},
      {"output", [&](auto v, auto at) { cfg.output = path_value(v, at, false); }},
      {"mode",
       [&](auto v, auto at) {
         try {
           cfg.mode = parse_ablation_mode(std::string(v));
         } catch (const Error& e) {
           config_fail(e.what(), at);
         }
       }},
      {"update_frames", [&](auto v, auto at) { cfg.update_frames = to_int(v, at); }},
      {"first_tre_frame", [&](auto v, auto at) { cfg.first_tre_frame = to_int(v, at); }},
      {"lateral_only", [&](auto v, auto at) { cfg.lateral_only = to_bool(v, at); }},
  };

  std::set<std::string_view> seen;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::size_t line_at = pos;
    const std::string_view line = trim(text.substr(pos, end - pos), line_at);
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;

    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) config_fail("expected 'key = value'", line_at);
    std::size_t key_at = line_at;
    const std::string_view key = trim(line.substr(0, eq), key_at);
    std::size_t value_at = line_at + eq + 1;
    const std::string_view value = trim(line.substr(eq + 1), value_at);
    const auto it = setters.find(key);
    if (it == setters.end()) config_fail("unknown key '" + std::string(key) + "'", key_at);
    if (!seen.insert(it->first).second) config_fail("repeated key '" + std::string(key) + "'", key_at);
    if (value.empty()) config_fail("missing value for '" + std::string(key) + "'", value_at);
    it->second(value, value_at);
  }

  try {
    cfg.registration.validate();
  } catch (const Error& e) {
    throw Error(Errc::config_error, e.what());
  }
  if (!(k.sigma_accel_mm > 0.0) || !(k.sigma_meas_mm > 0.0) || !(k.sigma_accel_rot > 0.0) ||
      !(k.sigma_meas_rot > 0.0)) {
    throw Error(Errc::config_error, "kalman noise parameters must be positive");
  }
  if (cfg.update_frames < 0) throw Error(Errc::config_error, "update_frames must be non-negative");
  if (cfg.first_tre_frame < 1) throw Error(Errc::config_error, "first_tre_frame must be at least 1");
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.parent_path());
}

}  // namespace vertereg
