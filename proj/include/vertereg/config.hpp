#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "vertereg/eval.hpp"
#include "vertereg/register.hpp"
#include "vertereg/track.hpp"

namespace vertereg {

struct StreamTarget {
  std::string host;
  std::uint16_t port = 0;

  bool operator==(const StreamTarget&) const = default;
};

/// "host:port", "[v6addr]:port". Throws Errc::config_error.
StreamTarget parse_stream_target(std::string_view text);
std::string to_string(const StreamTarget& target);

/// Settings shared by the CLI subcommands.
struct RunConfig {
  RegistrationConfig registration;
  KalmanConfig kalman;
  std::optional<StreamTarget> stream;
  std::optional<std::filesystem::path> recording;
  std::optional<std::filesystem::path> models;
  std::optional<std::filesystem::path> output;
  AblationMode mode = AblationMode::full;
  int update_frames = 60;
  int first_tre_frame = 61;
  bool lateral_only = false;
};

/// Parses `key = value` lines. Blank lines and lines starting with '#' are
/// ignored. Relative paths resolve against `base_dir`; `recording` and
/// `models` must exist. Unknown or repeated keys and bad values raise
/// Errc::config_error with the byte offset of the offending text.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
/// Reads a file and resolves paths against its directory.
RunConfig load_config(const std::filesystem::path& path);

}  // namespace vertereg
