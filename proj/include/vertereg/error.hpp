#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace vertereg {

enum class Errc {
  invalid_argument,
  dimension_mismatch,
  empty_input,
  degenerate_configuration,
  no_overlap,
  empty_mask,
  unreliable_triangulation,
  insufficient_markers,
  parse_error,
  io_error,
  config_error,
  unknown_mode,
  rejected_spec,
};

const char* to_string(Errc code) noexcept;

/// Library-wide exception. The code is stable and machine-readable; the
/// message is for humans. Parse errors carry the byte offset of the fault.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message,
        std::optional<std::uint64_t> byte_offset = std::nullopt)
      : std::runtime_error(message), code_(code), offset_(byte_offset) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::uint64_t> byte_offset() const noexcept { return offset_; }

 private:
  Errc code_;
  std::optional<std::uint64_t> offset_;
};

}  // namespace vertereg
