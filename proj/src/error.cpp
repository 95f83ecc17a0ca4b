#include "vertereg/error.hpp"

namespace vertereg {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::empty_input: return "empty_input";
    case Errc::degenerate_configuration: return "degenerate_configuration";
    case Errc::no_overlap: return "no_overlap";
    case Errc::empty_mask: return "empty_mask";
    case Errc::unreliable_triangulation: return "unreliable_triangulation";
    case Errc::insufficient_markers: return "insufficient_markers";
    case Errc::parse_error: return "parse_error";
    case Errc::io_error: return "io_error";
    case Errc::config_error: return "config_error";
    case Errc::unknown_mode: return "unknown_mode";
    case Errc::rejected_spec: return "rejected_spec";
  }
  return "unknown";
}

}  // namespace vertereg
