#include "vertereg/model.hpp"

#include <cmath>

#include "vertereg/error.hpp"

namespace vertereg {

const char* to_string(Side side) noexcept { return side == Side::left ? "left" : "right"; }

Side parse_side(const std::string& text) {
  if (text == "left") return Side::left;
  if (text == "right") return Side::right;
  throw Error(Errc::invalid_argument, "unknown screw side '" + text + "'");
}

void VertebraModel::validate() const {
  if (reg_points.empty()) throw Error(Errc::invalid_argument, level_name(id) + ": empty registration point set");
  if (surface_points.size() != surface_normals.size()) {
    throw Error(Errc::invalid_argument, level_name(id) + ": surface points and normals differ in length");
  }
  for (const ScrewPlan& s : screws) {
    if (!(s.radius > 0.0) || !(s.length > 0.0)) {
      throw Error(Errc::invalid_argument, level_name(id) + ": screw radius and length must be positive");
    }
    if (std::abs(s.direction.norm() - 1.0) > 1e-6) {
      throw Error(Errc::invalid_argument, level_name(id) + ": screw direction must be unit length");
    }
  }
}

std::string level_name(int id) { return "L" + std::to_string(id); }

}  // namespace vertereg
