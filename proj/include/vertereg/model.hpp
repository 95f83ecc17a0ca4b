#pragma once

#include <array>
#include <string>

#include "vertereg/geom.hpp"

namespace vertereg {

inline constexpr int kVertebraCount = 5;

enum class Side { left = 0, right = 1 };

const char* to_string(Side side) noexcept;
/// Throws Errc::invalid_argument for anything but "left" / "right".
Side parse_side(const std::string& text);

/// Planned pedicle screw in the model frame. The screw occupies the
/// cylinder that starts at `entry` and runs `length` mm along `direction`.
struct ScrewPlan {
  Side side = Side::left;
  Vec3 entry = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double radius = 2.5;
  double length = 45.0;
};

enum class Landmark { spinous_process = 0, left_transverse = 1, right_transverse = 2 };

/// One preoperative vertebra model. All coordinates share the combined
/// model frame of the lumbar spine.
struct VertebraModel {
  int id = 1;  // 1..5 for L1..L5

  /// Full surface sample with unit normals; used for rendering and for
  /// selecting reg_points. May be empty for models loaded without it.
  PointList surface_points;
  PointList surface_normals;

  /// Posterior-visible subset used by every registration stage.
  PointList reg_points;
  std::array<Vec3, 3> landmarks{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  PointList pedicle_points;
  std::array<ScrewPlan, 2> screws{ScrewPlan{Side::left}, ScrewPlan{Side::right}};

  const ScrewPlan& screw(Side side) const { return screws[static_cast<int>(side)]; }

  /// Throws Errc::invalid_argument on an empty registration set,
  /// mismatched normals or a non-positive screw radius/length.
  void validate() const;
};

/// "L1".."L5"
std::string level_name(int id);

}  // namespace vertereg
