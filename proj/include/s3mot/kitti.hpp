#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "s3mot/geometry.hpp"

namespace s3mot {

// One line of the KITTI tracking label format: 17 whitespace-delimited
// fields, optionally followed by a score.
struct KittiLabelRow {
  int frame = 0;
  long long track_id = -1;
  std::string type = "Car";
  double truncated = 0.0;
  int occluded = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{0, 0, 0, 0};        // left, top, right, bottom
  std::array<double, 3> dimensions{0, 0, 0};     // h, w, l
  std::array<double, 3> location{0, 0, 0};       // x, y, z
  double rotation_y = 0.0;
  std::optional<double> score;
  bool dont_care = false;  // set when type == "DontCare"
};

using FrameRows = std::vector<std::vector<KittiLabelRow>>;  // indexed by frame

// Parses a label file into per-frame row lists. DontCare rows are retained
// but flagged. Throws MalformedRow (with line number) or FieldCountMismatch.
FrameRows parse_kitti_labels(const std::string& path);

// Inverse of parse: frame-major, then ascending track id, floats fixed to
// six decimals. parse(write(x)) == x field-for-field on normalized rows.
void write_kitti_results(const FrameRows& frames, const std::string& path);

// World-frame pose for one row: position read as-is, yaw about +z from
// rotation_y, extents mapped (h,w,l) -> (w,l,h) onto local (x,y,z).
Pose pose_from_row(const KittiLabelRow& row);
void pose_into_row(const Pose& pose, KittiLabelRow& row);

// Stable small-vocabulary class ids ("Car" = 0, ...); unseen types are
// appended in encounter order within a process.
int class_id_from_type(const std::string& type);
const std::string& type_from_class_id(int id);

}  // namespace s3mot
