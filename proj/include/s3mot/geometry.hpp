#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <vector>

namespace s3mot {

// Oriented 3-D box pose: unit hemisphere-normalized quaternion (w >= 0),
// center position and positive extents (w,h,l) mapped onto local (x,y,z).
struct Pose {
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d p{0.0, 0.0, 0.0};
  Eigen::Vector3d s{1.0, 1.0, 1.0};
};

// Per-frame pose increment: relative rotation plus linear and dimension
// deltas. Packs to 10 doubles ordered [qw qx qy qz | px py pz | sw sh sl].
struct VelocityVec {
  Eigen::Quaterniond dq{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d dp{0.0, 0.0, 0.0};
  Eigen::Vector3d ds{0.0, 0.0, 0.0};

  std::array<double, 10> packed() const;
  static VelocityVec from_packed(const std::array<double, 10>& v);
};

// Flips sign so the scalar part is non-negative.
Eigen::Quaterniond hemisphere(const Eigen::Quaterniond& q);

// Shortcut for a pure yaw rotation about +z.
Eigen::Quaterniond yaw_quat(double yaw);

// Yaw angle of the rotated x-axis projected to the ground plane.
double yaw_of(const Eigen::Quaterniond& q);

// next (-) prev on the pose manifold: dq = hemisphere(q_prev^-1 * q_next),
// dp = p_next - p_prev, ds = s_next - s_prev.
VelocityVec state_difference(const Pose& prev, const Pose& next);

// Manifold increment: q' = hemisphere(q * normalize(dq)), p' = p + dp,
// s' = max(s + ds, 0.01). A dq with norm <= 1e-6 is treated as the identity
// rotation and reported through `degenerate` when provided.
Pose state_boxplus(const Pose& st, const VelocityVec& v,
                   bool* degenerate = nullptr);

// Eight oriented-box vertices. Local sign pattern over (x,y,z) half-extents
// runs ---, --+, -+-, -++, +--, +-+, ++-, +++.
std::array<Eigen::Vector3d, 8> box_corners(const Eigen::Quaterniond& q,
                                           const Eigen::Vector3d& p,
                                           const Eigen::Vector3d& s);

// Ground-plane footprint of a yaw-rotated box: 4 corners, counter-clockwise.
std::array<Eigen::Vector2d, 4> bev_footprint(const Eigen::Quaterniond& q,
                                             const Eigen::Vector3d& p,
                                             const Eigen::Vector3d& s);

// Shoelace area; positive for counter-clockwise rings.
double polygon_area(const std::vector<Eigen::Vector2d>& poly);

// Sutherland-Hodgman clip of a convex subject against a convex CCW clip.
std::vector<Eigen::Vector2d> clip_polygon(
    const std::vector<Eigen::Vector2d>& subject,
    const std::vector<Eigen::Vector2d>& clip);

// IoU of the yaw-rotated ground-plane footprints, clamped to [0,1]. Returns
// 0 for degenerate footprints (area < 1e-12).
double bev_iou(const Pose& a, const Pose& b);

// Axis-aligned 2-D IoU over [left, top, right, bottom] boxes.
double iou_2d(const std::array<double, 4>& a, const std::array<double, 4>& b);

}  // namespace s3mot
