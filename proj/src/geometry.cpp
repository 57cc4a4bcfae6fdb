#include "s3mot/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace s3mot {

std::array<double, 10> VelocityVec::packed() const {
  return {dq.w(), dq.x(), dq.y(), dq.z(), dp.x(), dp.y(),
          dp.z(), ds.x(), ds.y(), ds.z()};
}

VelocityVec VelocityVec::from_packed(const std::array<double, 10>& v) {
  VelocityVec out;
  out.dq = Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
  out.dp = Eigen::Vector3d(v[4], v[5], v[6]);
  out.ds = Eigen::Vector3d(v[7], v[8], v[9]);
  return out;
}

Eigen::Quaterniond hemisphere(const Eigen::Quaterniond& q) {
  if (q.w() < 0.0) return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

Eigen::Quaterniond yaw_quat(double yaw) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()));
}

double yaw_of(const Eigen::Quaterniond& q) {
  const Eigen::Vector3d ex = q * Eigen::Vector3d::UnitX();
  return std::atan2(ex.y(), ex.x());
}

VelocityVec state_difference(const Pose& prev, const Pose& next) {
  VelocityVec v;
  v.dq = hemisphere(prev.q.conjugate() * next.q);
  v.dp = next.p - prev.p;
  v.ds = next.s - prev.s;
  return v;
}

Pose state_boxplus(const Pose& st, const VelocityVec& v, bool* degenerate) {
  Pose out;
  const double n = v.dq.norm();
  if (degenerate) *degenerate = n <= 1e-6;
  if (n <= 1e-6) {
    out.q = st.q;
  } else {
    Eigen::Quaterniond dq = v.dq;
    dq.coeffs() /= n;
    out.q = hemisphere(st.q * dq);
  }
  out.p = st.p + v.dp;
  out.s = (st.s + v.ds).cwiseMax(0.01);
  return out;
}

std::array<Eigen::Vector3d, 8> box_corners(const Eigen::Quaterniond& q,
                                           const Eigen::Vector3d& p,
                                           const Eigen::Vector3d& s) {
  std::array<Eigen::Vector3d, 8> out;
  const Eigen::Matrix3d R = q.toRotationMatrix();
  for (int r = 0; r < 8; ++r) {
    const double sx = (r & 4) ? 0.5 : -0.5;
    const double sy = (r & 2) ? 0.5 : -0.5;
    const double sz = (r & 1) ? 0.5 : -0.5;
    out[static_cast<std::size_t>(r)] =
        R * Eigen::Vector3d(sx * s.x(), sy * s.y(), sz * s.z()) + p;
  }
  return out;
}

std::array<Eigen::Vector2d, 4> bev_footprint(const Eigen::Quaterniond& q,
                                             const Eigen::Vector3d& p,
                                             const Eigen::Vector3d& s) {
  const double yaw = yaw_of(q);
  const double c = std::cos(yaw), sn = std::sin(yaw);
  const double hx = 0.5 * s.x(), hy = 0.5 * s.y();
  const std::array<Eigen::Vector2d, 4> local = {
      Eigen::Vector2d(hx, hy), Eigen::Vector2d(-hx, hy),
      Eigen::Vector2d(-hx, -hy), Eigen::Vector2d(hx, -hy)};
  std::array<Eigen::Vector2d, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = Eigen::Vector2d(c * local[i].x() - sn * local[i].y() + p.x(),
                             sn * local[i].x() + c * local[i].y() + p.y());
  }
  return out;
}

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  if (poly.size() < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    acc += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * acc;
}

std::vector<Eigen::Vector2d> clip_polygon(
    const std::vector<Eigen::Vector2d>& subject,
    const std::vector<Eigen::Vector2d>& clip) {
  std::vector<Eigen::Vector2d> output = subject;
  for (std::size_t i = 0; i < clip.size() && !output.empty(); ++i) {
    const Eigen::Vector2d a = clip[i];
    const Eigen::Vector2d b = clip[(i + 1) % clip.size()];
    const Eigen::Vector2d edge = b - a;
    auto inside = [&](const Eigen::Vector2d& pt) {
      return edge.x() * (pt.y() - a.y()) - edge.y() * (pt.x() - a.x()) >= 0.0;
    };
    std::vector<Eigen::Vector2d> input;
    input.swap(output);
    for (std::size_t j = 0; j < input.size(); ++j) {
      const Eigen::Vector2d cur = input[j];
      const Eigen::Vector2d prev = input[(j + input.size() - 1) % input.size()];
      const bool cur_in = inside(cur), prev_in = inside(prev);
      if (cur_in != prev_in) {
        // segment crosses the clip line; add the intersection point
        const Eigen::Vector2d d = cur - prev;
        const double denom = edge.x() * d.y() - edge.y() * d.x();
        if (std::abs(denom) > 1e-15) {
          const double t =
              (edge.x() * (a.y() - prev.y()) - edge.y() * (a.x() - prev.x())) /
              denom;
          output.push_back(prev + t * d);
        }
      }
      if (cur_in) output.push_back(cur);
    }
  }
  return output;
}

double bev_iou(const Pose& a, const Pose& b) {
  const auto fa = bev_footprint(a.q, a.p, a.s);
  const auto fb = bev_footprint(b.q, b.p, b.s);
  const std::vector<Eigen::Vector2d> pa(fa.begin(), fa.end());
  const std::vector<Eigen::Vector2d> pb(fb.begin(), fb.end());
  const double area_a = polygon_area(pa);
  const double area_b = polygon_area(pb);
  if (area_a < 1e-12 || area_b < 1e-12) return 0.0;
  const double inter = polygon_area(clip_polygon(pa, pb));
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_2d(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double iw = std::min(a[2], b[2]) - std::max(a[0], b[0]);
  const double ih = std::min(a[3], b[3]) - std::max(a[1], b[1]);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (a[2] - a[0]) * (a[3] - a[1]);
  const double area_b = (b[2] - b[0]) * (b[3] - b[1]);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace s3mot
