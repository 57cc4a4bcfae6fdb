#include "s3mot/synth.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "s3mot/errors.hpp"

namespace s3mot {

namespace {

void validate(const SyntheticSceneSpec& spec) {
  if (spec.objects == 0 || spec.frames == 0)
    throw InvalidSpec("synthetic scene needs objects and frames");
  if (spec.dropout < 0.0 || spec.dropout > 1.0)
    throw InvalidSpec("dropout must be in [0,1]");
  if (spec.pos_noise < 0.0 || spec.yaw_noise < 0.0)
    throw InvalidSpec("noise sigmas must be >= 0");
  if (spec.embed_separation < 0.0 || spec.embed_separation > 1.0)
    throw InvalidSpec("embed_separation must be in [0,1]");
  if (spec.embed_dim == 0) throw InvalidSpec("embed_dim must be >= 1");
  for (const auto& m : spec.motions)
    if (m != "constant-velocity" && m != "turning")
      throw InvalidSpec("unknown motion model: " + m);
}

// Crude top-down pseudo-projection for the NMS image boxes.
std::array<double, 4> image_box(const Pose& pose) {
  const double u = 300.0 + 10.0 * pose.p.x();
  const double v = 300.0 + 10.0 * pose.p.y();
  const double hw = 5.0 * pose.s.x();
  const double hh = 5.0 * pose.s.y();
  return {u - hw, v - hh, u + hw, v + hh};
}

}  // namespace

SyntheticScene synth_scene_generate(const SyntheticSceneSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct ObjectSim {
    Pose pose;
    Eigen::Vector2d vel;     // ground-plane velocity, m/frame
    double yaw_rate = 0.0;
    Eigen::VectorXd anchor;  // unit appearance anchor
  };

  std::vector<ObjectSim> objs(spec.objects);
  for (std::size_t k = 0; k < spec.objects; ++k) {
    ObjectSim& o = objs[k];
    const std::string motion = spec.motions.empty()
                                   ? "constant-velocity"
                                   : spec.motions[k % spec.motions.size()];
    const double speed = 0.6 + 0.8 * unit(rng);
    double heading;
    Eigen::Vector2d start;
    if (spec.crossing) {
      const double theta =
          2.0 * M_PI * static_cast<double>(k) / static_cast<double>(spec.objects);
      const double radius = 0.45 * speed * static_cast<double>(spec.frames);
      start = Eigen::Vector2d(radius * std::cos(theta), radius * std::sin(theta));
      heading = theta + M_PI + 0.12 * gauss(rng);  // roughly through the center
    } else {
      start = Eigen::Vector2d(24.0 * unit(rng) - 12.0, 24.0 * unit(rng) - 12.0) +
              Eigen::Vector2d(18.0 * std::cos(2.0 * M_PI * k / spec.objects),
                              18.0 * std::sin(2.0 * M_PI * k / spec.objects));
      heading = 2.0 * M_PI * unit(rng);
    }
    o.vel = speed * Eigen::Vector2d(std::cos(heading), std::sin(heading));
    o.yaw_rate = motion == "turning"
                     ? (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.03 + 0.06 * unit(rng))
                     : 0.0;
    o.pose.s = Eigen::Vector3d(1.6 + 0.4 * unit(rng), 3.9 + 0.8 * unit(rng),
                               1.4 + 0.3 * unit(rng));
    o.pose.p = Eigen::Vector3d(start.x(), start.y(), 0.5 * o.pose.s.z());
    o.pose.q = yaw_quat(heading);
    o.anchor = Eigen::VectorXd(spec.embed_dim);
    for (Eigen::Index i = 0; i < o.anchor.size(); ++i) o.anchor(i) = gauss(rng);
    o.anchor.normalize();
  }

  SyntheticScene scene;
  scene.gt.resize(spec.frames);
  scene.detections.resize(spec.frames);
  scene.det_embeddings.resize(spec.frames);
  scene.det_object.resize(spec.frames);

  for (std::size_t f = 0; f < spec.frames; ++f) {
    for (std::size_t k = 0; k < spec.objects; ++k) {
      ObjectSim& o = objs[k];
      if (f > 0) {
        if (o.yaw_rate != 0.0) {
          const Eigen::Rotation2Dd rot(o.yaw_rate);
          o.vel = rot * o.vel;
        }
        o.pose.p.x() += o.vel.x();
        o.pose.p.y() += o.vel.y();
        o.pose.q = yaw_quat(std::atan2(o.vel.y(), o.vel.x()));
      }

      KittiLabelRow gt_row;
      gt_row.frame = static_cast<int>(f);
      gt_row.track_id = static_cast<long long>(k);
      gt_row.type = "Car";
      pose_into_row(o.pose, gt_row);
      const auto gb = image_box(o.pose);
      gt_row.bbox = gb;
      scene.gt[f].push_back(gt_row);

      // detection draws happen in a fixed order so the stream is a pure
      // function of the seed
      const double drop = unit(rng);
      Eigen::Vector3d pnoise(gauss(rng), gauss(rng), gauss(rng));
      const double ynoise = gauss(rng);
      Eigen::VectorXd enoise(spec.embed_dim);
      for (Eigen::Index i = 0; i < enoise.size(); ++i) enoise(i) = gauss(rng);
      const double conf = 0.75 + 0.24 * unit(rng);
      if (drop < spec.dropout) continue;

      Pose det_pose = o.pose;
      det_pose.p += spec.pos_noise * pnoise;
      det_pose.q =
          hemisphere(yaw_quat(yaw_of(o.pose.q) + spec.yaw_noise * ynoise));

      KittiLabelRow det_row;
      det_row.frame = static_cast<int>(f);
      det_row.track_id = -1;
      det_row.type = "Car";
      pose_into_row(det_pose, det_row);
      det_row.bbox = image_box(det_pose);
      det_row.score = conf;
      scene.detections[f].push_back(det_row);

      Eigen::VectorXd emb = spec.embed_separation * o.anchor +
                            (1.0 - spec.embed_separation) * enoise;
      const double nrm = emb.norm();
      if (nrm > 1e-12) emb /= nrm;
      scene.det_embeddings[f].push_back(emb);
      scene.det_object[f].push_back(static_cast<int>(k));
    }
  }
  return scene;
}

void write_embeddings_sidecar(
    const std::vector<std::vector<Eigen::VectorXd>>& embeddings,
    const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoFailure("cannot open for writing: " + path);
  os.precision(17);
  for (std::size_t f = 0; f < embeddings.size(); ++f)
    for (std::size_t r = 0; r < embeddings[f].size(); ++r) {
      const auto& e = embeddings[f][r];
      os << f << ' ' << r << ' ' << e.size();
      for (Eigen::Index i = 0; i < e.size(); ++i) os << ' ' << e(i);
      os << '\n';
    }
  if (!os) throw IoFailure("write failed: " + path);
}

std::vector<std::vector<Eigen::VectorXd>> read_embeddings_sidecar(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoFailure("cannot open: " + path);
  std::vector<std::vector<Eigen::VectorXd>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t frame = 0, row = 0, dim = 0;
    if (!(ls >> frame >> row >> dim))
      throw MalformedRow("sidecar line " + std::to_string(line_no));
    Eigen::VectorXd e(dim);
    for (std::size_t i = 0; i < dim; ++i)
      if (!(ls >> e(static_cast<Eigen::Index>(i))))
        throw MalformedRow("sidecar line " + std::to_string(line_no));
    if (out.size() <= frame) out.resize(frame + 1);
    if (out[frame].size() <= row) out[frame].resize(row + 1);
    out[frame][row] = std::move(e);
  }
  return out;
}

}  // namespace s3mot
