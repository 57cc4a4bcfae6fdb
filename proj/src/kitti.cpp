#include "s3mot/kitti.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

#include "s3mot/errors.hpp"

namespace s3mot {

namespace {

double parse_double(const std::string& tok, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw MalformedRow("line " + std::to_string(line_no) +
                       ": bad numeric field '" + tok + "'");
  }
  if (used != tok.size())
    throw MalformedRow("line " + std::to_string(line_no) +
                       ": trailing junk in field '" + tok + "'");
  return v;
}

long long parse_int(const std::string& tok, std::size_t line_no) {
  const double v = parse_double(tok, line_no);
  return static_cast<long long>(v);
}

}  // namespace

FrameRows parse_kitti_labels(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoFailure("cannot open: " + path);
  FrameRows frames;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string tok;
    while (ls >> tok) toks.push_back(tok);
    if (toks.empty()) continue;
    if (toks.size() != 17 && toks.size() != 18)
      throw FieldCountMismatch("line " + std::to_string(line_no) + ": expected 17 or 18 fields, got " +
                               std::to_string(toks.size()));
    KittiLabelRow row;
    row.frame = static_cast<int>(parse_int(toks[0], line_no));
    row.track_id = parse_int(toks[1], line_no);
    row.type = toks[2];
    row.dont_care = row.type == "DontCare";
    row.truncated = parse_double(toks[3], line_no);
    row.occluded = static_cast<int>(parse_int(toks[4], line_no));
    row.alpha = parse_double(toks[5], line_no);
    for (int i = 0; i < 4; ++i)
      row.bbox[static_cast<std::size_t>(i)] =
          parse_double(toks[static_cast<std::size_t>(6 + i)], line_no);
    for (int i = 0; i < 3; ++i)
      row.dimensions[static_cast<std::size_t>(i)] =
          parse_double(toks[static_cast<std::size_t>(10 + i)], line_no);
    for (int i = 0; i < 3; ++i)
      row.location[static_cast<std::size_t>(i)] =
          parse_double(toks[static_cast<std::size_t>(13 + i)], line_no);
    row.rotation_y = parse_double(toks[16], line_no);
    if (toks.size() == 18) row.score = parse_double(toks[17], line_no);

    if (row.frame < 0)
      throw MalformedRow("line " + std::to_string(line_no) + ": negative frame");
    if (row.bbox[2] < row.bbox[0] || row.bbox[3] < row.bbox[1])
      throw MalformedRow("line " + std::to_string(line_no) + ": inverted bbox");

    if (frames.size() <= static_cast<std::size_t>(row.frame))
      frames.resize(static_cast<std::size_t>(row.frame) + 1);
    frames[static_cast<std::size_t>(row.frame)].push_back(std::move(row));
  }
  return frames;
}

void write_kitti_results(const FrameRows& frames, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoFailure("cannot open for writing: " + path);
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (std::size_t f = 0; f < frames.size(); ++f) {
    std::vector<KittiLabelRow> rows = frames[f];
    std::stable_sort(rows.begin(), rows.end(),
                     [](const KittiLabelRow& a, const KittiLabelRow& b) {
                       return a.track_id < b.track_id;
                     });
    for (const auto& r : rows) {
      os << r.frame << ' ' << r.track_id << ' ' << r.type << ' '
         << fmt(r.truncated) << ' ' << r.occluded << ' ' << fmt(r.alpha);
      for (double v : r.bbox) os << ' ' << fmt(v);
      for (double v : r.dimensions) os << ' ' << fmt(v);
      for (double v : r.location) os << ' ' << fmt(v);
      os << ' ' << fmt(r.rotation_y);
      if (r.score) os << ' ' << fmt(*r.score);
      os << '\n';
    }
  }
  if (!os) throw IoFailure("write failed: " + path);
}

Pose pose_from_row(const KittiLabelRow& row) {
  Pose pose;
  pose.p = Eigen::Vector3d(row.location[0], row.location[1], row.location[2]);
  pose.q = hemisphere(yaw_quat(row.rotation_y));
  pose.s = Eigen::Vector3d(row.dimensions[1], row.dimensions[2], row.dimensions[0]);
  return pose;
}

void pose_into_row(const Pose& pose, KittiLabelRow& row) {
  row.location = {pose.p.x(), pose.p.y(), pose.p.z()};
  row.rotation_y = yaw_of(pose.q);
  row.dimensions = {pose.s.z(), pose.s.x(), pose.s.y()};
}

namespace {

std::vector<std::string>& class_registry() {
  static std::vector<std::string> types = {"Car",     "Pedestrian", "Cyclist",
                                           "Van",     "Truck",      "Tram",
                                           "Person",  "Misc"};
  return types;
}
std::mutex class_registry_mutex;

}  // namespace

int class_id_from_type(const std::string& type) {
  std::lock_guard<std::mutex> lock(class_registry_mutex);
  auto& reg = class_registry();
  for (std::size_t i = 0; i < reg.size(); ++i)
    if (reg[i] == type) return static_cast<int>(i);
  reg.push_back(type);
  return static_cast<int>(reg.size() - 1);
}

const std::string& type_from_class_id(int id) {
  std::lock_guard<std::mutex> lock(class_registry_mutex);
  auto& reg = class_registry();
  if (id < 0 || static_cast<std::size_t>(id) >= reg.size()) {
    static const std::string unknown = "Misc";
    return unknown;
  }
  return reg[static_cast<std::size_t>(id)];
}

}  // namespace s3mot
