#include "s3mot/assoc.hpp"

#include <cmath>
#include <limits>

#include "s3mot/errors.hpp"

namespace s3mot {

namespace {

constexpr double kPadCost = 1e6;  // dominates any cue cost (all <= 1)

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    Eigen::ArrayXd e = (s.row(i).array() - mx).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

}  // namespace

Eigen::MatrixXd appearance_similarity(const Eigen::MatrixXd& track_embeds,
                                      const Eigen::MatrixXd& det_embeds) {
  if (track_embeds.cols() != det_embeds.cols())
    throw ShapeMismatch("appearance_similarity: embedding dims differ");
  const Eigen::MatrixXd s = track_embeds * det_embeds.transpose();
  return 0.5 * (softmax_rows(s) + softmax_rows(s.transpose()).transpose());
}

double centroid_similarity(const Eigen::Vector3d& p_track,
                           const Eigen::Vector3d& p_det) {
  return std::exp(-(p_track - p_det).norm() / 10.0);
}

double pseudo_motion_similarity(const Eigen::Vector3d& v_track,
                                const Eigen::Vector3d& v_det) {
  return std::exp(-(v_track - v_det).norm() / 5.0);
}

double motion_similarity(const Eigen::Vector3d& v_track,
                         const Eigen::Vector3d& v_det,
                         const Eigen::Vector3d& p_track,
                         const Eigen::Vector3d& p_det) {
  double w_cos = 0.5;
  const double nt = v_track.norm(), nd = v_det.norm();
  if (nt >= 1e-9 && nd >= 1e-9)
    w_cos = 0.5 * (1.0 + v_track.dot(v_det) / (nt * nd));
  return w_cos * centroid_similarity(p_track, p_det) +
         (1.0 - w_cos) * pseudo_motion_similarity(v_track, v_det);
}

double category_consistency(int class_track, int class_det) {
  return class_track == class_det ? 1.0 : 0.0;
}

Tensor build_distance_tensor(const std::vector<TrackAssocInfo>& tracks,
                             const std::vector<DetAssocInfo>& dets) {
  if (tracks.empty() || dets.empty())
    throw EmptyProblem("build_distance_tensor: empty side");
  const std::size_t H = tracks.size(), W = dets.size();

  auto normalized = [](const Eigen::VectorXd& e) {
    Eigen::VectorXd v = e.size() > 0 ? e : Eigen::VectorXd::Ones(1);
    const double n = v.norm();
    return n > 0 ? Eigen::VectorXd(v / n) : v;
  };
  const Eigen::Index edim = normalized(tracks[0].embedding).size();
  Eigen::MatrixXd ft(H, edim), fd(W, edim);
  for (std::size_t i = 0; i < H; ++i) {
    const Eigen::VectorXd v = normalized(tracks[i].embedding);
    if (v.size() != edim) throw ShapeMismatch("build_distance_tensor: ragged embeddings");
    ft.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  for (std::size_t j = 0; j < W; ++j) {
    const Eigen::VectorXd v = normalized(dets[j].embedding);
    if (v.size() != edim) throw ShapeMismatch("build_distance_tensor: ragged embeddings");
    fd.row(static_cast<Eigen::Index>(j)) = v.transpose();
  }
  const Eigen::MatrixXd app = appearance_similarity(ft, fd);

  Tensor out({4, H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const auto& t = tracks[i];
      const auto& d = dets[j];
      const Eigen::Vector3d pseudo_vel = d.pose.p - t.prev_pos;
      out.at((0 * H + i) * W + j) =
          app(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      out.at((1 * H + i) * W + j) = bev_iou(t.predicted, d.pose);
      out.at((2 * H + i) * W + j) =
          motion_similarity(t.velocity, pseudo_vel, t.predicted.p, d.pose.p);
      out.at((3 * H + i) * W + j) = category_consistency(t.class_id, d.class_id);
    }
  return out;
}

namespace {

void check_finite(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite())
    throw NonFiniteCost("assignment: cost matrix has non-finite entries");
}

void fill_unmatched(Assignment& a, std::size_t rows, std::size_t cols) {
  std::vector<char> row_used(rows, 0), col_used(cols, 0);
  for (const auto& [r, c] : a.matches) {
    row_used[r] = 1;
    col_used[c] = 1;
  }
  for (std::size_t r = 0; r < rows; ++r)
    if (!row_used[r]) a.unmatched_tracks.push_back(r);
  for (std::size_t c = 0; c < cols; ++c)
    if (!col_used[c]) a.unmatched_detections.push_back(c);
}

}  // namespace

Assignment hungarian_solve(const Eigen::MatrixXd& cost) {
  check_finite(cost);
  const std::size_t rows = static_cast<std::size_t>(cost.rows());
  const std::size_t cols = static_cast<std::size_t>(cost.cols());
  Assignment out;
  if (rows == 0 || cols == 0) {
    fill_unmatched(out, rows, cols);
    return out;
  }
  const std::size_t n = std::max(rows, cols);

  // Potentials-based shortest augmenting path, 1-indexed.
  auto at = [&](std::size_t i, std::size_t j) {
    if (i - 1 < rows && j - 1 < cols)
      return cost(static_cast<Eigen::Index>(i - 1),
                  static_cast<Eigen::Index>(j - 1));
    return kPadCost;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i - 1 < rows && j - 1 < cols)
      out.matches.emplace_back(i - 1, j - 1);
  }
  std::sort(out.matches.begin(), out.matches.end());
  fill_unmatched(out, rows, cols);
  return out;
}

Assignment greedy_solve(const Eigen::MatrixXd& cost) {
  check_finite(cost);
  const std::size_t rows = static_cast<std::size_t>(cost.rows());
  const std::size_t cols = static_cast<std::size_t>(cost.cols());
  Assignment out;
  std::vector<char> row_used(rows, 0), col_used(cols, 0);
  const std::size_t picks = std::min(rows, cols);
  for (std::size_t k = 0; k < picks; ++k) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t br = 0, bc = 0;
    bool found = false;
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_used[r]) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        if (col_used[c]) continue;
        const double v = cost(static_cast<Eigen::Index>(r),
                              static_cast<Eigen::Index>(c));
        if (v < best) {  // strict: first hit wins ties by low row, then col
          best = v;
          br = r;
          bc = c;
          found = true;
        }
      }
    }
    if (!found) break;
    row_used[br] = 1;
    col_used[bc] = 1;
    out.matches.emplace_back(br, bc);
  }
  std::sort(out.matches.begin(), out.matches.end());
  fill_unmatched(out, rows, cols);
  return out;
}

Assignment extract_assignment(const Eigen::MatrixXd& soft, double tau) {
  Assignment full = hungarian_solve(Eigen::MatrixXd(1.0 - soft.array()));
  Assignment out;
  for (const auto& [r, c] : full.matches) {
    if (soft(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) >= tau)
      out.matches.emplace_back(r, c);
  }
  fill_unmatched(out, static_cast<std::size_t>(soft.rows()),
                 static_cast<std::size_t>(soft.cols()));
  return out;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeMismatch("to_matrix: expects rank-2 tensor");
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          t.at(i * t.dim(1) + j);
  return m;
}

}  // namespace s3mot
