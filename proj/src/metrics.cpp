#include "s3mot/metrics.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "s3mot/assoc.hpp"
#include "s3mot/geometry.hpp"

namespace s3mot {

SequenceCounts clear_metrics(const FrameRows& gt, const FrameRows& hyp,
                             double iou_threshold) {
  SequenceCounts counts;
  const std::size_t frames = std::max(gt.size(), hyp.size());

  std::unordered_map<long long, long long> corr;        // gt id -> hyp id (sticky)
  std::unordered_map<long long, long long> last_match;  // for IDSW
  std::unordered_set<long long> in_gap;                 // matched before, currently lost

  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<KittiLabelRow> g;
    if (f < gt.size())
      for (const auto& r : gt[f])
        if (!r.dont_care) g.push_back(r);
    std::vector<KittiLabelRow> h =
        f < hyp.size() ? hyp[f] : std::vector<KittiLabelRow>{};
    std::sort(g.begin(), g.end(), [](const auto& a, const auto& b) {
      return a.track_id < b.track_id;
    });
    std::sort(h.begin(), h.end(), [](const auto& a, const auto& b) {
      return a.track_id < b.track_id;
    });

    counts.gt += static_cast<long long>(g.size());

    std::vector<Pose> gp(g.size()), hp(h.size());
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] = pose_from_row(g[i]);
    for (std::size_t j = 0; j < h.size(); ++j) hp[j] = pose_from_row(h[j]);
    std::unordered_map<long long, std::size_t> hyp_index;
    for (std::size_t j = 0; j < h.size(); ++j) hyp_index[h[j].track_id] = j;

    std::vector<char> g_done(g.size(), 0), h_done(h.size(), 0);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    // keep surviving correspondences first
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto it = corr.find(g[i].track_id);
      if (it == corr.end()) continue;
      auto jt = hyp_index.find(it->second);
      if (jt == hyp_index.end() || h_done[jt->second]) continue;
      if (bev_iou(gp[i], hp[jt->second]) >= iou_threshold) {
        pairs.emplace_back(i, jt->second);
        g_done[i] = 1;
        h_done[jt->second] = 1;
      }
    }

    // Hungarian over the remainder, invalid pairs priced out
    std::vector<std::size_t> gi, hj;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!g_done[i]) gi.push_back(i);
    for (std::size_t j = 0; j < h.size(); ++j)
      if (!h_done[j]) hj.push_back(j);
    if (!gi.empty() && !hj.empty()) {
      Eigen::MatrixXd cost(gi.size(), hj.size());
      for (std::size_t a = 0; a < gi.size(); ++a)
        for (std::size_t b = 0; b < hj.size(); ++b) {
          const double iou = bev_iou(gp[gi[a]], hp[hj[b]]);
          cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
              iou >= iou_threshold ? 1.0 - iou : 1e6;
        }
      const Assignment assign = hungarian_solve(cost);
      for (const auto& [a, b] : assign.matches) {
        if (cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) >=
            1e6)
          continue;
        pairs.emplace_back(gi[a], hj[b]);
        g_done[gi[a]] = 1;
        h_done[hj[b]] = 1;
      }
    }

    counts.tp += static_cast<long long>(pairs.size());
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!g_done[i]) counts.fn += 1;
    for (std::size_t j = 0; j < h.size(); ++j)
      if (!h_done[j]) counts.fp += 1;

    std::sort(pairs.begin(), pairs.end());
    for (const auto& [i, j] : pairs) {
      const long long gid = g[i].track_id;
      const long long hid = h[j].track_id;
      auto lm = last_match.find(gid);
      if (lm != last_match.end() && lm->second != hid) counts.idsw += 1;
      last_match[gid] = hid;
      corr[gid] = hid;
      if (in_gap.count(gid)) {
        counts.frag += 1;
        in_gap.erase(gid);
      }
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g_done[i]) continue;
      if (last_match.count(g[i].track_id)) in_gap.insert(g[i].track_id);
    }
  }
  return counts;
}

}  // namespace s3mot
