#pragma once

#include <map>
#include <optional>
#include <string>

#include "s3mot/kitti.hpp"

namespace s3mot {

struct SequenceCounts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long idsw = 0;
  long long frag = 0;
  long long gt = 0;

  std::optional<double> mota() const {
    if (gt == 0) return std::nullopt;
    return 1.0 - static_cast<double>(fp + fn + idsw) / static_cast<double>(gt);
  }

  SequenceCounts& operator+=(const SequenceCounts& o) {
    tp += o.tp; fp += o.fp; fn += o.fn;
    idsw += o.idsw; frag += o.frag; gt += o.gt;
    return *this;
  }
};

struct MetricsReport {
  SequenceCounts total;
  std::map<std::string, SequenceCounts> per_sequence;
};

// CLEAR-style per-frame matching on BEV IoU with the standard persistent
// correspondence preference: prior-frame pairs still above the threshold are
// kept before Hungarian runs on the remainder. DontCare ground-truth rows
// are ignored. A gt total of zero leaves MOTA null rather than throwing.
SequenceCounts clear_metrics(const FrameRows& gt, const FrameRows& hyp,
                             double iou_threshold = 0.25);

}  // namespace s3mot
