#include "s3mot/train.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "s3mot/ops.hpp"
#include "s3mot/optim.hpp"

namespace s3mot {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Eigen::VectorXd jittered_unit(const Eigen::VectorXd& anchor, double separation,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd noise(anchor.size());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = gauss(rng);
  Eigen::VectorXd e = separation * anchor + (1.0 - separation) * noise;
  const double n = e.norm();
  return n > 1e-12 ? Eigen::VectorXd(e / n) : anchor;
}

}  // namespace

Eigen::MatrixXd hidden_cue_cost(const Tensor& distance) {
  const std::size_t H = distance.dim(1), W = distance.dim(2);
  Eigen::MatrixXd cost(H, W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double sim = 0.0;
      for (std::size_t c = 0; c < 4; ++c)
        sim += kHiddenCueWeights[c] * distance.at((c * H + i) * W + j);
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0 - sim;
    }
  return cost;
}

std::vector<AssocProblem> make_assoc_problems(std::size_t count,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<AssocProblem> out;
  out.reserve(count);
  while (out.size() < count) {
    const std::size_t n_obj = 1 + static_cast<std::size_t>(unit(rng) * 7.999);
    struct Obj {
      Pose pose;       // previous-frame pose
      Pose predicted;  // one constant-velocity step ahead
      Eigen::Vector3d vel;
      Eigen::VectorXd anchor;
      int class_id;
    };
    std::vector<Obj> objs(n_obj);
    for (std::size_t k = 0; k < n_obj; ++k) {
      Obj& o = objs[k];
      const double heading = 2.0 * M_PI * unit(rng);
      const double speed = 0.4 + 1.0 * unit(rng);
      o.vel = Eigen::Vector3d(speed * std::cos(heading), speed * std::sin(heading), 0.0);
      o.pose.s = Eigen::Vector3d(1.6 + 0.4 * unit(rng), 3.9 + 0.8 * unit(rng),
                                 1.4 + 0.3 * unit(rng));
      o.pose.p = Eigen::Vector3d(50.0 * unit(rng) - 25.0, 50.0 * unit(rng) - 25.0,
                                 0.5 * o.pose.s.z());
      o.pose.q = yaw_quat(heading);
      o.class_id = unit(rng) < 0.8 ? 0 : 1;
      o.anchor = Eigen::VectorXd(16);
      for (Eigen::Index i = 0; i < 16; ++i) o.anchor(i) = gauss(rng);
      o.anchor.normalize();
    }
    // occasionally force a near-collision so IoU/motion cues become ambiguous
    if (n_obj >= 2 && unit(rng) < 0.35) {
      objs[1].pose.p = objs[0].pose.p + Eigen::Vector3d(1.5 * gauss(rng),
                                                        1.5 * gauss(rng), 0.0);
    }
    for (auto& o : objs) {
      o.predicted = o.pose;
      o.predicted.p += o.vel;
      o.predicted.q = o.pose.q;
    }

    std::vector<TrackAssocInfo> tracks(n_obj);
    for (std::size_t k = 0; k < n_obj; ++k) {
      tracks[k].predicted = objs[k].predicted;
      tracks[k].prev_pos = objs[k].pose.p;
      tracks[k].velocity = objs[k].vel;
      tracks[k].embedding = jittered_unit(objs[k].anchor, 0.95, rng);
      tracks[k].class_id = objs[k].class_id;
    }

    std::vector<DetAssocInfo> dets;
    for (std::size_t k = 0; k < n_obj; ++k) {
      if (unit(rng) < 0.15) continue;  // missed detection
      DetAssocInfo d;
      d.pose = objs[k].predicted;
      d.pose.p += Eigen::Vector3d(0.45 * gauss(rng), 0.45 * gauss(rng),
                                  0.05 * gauss(rng));
      d.pose.q = hemisphere(
          yaw_quat(yaw_of(objs[k].predicted.q) + 0.08 * gauss(rng)));
      d.embedding = jittered_unit(objs[k].anchor, 0.82, rng);
      d.class_id = unit(rng) < 0.95 ? objs[k].class_id : 1 - objs[k].class_id;
      dets.push_back(std::move(d));
    }
    // the occasional newly appeared object
    const std::size_t extra = static_cast<std::size_t>(unit(rng) * 2.0);
    for (std::size_t e = 0; e < extra && dets.size() < 8; ++e) {
      DetAssocInfo d;
      Eigen::VectorXd anchor(16);
      for (Eigen::Index i = 0; i < 16; ++i) anchor(i) = gauss(rng);
      anchor.normalize();
      d.pose.s = Eigen::Vector3d(1.8, 4.2, 1.5);
      d.pose.p = Eigen::Vector3d(50.0 * unit(rng) - 25.0, 50.0 * unit(rng) - 25.0,
                                 0.75);
      d.pose.q = yaw_quat(2.0 * M_PI * unit(rng));
      d.embedding = jittered_unit(anchor, 0.82, rng);
      d.class_id = unit(rng) < 0.8 ? 0 : 1;
      dets.push_back(std::move(d));
    }
    if (dets.empty()) continue;

    AssocProblem problem;
    problem.distance = build_distance_tensor(tracks, dets);
    problem.oracle = hungarian_solve(hidden_cue_cost(problem.distance));
    Tensor gt = Tensor::zeros({n_obj, dets.size()});
    for (const auto& [r, c] : problem.oracle.matches)
      gt.at(r * dets.size() + c) = 1.0;
    problem.gt = gt;
    out.push_back(std::move(problem));
  }
  return out;
}

double assoc_agreement(const HssmParams& params,
                       const std::vector<AssocProblem>& problems, double tau) {
  NoTapeScope quiet;
  std::size_t oracle_pairs = 0, agreed = 0;
  for (const auto& p : problems) {
    const Assignment got =
        extract_assignment(to_matrix(hssm_forward(p.distance, params)), tau);
    oracle_pairs += p.oracle.matches.size();
    for (const auto& m : p.oracle.matches)
      for (const auto& g : got.matches)
        if (m == g) {
          ++agreed;
          break;
        }
  }
  return oracle_pairs == 0
             ? 1.0
             : static_cast<double>(agreed) / static_cast<double>(oracle_pairs);
}

HssmTrainResult train_hssm_toy(HssmParams& params, const HssmTrainConfig& cfg) {
  const auto t0 = Clock::now();
  HssmTrainResult result;

  auto train = make_assoc_problems(cfg.train_problems, cfg.seed);
  const auto heldout = make_assoc_problems(cfg.heldout_problems, cfg.seed + 1);

  Adam opt(params.all_params(), cfg.lr);
  std::mt19937_64 shuffle_rng(cfg.seed + 2);
  std::size_t step = 0;
  double loss_acc = 0.0;
  std::size_t loss_n = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), shuffle_rng);
    for (const auto& p : train) {
      Tape tape;
      const Tensor soft = hssm_forward(p.distance, params);
      const Tensor loss = focal_assoc_loss(soft, p.gt, cfg.gamma);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      loss_acc += loss.value();
      ++loss_n;
      ++step;
      if (step % cfg.log_every == 0) {
        result.loss_curve.emplace_back(step, loss_acc / static_cast<double>(loss_n));
        loss_acc = 0.0;
        loss_n = 0;
      }
    }
    result.agreement_curve.emplace_back(step,
                                        assoc_agreement(params, heldout, cfg.tau));
  }
  result.heldout_agreement = assoc_agreement(params, heldout, cfg.tau);
  result.seconds = seconds_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// VeloSSM toy training
// ---------------------------------------------------------------------------

namespace {

struct VeloWindow {
  std::vector<Pose> noisy_history;  // n+1 poses
  Pose gt_next;
};

VeloWindow make_window(std::size_t n, double pos_noise, bool turning,
                       std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double heading = 2.0 * M_PI * unit(rng);
  const double speed = 0.3 + 1.2 * unit(rng);
  const double yaw_rate = turning
                              ? (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.02 + 0.08 * unit(rng))
                              : 0.0;
  Eigen::Vector2d vel(speed * std::cos(heading), speed * std::sin(heading));
  Pose pose;
  pose.s = Eigen::Vector3d(1.6 + 0.4 * unit(rng), 3.9 + 0.8 * unit(rng),
                           1.4 + 0.3 * unit(rng));
  pose.p = Eigen::Vector3d(20.0 * gauss(rng), 20.0 * gauss(rng), 0.5 * pose.s.z());
  pose.q = yaw_quat(heading);

  std::vector<Pose> gt;
  gt.push_back(pose);
  for (std::size_t f = 0; f < n + 1; ++f) {
    if (yaw_rate != 0.0) vel = Eigen::Rotation2Dd(yaw_rate) * vel;
    Pose next = gt.back();
    next.p.x() += vel.x();
    next.p.y() += vel.y();
    next.q = yaw_quat(std::atan2(vel.y(), vel.x()));
    gt.push_back(next);
  }

  VeloWindow w;
  for (std::size_t i = 0; i + 1 < gt.size(); ++i) {
    Pose noisy = gt[i];
    noisy.p += pos_noise * Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
    w.noisy_history.push_back(noisy);
  }
  w.gt_next = gt.back();
  return w;
}

struct WindowBatch {
  Tensor velocities;  // [B,n,10]
  Tensor last_pose;   // [B,10]
  Tensor gt_next;     // [B,10]
};

WindowBatch batch_windows(const std::vector<VeloWindow>& windows) {
  const std::size_t B = windows.size();
  const std::size_t n = windows[0].noisy_history.size() - 1;
  std::vector<double> vel_data, last_data, gt_data;
  for (const auto& w : windows) {
    for (std::size_t i = 0; i + 1 < w.noisy_history.size(); ++i) {
      const auto v =
          state_difference(w.noisy_history[i], w.noisy_history[i + 1]).packed();
      vel_data.insert(vel_data.end(), v.begin(), v.end());
    }
    const Tensor lp = pose_to_tensor(w.noisy_history.back());
    last_data.insert(last_data.end(), lp.data().begin(), lp.data().end());
    const Tensor gp = pose_to_tensor(w.gt_next);
    gt_data.insert(gt_data.end(), gp.data().begin(), gp.data().end());
  }
  return {Tensor({B, n, kPoseDim}, std::move(vel_data)),
          Tensor({B, kPoseDim}, std::move(last_data)),
          Tensor({B, kPoseDim}, std::move(gt_data))};
}

}  // namespace

double mean_corner_l1(const Pose& a, const Pose& b) {
  const auto ca = box_corners(a.q, a.p, a.s);
  const auto cb = box_corners(b.q, b.p, b.s);
  double acc = 0.0;
  for (std::size_t k = 0; k < 8; ++k)
    acc += (ca[k] - cb[k]).cwiseAbs().sum();
  return acc / 8.0;
}

VeloTrainResult train_velossm_toy(VeloSsmParams& params,
                                  const VeloTrainConfig& cfg) {
  const auto t0 = Clock::now();
  VeloTrainResult result;
  std::mt19937_64 rng(cfg.seed);
  const std::size_t n = params.cfg.history;

  auto sample_batch = [&](std::size_t count) {
    std::vector<VeloWindow> ws;
    for (std::size_t i = 0; i < count; ++i)
      ws.push_back(make_window(n, cfg.pos_noise, i % 2 == 1, rng));
    return ws;
  };

  // encoder phase
  {
    Adam opt(params.predict_params(), cfg.lr);
    double acc = 0.0;
    std::size_t acc_n = 0;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
      const auto batch = batch_windows(sample_batch(cfg.batch));
      Tape tape;
      const auto pred =
          velossm_predict_graph(batch.velocities, batch.last_pose, params);
      const Tensor loss = disentangled_l1_loss_graph(batch.gt_next, pred.pose);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      acc += loss.value();
      ++acc_n;
      if (step % cfg.log_every == 0) {
        result.loss_curve.emplace_back(step, acc / static_cast<double>(acc_n));
        acc = 0.0;
        acc_n = 0;
      }
    }
  }

  // decoder phase: blend the (frozen) prediction with a noisy observation
  {
    Adam opt(params.update_params(), cfg.lr);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> conf_dist(0.75, 1.0);
    for (std::size_t step = 1; step <= cfg.update_steps; ++step) {
      const auto windows = sample_batch(cfg.batch);
      std::vector<double> pred_data, obs_data, prev_data, conf_data, flow_data,
          gt_data;
      for (const auto& w : windows) {
        VeloPredictResult pr;
        {
          NoTapeScope quiet;
          pr = velossm_predict(w.noisy_history, params);
        }
        Pose obs_pose = w.gt_next;
        obs_pose.p += cfg.pos_noise * Eigen::Vector3d(gauss(rng), gauss(rng),
                                                      gauss(rng));
        const auto ov =
            state_difference(w.noisy_history.back(), obs_pose).packed();
        const auto pv = pr.velocity.packed();
        pred_data.insert(pred_data.end(), pv.begin(), pv.end());
        obs_data.insert(obs_data.end(), ov.begin(), ov.end());
        const Tensor prev = pose_to_tensor(w.noisy_history.back());
        prev_data.insert(prev_data.end(), prev.data().begin(), prev.data().end());
        conf_data.push_back(conf_dist(rng));
        flow_data.insert(flow_data.end(), pr.flow.data().begin(),
                         pr.flow.data().end());
        const Tensor gp = pose_to_tensor(w.gt_next);
        gt_data.insert(gt_data.end(), gp.data().begin(), gp.data().end());
      }
      const std::size_t B = windows.size();
      Tape tape;
      const Tensor pose = velossm_update_graph(
          Tensor({B, kPoseDim}, std::move(pred_data)),
          Tensor({B, kPoseDim}, std::move(obs_data)),
          Tensor({B, kPoseDim}, std::move(prev_data)),
          Tensor({B, 1}, std::move(conf_data)),
          Tensor({B, params.cfg.model_dim}, std::move(flow_data)), params);
      const Tensor loss = disentangled_l1_loss_graph(
          Tensor({B, kPoseDim}, std::move(gt_data)), pose);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }

  // evaluation against the repeat-last-velocity baseline
  {
    NoTapeScope quiet;
    double model_acc = 0.0, base_acc = 0.0;
    for (std::size_t i = 0; i < cfg.eval_windows; ++i) {
      const VeloWindow w = make_window(n, cfg.pos_noise, i % 2 == 1, rng);
      const auto pred = velossm_predict(w.noisy_history, params);
      model_acc += mean_corner_l1(w.gt_next, pred.pose);
      base_acc += mean_corner_l1(w.gt_next, constant_velocity_predict(w.noisy_history));
    }
    result.model_corner_l1 = model_acc / static_cast<double>(cfg.eval_windows);
    result.baseline_corner_l1 = base_acc / static_cast<double>(cfg.eval_windows);
  }
  result.seconds = seconds_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// FCOE toy training
// ---------------------------------------------------------------------------

FcoeTrainResult train_fcoe_toy(const FcoeTrainConfig& cfg) {
  const auto t0 = Clock::now();
  FcoeTrainResult result;
  std::mt19937_64 rng(cfg.seed);

  auto [key, ref] = synth_embedding_maps(cfg.map);
  // discard the synthetic embeddings; training starts from random vectors
  key.embeddings = randn<double>({key.cells(), key.embed_dim}, rng);
  ref.embeddings = randn<double>({ref.cells(), ref.embed_dim}, rng);
  key.embeddings.set_requires_grad(true);
  ref.embeddings.set_requires_grad(true);

  const SampledPairs pairs = sample_pairs(key, ref, cfg.negatives, rng);
  const SampledPairs rpairs = sample_pairs(ref, key, cfg.negatives, rng);

  Adam opt({key.embeddings, ref.embeddings}, cfg.lr);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Tape tape;
    const Tensor loss = add(fcoe_loss(key.embeddings, ref.embeddings, pairs),
                            fcoe_loss(ref.embeddings, key.embeddings, rpairs));
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
    if (step % cfg.log_every == 0)
      result.loss_curve.emplace_back(step, loss.value());
  }

  // cosine statistics over labeled cells of both maps
  auto unit_row = [](const Tensor& t, std::size_t row) {
    Eigen::VectorXd v(t.dim(1));
    for (std::size_t i = 0; i < t.dim(1); ++i)
      v(static_cast<Eigen::Index>(i)) = t.at(row * t.dim(1) + i);
    v.normalize();
    return v;
  };
  std::vector<std::pair<int, Eigen::VectorXd>> cells;
  for (std::size_t r = 0; r < key.cells(); ++r)
    if (key.labels[r] >= 0) cells.emplace_back(key.labels[r], unit_row(key.embeddings, r));
  for (std::size_t r = 0; r < ref.cells(); ++r)
    if (ref.labels[r] >= 0) cells.emplace_back(ref.labels[r], unit_row(ref.embeddings, r));
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t j = i + 1; j < cells.size(); ++j) {
      const double c = cells[i].second.dot(cells[j].second);
      if (cells[i].first == cells[j].first) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  result.intra_cos = n_intra ? intra / static_cast<double>(n_intra) : 1.0;
  result.inter_cos = n_inter ? inter / static_cast<double>(n_inter) : 0.0;
  result.key_embeddings = key.embeddings;
  result.ref_embeddings = ref.embeddings;
  result.seconds = seconds_since(t0);
  return result;
}

}  // namespace s3mot
