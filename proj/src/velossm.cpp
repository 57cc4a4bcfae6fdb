#include "s3mot/velossm.hpp"

#include <cmath>

#include "s3mot/errors.hpp"
#include "s3mot/ops.hpp"

namespace s3mot {

Tensor pose_to_tensor(const Pose& pose) {
  return Tensor({1, kPoseDim},
                {pose.q.w(), pose.q.x(), pose.q.y(), pose.q.z(), pose.p.x(),
                 pose.p.y(), pose.p.z(), pose.s.x(), pose.s.y(), pose.s.z()});
}

Tensor poses_to_tensor(const std::vector<Pose>& poses) {
  std::vector<double> data;
  data.reserve(poses.size() * kPoseDim);
  for (const auto& pose : poses) {
    const Tensor row = pose_to_tensor(pose);
    data.insert(data.end(), row.data().begin(), row.data().end());
  }
  return Tensor({poses.size(), kPoseDim}, std::move(data));
}

Pose pose_from_row(const Tensor& t, std::size_t row) {
  const std::size_t base = row * kPoseDim;
  Pose out;
  Eigen::Quaterniond q(t.at(base + 0), t.at(base + 1), t.at(base + 2),
                       t.at(base + 3));
  q.normalize();
  out.q = hemisphere(q);
  out.p = Eigen::Vector3d(t.at(base + 4), t.at(base + 5), t.at(base + 6));
  out.s = Eigen::Vector3d(t.at(base + 7), t.at(base + 8), t.at(base + 9));
  return out;
}

Tensor velocity_to_tensor(const VelocityVec& v) {
  const auto a = v.packed();
  return Tensor({1, kPoseDim}, std::vector<double>(a.begin(), a.end()));
}

VelocityVec velocity_from_row(const Tensor& t, std::size_t row) {
  std::array<double, 10> a;
  for (std::size_t i = 0; i < kPoseDim; ++i) a[i] = t.at(row * kPoseDim + i);
  return VelocityVec::from_packed(a);
}

// ---------------------------------------------------------------------------
// Differentiable pose arithmetic
// ---------------------------------------------------------------------------

namespace {

Tensor col(const Tensor& m, std::size_t j) { return slice(m, 1, j, 1); }

}  // namespace

Tensor quat_mul_graph(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(1) != 4 || b.shape() != a.shape())
    throw ShapeMismatch("quat_mul_graph: expects matching [B,4] inputs");
  const Tensor aw = col(a, 0), ax = col(a, 1), ay = col(a, 2), az = col(a, 3);
  const Tensor bw = col(b, 0), bx = col(b, 1), by = col(b, 2), bz = col(b, 3);
  const Tensor w = aw * bw - ax * bx - ay * by - az * bz;
  const Tensor x = aw * bx + ax * bw + ay * bz - az * by;
  const Tensor y = aw * by - ax * bz + ay * bw + az * bx;
  const Tensor z = aw * bz + ax * by - ay * bx + az * bw;
  return concat<double>({w, x, y, z}, 1);
}

Tensor quat_normalize_graph(const Tensor& q) {
  if (q.rank() != 2 || q.dim(1) != 4)
    throw ShapeMismatch("quat_normalize_graph: expects [B,4]");
  const Tensor nrm = sqrt(sum_axis(mul(q, q), 1, /*keepdim=*/true));
  return div(q, broadcast_to(nrm, q.shape()));
}

Tensor boxplus_graph(const Tensor& prev_pose, const Tensor& vel) {
  if (prev_pose.rank() != 2 || prev_pose.dim(1) != kPoseDim ||
      vel.shape() != prev_pose.shape())
    throw ShapeMismatch("boxplus_graph: expects matching [B,10] inputs");
  const Tensor q = quat_mul_graph(slice(prev_pose, 1, 0, 4),
                                  quat_normalize_graph(slice(vel, 1, 0, 4)));
  const Tensor p = add(slice(prev_pose, 1, 4, 3), slice(vel, 1, 4, 3));
  const Tensor s =
      clamp_min(add(slice(prev_pose, 1, 7, 3), slice(vel, 1, 7, 3)), 0.01);
  return concat<double>({q, p, s}, 1);
}

Tensor pose_corners_graph(const Tensor& pose) {
  if (pose.rank() != 2 || pose.dim(1) != kPoseDim)
    throw ShapeMismatch("pose_corners_graph: expects [B,10]");
  const std::size_t B = pose.dim(0);
  const Tensor q = quat_normalize_graph(slice(pose, 1, 0, 4));
  const Tensor w = col(q, 0), x = col(q, 1), y = col(q, 2), z = col(q, 3);

  // Rotation matrix entries for a unit quaternion.
  const Tensor two = Tensor::full({B, 1}, 2.0);
  const Tensor one = Tensor::ones({B, 1});
  const Tensor r00 = one - two * (y * y + z * z);
  const Tensor r01 = two * (x * y - w * z);
  const Tensor r02 = two * (x * z + w * y);
  const Tensor r10 = two * (x * y + w * z);
  const Tensor r11 = one - two * (x * x + z * z);
  const Tensor r12 = two * (y * z - w * x);
  const Tensor r20 = two * (x * z - w * y);
  const Tensor r21 = two * (y * z + w * x);
  const Tensor r22 = one - two * (x * x + y * y);
  const Tensor R = reshape(
      concat<double>({r00, r01, r02, r10, r11, r12, r20, r21, r22}, 1),
      {B, 3, 3});

  // Local corners: sign pattern ---, --+, -+-, -++, +--, +-+, ++-, +++.
  std::vector<double> signs;
  signs.reserve(24);
  for (int r = 0; r < 8; ++r) {
    signs.push_back((r & 4) ? 0.5 : -0.5);
    signs.push_back((r & 2) ? 0.5 : -0.5);
    signs.push_back((r & 1) ? 0.5 : -0.5);
  }
  const Tensor offsets({8, 3}, std::move(signs));
  const Tensor half_ext =
      broadcast_to(unsqueeze(slice(pose, 1, 7, 3), 1), {B, 8, 3});
  const Tensor local = mul(broadcast_to(offsets, {B, 8, 3}), half_ext);
  const Tensor world = matmul(local, permute(R, {0, 2, 1}));
  const Tensor center =
      broadcast_to(unsqueeze(slice(pose, 1, 4, 3), 1), {B, 8, 3});
  return add(world, center);
}

namespace {

Tensor replace_slice(const Tensor& base, const Tensor& repl, std::size_t start,
                     std::size_t len) {
  std::vector<Tensor> parts;
  if (start > 0) parts.push_back(slice(base, 1, 0, start));
  parts.push_back(repl);
  if (start + len < base.dim(1))
    parts.push_back(slice(base, 1, start + len, base.dim(1) - start - len));
  return concat<double>(parts, 1);
}

}  // namespace

Tensor disentangled_l1_loss_graph(const Tensor& gt_pose, const Tensor& pred_pose) {
  if (gt_pose.shape() != pred_pose.shape() || gt_pose.rank() != 2 ||
      gt_pose.dim(1) != kPoseDim)
    throw ShapeMismatch("disentangled_l1_loss_graph: expects matching [B,10]");
  const std::size_t B = gt_pose.dim(0);
  const Tensor gt_corners = pose_corners_graph(gt_pose);
  const double scale = 1.0 / (8.0 * static_cast<double>(B));

  auto pass = [&](const Tensor& mixed) {
    return mul_scalar(sum(abs(sub(pose_corners_graph(mixed), gt_corners))),
                      scale);
  };

  const Tensor q_pass = pass(replace_slice(gt_pose, slice(pred_pose, 1, 0, 4), 0, 4));
  const Tensor p_pass = pass(replace_slice(gt_pose, slice(pred_pose, 1, 4, 3), 4, 3));
  const Tensor s_pass = pass(replace_slice(gt_pose, slice(pred_pose, 1, 7, 3), 7, 3));
  return add(add(q_pass, p_pass), s_pass);
}

double disentangled_l1_loss(const Pose& gt, const Pose& pred) {
  NoTapeScope quiet;
  return disentangled_l1_loss_graph(pose_to_tensor(gt), pose_to_tensor(pred))
      .value();
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

VeloSsmParams VeloSsmParams::init(const VeloSsmConfig& cfg, std::mt19937_64& rng) {
  VeloSsmParams p;
  p.cfg = cfg;
  p.predict.w_embed = linear_init(kPoseDim, cfg.model_dim, rng);
  for (std::size_t i = 0; i < cfg.layers; ++i)
    p.predict.layers.push_back(MambaBlockParams::init(
        cfg.model_dim, cfg.inner_dim, cfg.state_dim, cfg.inner_dim,
        cfg.conv_width, rng));
  p.predict.w_head = linear_init(cfg.model_dim, kPoseDim, rng);

  p.update.w_embed = linear_init(2 * kPoseDim, cfg.model_dim, rng);
  p.update.w_gate = linear_init(1, cfg.model_dim, rng);
  p.update.b_gate = Tensor::zeros({cfg.model_dim});
  for (std::size_t i = 0; i < cfg.layers; ++i)
    p.update.layers.push_back(MambaBlockParams::init(
        cfg.model_dim, cfg.inner_dim, cfg.state_dim, cfg.model_dim,
        cfg.conv_width, rng));
  p.update.w_head = linear_init(cfg.model_dim, kPoseDim, rng);
  return p;
}

std::vector<Tensor> VeloSsmParams::predict_params() const {
  std::vector<Tensor> out;
  out.push_back(predict.w_embed);
  for (const auto& l : predict.layers) l.collect(out);
  out.push_back(predict.w_head);
  return out;
}

std::vector<Tensor> VeloSsmParams::update_params() const {
  std::vector<Tensor> out;
  out.push_back(update.w_embed);
  out.push_back(update.w_gate);
  out.push_back(update.b_gate);
  for (const auto& l : update.layers) l.collect(out);
  out.push_back(update.w_head);
  return out;
}

void VeloSsmParams::to_weights(WeightMap& w) const {
  w.put("velossm_p.embed", predict.w_embed);
  for (std::size_t i = 0; i < predict.layers.size(); ++i)
    predict.layers[i].to_weights("velossm_p.layers." + std::to_string(i), w);
  w.put("velossm_p.head", predict.w_head);

  w.put("velossm_u.embed", update.w_embed);
  w.put("velossm_u.gate_w", update.w_gate);
  w.put("velossm_u.gate_b", update.b_gate);
  for (std::size_t i = 0; i < update.layers.size(); ++i)
    update.layers[i].to_weights("velossm_u.layers." + std::to_string(i), w);
  w.put("velossm_u.head", update.w_head);
}

VeloSsmParams VeloSsmParams::from_weights(const WeightMap& w,
                                          const VeloSsmConfig& cfg_hint) {
  VeloSsmParams p;
  p.cfg = cfg_hint;
  p.predict.w_embed = w.at("velossm_p.embed").clone();
  p.cfg.model_dim = p.predict.w_embed.dim(1);
  for (std::size_t i = 0;; ++i) {
    const std::string prefix = "velossm_p.layers." + std::to_string(i);
    if (!w.contains(prefix + ".w_x")) break;
    p.predict.layers.push_back(MambaBlockParams::from_weights(prefix, w));
  }
  p.predict.w_head = w.at("velossm_p.head").clone();

  p.update.w_embed = w.at("velossm_u.embed").clone();
  p.update.w_gate = w.at("velossm_u.gate_w").clone();
  p.update.b_gate = w.at("velossm_u.gate_b").clone();
  for (std::size_t i = 0;; ++i) {
    const std::string prefix = "velossm_u.layers." + std::to_string(i);
    if (!w.contains(prefix + ".w_x")) break;
    p.update.layers.push_back(MambaBlockParams::from_weights(prefix, w));
  }
  p.update.w_head = w.at("velossm_u.head").clone();

  p.cfg.layers = p.predict.layers.size();
  if (!p.predict.layers.empty()) {
    p.cfg.inner_dim = p.predict.layers[0].inner_dim();
    p.cfg.state_dim = p.predict.layers[0].state_dim();
    p.cfg.conv_width = p.predict.layers[0].conv_k.dim(1);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

VeloPredictGraph velossm_predict_graph(const Tensor& velocities,
                                       const Tensor& last_pose,
                                       const VeloSsmParams& p) {
  if (velocities.rank() != 3 || velocities.dim(2) != kPoseDim)
    throw ShapeMismatch("velossm_predict_graph: velocities must be [B,n,10]");
  if (last_pose.rank() != 2 || last_pose.dim(0) != velocities.dim(0) ||
      last_pose.dim(1) != kPoseDim)
    throw ShapeMismatch("velossm_predict_graph: last_pose must be [B,10]");
  const std::size_t n = velocities.dim(1);

  Tensor feat = matmul(velocities, p.predict.w_embed);
  for (const auto& layer : p.predict.layers)
    feat = mamba_block_self(feat, layer, p.cfg.mode);

  const Tensor weights = softmax_axis(matmul(feat, p.predict.w_head), 1);
  VeloPredictGraph out;
  out.velocity = sum_axis(mul(weights, velocities), 1);
  out.pose = boxplus_graph(last_pose, out.velocity);
  out.flow = squeeze(slice(feat, 1, n - 1, 1), 1);
  return out;
}

Tensor velossm_update_graph(const Tensor& pred_vel, const Tensor& obs_vel,
                            const Tensor& prev_pose, const Tensor& confidence,
                            const Tensor& flow, const VeloSsmParams& p) {
  if (pred_vel.rank() != 2 || pred_vel.dim(1) != kPoseDim ||
      obs_vel.shape() != pred_vel.shape())
    throw ShapeMismatch("velossm_update_graph: velocity inputs must be [B,10]");
  const std::size_t B = pred_vel.dim(0);
  if (confidence.rank() != 2 || confidence.dim(0) != B || confidence.dim(1) != 1)
    throw ShapeMismatch("velossm_update_graph: confidence must be [B,1]");

  const Tensor gate = sigmoid(add(matmul(confidence, p.update.w_gate),
                                  broadcast_to(p.update.b_gate,
                                               {B, p.cfg.model_dim})));
  const Tensor pair = concat<double>({pred_vel, obs_vel}, 1);
  Tensor seq = unsqueeze(mul(gate, matmul(pair, p.update.w_embed)), 1);
  for (const auto& layer : p.update.layers)
    seq = mamba_block_cross(seq, flow, layer, p.cfg.mode);

  const Tensor w = sigmoid(matmul(squeeze(seq, 1), p.update.w_head));
  const Tensor ones = Tensor::ones(w.shape());
  const Tensor blended = add(mul(w, obs_vel), mul(sub(ones, w), pred_vel));
  // Rotation slice: normalized linear interpolation, renormalized in boxplus.
  const Tensor vel = concat<double>(
      {quat_normalize_graph(slice(blended, 1, 0, 4)), slice(blended, 1, 4, 6)}, 1);
  return boxplus_graph(prev_pose, vel);
}

namespace {

std::vector<Pose> padded_history(const std::vector<Pose>& history, std::size_t n) {
  if (history.empty()) throw EmptyHistory("velossm_predict: empty history");
  std::vector<Pose> out;
  const std::size_t want = n + 1;
  if (history.size() >= want) {
    out.assign(history.end() - static_cast<std::ptrdiff_t>(want), history.end());
  } else {
    out.assign(want - history.size(), history.front());
    out.insert(out.end(), history.begin(), history.end());
  }
  return out;
}

}  // namespace

VeloPredictResult velossm_predict(const std::vector<Pose>& history,
                                  const VeloSsmParams& p) {
  NoTapeScope quiet;
  const auto poses = padded_history(history, p.cfg.history);
  const std::size_t n = poses.size() - 1;
  std::vector<double> vels;
  vels.reserve(n * kPoseDim);
  for (std::size_t i = 0; i + 1 < poses.size(); ++i) {
    const auto v = state_difference(poses[i], poses[i + 1]).packed();
    vels.insert(vels.end(), v.begin(), v.end());
  }
  const Tensor velocities = reshape(Tensor({n, kPoseDim}, std::move(vels)),
                                    {1, n, kPoseDim});
  const Tensor last = pose_to_tensor(poses.back());
  const auto g = velossm_predict_graph(velocities, last, p);

  VeloPredictResult out;
  out.pose = pose_from_row(g.pose, 0);
  out.velocity = velocity_from_row(g.velocity, 0);
  out.flow = reshape(g.flow, {p.cfg.model_dim});
  return out;
}

Pose velossm_update(const VelocityVec& pred_vel, const VelocityVec& obs_vel,
                    const Pose& prev, double confidence, const Tensor& flow,
                    const VeloSsmParams& p) {
  NoTapeScope quiet;
  const Tensor conf = Tensor({1, 1}, {confidence});
  const Tensor pose =
      velossm_update_graph(velocity_to_tensor(pred_vel),
                           velocity_to_tensor(obs_vel), pose_to_tensor(prev),
                           conf, reshape(flow, {1, p.cfg.model_dim}), p);
  return pose_from_row(pose, 0);
}

Pose constant_velocity_predict(const std::vector<Pose>& history) {
  if (history.empty()) throw EmptyHistory("constant_velocity_predict: empty history");
  if (history.size() == 1) return history.back();
  const auto v = state_difference(history[history.size() - 2], history.back());
  return state_boxplus(history.back(), v);
}

}  // namespace s3mot
