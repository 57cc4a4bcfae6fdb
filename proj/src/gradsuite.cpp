#include "s3mot/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include "s3mot/fcoe.hpp"
#include "s3mot/gradcheck.hpp"
#include "s3mot/hssm.hpp"
#include "s3mot/ops.hpp"
#include "s3mot/ssm.hpp"
#include "s3mot/train.hpp"
#include "s3mot/velossm.hpp"

namespace s3mot {

namespace {

Shape random_shape(std::mt19937_64& rng, std::size_t max_rank = 4,
                   std::size_t max_dim = 6) {
  std::uniform_int_distribution<std::size_t> rank_dist(1, max_rank);
  std::uniform_int_distribution<std::size_t> dim_dist(1, max_dim);
  Shape s(rank_dist(rng));
  for (auto& d : s) d = dim_dist(rng);
  return s;
}

Tensor randn_off_kinks(const Shape& shape, std::mt19937_64& rng,
                       double margin = 5e-2) {
  Tensor x = randn<double>(shape, rng);
  for (auto& v : x.data())
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  return x;
}

struct SuiteRunner {
  std::size_t seeds;
  std::mt19937_64 rng;
  double tol;
  GradSuiteResult* result;
  std::ostream* log;

  void run(const std::string& name,
           const std::function<double(std::mt19937_64&)>& one_trial) {
    GradSuiteCase c;
    c.name = name;
    c.tol = tol;
    for (std::size_t s = 0; s < seeds; ++s)
      c.max_error = std::max(c.max_error, one_trial(rng));
    c.pass = c.max_error <= c.tol;
    if (!c.pass) result->all_pass = false;
    if (log)
      (*log) << (c.pass ? "  ok   " : "  FAIL ") << name
             << "  max_err=" << c.max_error << "\n";
    result->cases.push_back(std::move(c));
  }

  // common pattern: f over a random free-shape input
  void run_simple(const std::string& name,
                  const std::function<Tensor(const Tensor&)>& f,
                  bool off_kinks = false) {
    run(name, [this, f, off_kinks](std::mt19937_64& r) {
      const Shape shape = random_shape(r);
      const Tensor x = off_kinks ? randn_off_kinks(shape, r) : randn<double>(shape, r);
      return grad_check(f, x);
    });
  }
};

}  // namespace

GradSuiteResult run_gradient_suite(std::size_t seeds, std::uint64_t master_seed,
                                   double tol, std::ostream* log) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteResult result;
  SuiteRunner s{seeds, std::mt19937_64(master_seed), tol, &result, log};

  // --- elementwise and scalar ops ---
  s.run_simple("add", [](const Tensor& x) { return sum(add(x, mul_scalar(x, 0.3))); });
  s.run_simple("sub", [](const Tensor& x) { return sum(sub(x, mul_scalar(x, 2.0))); });
  s.run_simple("mul", [](const Tensor& x) { return sum(mul(x, x)); });
  s.run_simple("div", [](const Tensor& x) {
    return sum(div(x, add_scalar(mul(x, x), 1.0)));
  });
  s.run_simple("add_scalar", [](const Tensor& x) { return sum(add_scalar(x, 2.5)); });
  s.run_simple("mul_scalar", [](const Tensor& x) { return sum(mul_scalar(x, -1.7)); });
  s.run_simple("pow_scalar", [](const Tensor& x) {
    return sum(pow_scalar(add_scalar(mul(x, x), 1.0), 1.7));
  });
  s.run_simple("exp", [](const Tensor& x) { return sum(exp(x)); });
  s.run_simple("log", [](const Tensor& x) {
    return sum(log(add_scalar(mul(x, x), 1.0)));
  });
  s.run_simple("log1p", [](const Tensor& x) { return sum(log1p(mul(x, x))); });
  s.run_simple("expm1", [](const Tensor& x) { return sum(expm1(x)); });
  s.run_simple("sqrt", [](const Tensor& x) {
    return sum(sqrt(add_scalar(mul(x, x), 0.5)));
  });
  s.run_simple("abs", [](const Tensor& x) { return sum(abs(x)); }, true);
  s.run_simple("tanh", [](const Tensor& x) { return sum(tanh(x)); });
  s.run_simple("sigmoid", [](const Tensor& x) { return sum(sigmoid(x)); });
  s.run_simple("silu", [](const Tensor& x) { return sum(silu(x)); });
  s.run_simple("softplus", [](const Tensor& x) { return sum(softplus(x)); });
  s.run_simple("relu", [](const Tensor& x) { return sum(relu(x)); }, true);
  s.run_simple("clamp", [](const Tensor& x) { return sum(clamp(x, -0.75, 0.75)); },
               true);
  s.run_simple("clamp_min", [](const Tensor& x) { return sum(clamp_min(x, 0.0)); },
               true);

  // --- shape ops ---
  s.run_simple("reshape", [](const Tensor& x) {
    return sum(mul(reshape(x, {x.size()}), reshape(x, {x.size()})));
  });
  s.run_simple("flip", [](const Tensor& x) { return sum(mul(flip(x, 0), x)); });
  s.run_simple("permute", [](const Tensor& x) {
    std::vector<std::size_t> perm(x.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
    return sum(mul(permute(x, perm), permute(x, perm)));
  });
  s.run_simple("slice_concat", [](const Tensor& x) {
    const std::size_t n = x.dim(0);
    if (n < 2) return sum(mul(x, x));
    return sum(mul(concat<double>({slice(x, 0, 1, n - 1), slice(x, 0, 0, 1)}, 0), x));
  });
  s.run_simple("broadcast_to", [](const Tensor& x) {
    Shape target = x.shape();
    target.insert(target.begin(), 3);
    return sum(mul(broadcast_to(x, target), broadcast_to(x, target)));
  });
  s.run_simple("gather_rows", [](const Tensor& x) {
    std::vector<std::size_t> idx = {0, 0, x.dim(0) - 1};
    return sum(mul(gather_rows(x, idx), gather_rows(x, idx)));
  });
  s.run_simple("sum_axis", [](const Tensor& x) {
    return sum(mul(sum_axis(x, 0), sum_axis(x, 0)));
  });
  s.run_simple("mean", [](const Tensor& x) { return mean(mul(x, x)); });
  s.run_simple("softmax_axis", [](const Tensor& x) {
    return sum(mul(softmax_axis(x, 0), softmax_axis(x, 0)));
  });

  // --- structured ops ---
  s.run("matmul", [](std::mt19937_64& r) {
    const Tensor a = randn<double>({3, 4}, r);
    const Tensor b = randn<double>({4, 2}, r);
    const Tensor batched = randn<double>({2, 3, 4}, r);
    double e = grad_check(
        [&](const Tensor& v) { return sum(mul(matmul(v, b), matmul(v, b))); }, a);
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return sum(mul(matmul(a, v), matmul(a, v))); }, b));
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return sum(matmul(batched, v)); }, b));
    return e;
  });
  s.run("rmsnorm", [](std::mt19937_64& r) {
    const Tensor x = randn<double>({3, 5}, r);
    const Tensor g = randn<double>({5}, r);
    double e = grad_check(
        [&](const Tensor& v) { return sum(mul(rmsnorm(v, g), rmsnorm(v, g))); }, x);
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return sum(mul(rmsnorm(x, v), rmsnorm(x, v))); }, g));
    return e;
  });
  s.run("layernorm", [](std::mt19937_64& r) {
    const Tensor x = randn<double>({3, 5}, r);
    const Tensor g = randn<double>({5}, r);
    const Tensor b = randn<double>({5}, r);
    double e = grad_check(
        [&](const Tensor& v) {
          return sum(mul(layernorm(v, g, b), layernorm(v, g, b)));
        },
        x);
    e = std::max(e, grad_check(
        [&](const Tensor& v) {
          return sum(mul(layernorm(x, v, b), layernorm(x, v, b)));
        },
        g));
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return sum(layernorm(x, g, v)); }, b));
    return e;
  });
  s.run("conv1d_depthwise", [](std::mt19937_64& r) {
    const Tensor x = randn<double>({2, 5, 3}, r);
    const Tensor k = randn<double>({3, 3}, r);
    double e = grad_check(
        [&](const Tensor& v) {
          return sum(mul(conv1d_depthwise(v, k), conv1d_depthwise(v, k)));
        },
        x);
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return sum(conv1d_depthwise(x, v, Pad1d::Causal)); },
        k));
    return e;
  });
  s.run("conv2d", [](std::mt19937_64& r) {
    const Tensor x = randn<double>({1, 3, 4, 3}, r);
    const Tensor k = randn<double>({2, 3, 3, 3}, r);
    const Tensor b = randn<double>({2}, r);
    double e = grad_check(
        [&](const Tensor& v) {
          return sum(mul(conv2d(v, k, &b), conv2d(v, k, &b)));
        },
        x);
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return sum(mul(conv2d(x, v), conv2d(x, v))); }, k));
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return sum(mul(conv2d(x, k, &v), conv2d(x, k, &v))); },
        b));
    return e;
  });
  s.run("conv2d_depthwise", [](std::mt19937_64& r) {
    const Tensor x = randn<double>({1, 3, 4, 3}, r);
    const Tensor k = randn<double>({3, 3, 3}, r);
    double e = grad_check(
        [&](const Tensor& v) {
          return sum(mul(conv2d_depthwise(v, k), conv2d_depthwise(v, k)));
        },
        x);
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return sum(conv2d_depthwise(x, v)); }, k));
    return e;
  });

  // --- ssm primitives ---
  s.run("discretize", [](std::mt19937_64& r) {
    const std::size_t D = 3, N = 4;
    const Tensor a_log = rand_uniform<double>({D, N}, r, std::log(0.5), std::log(8.0));
    const Tensor B = randn<double>({2, 5, N}, r);
    const Tensor draw = randn<double>({2, 5, D}, r);
    double e = 0.0;
    for (const auto mode : {Discretization::Euler, Discretization::Zoh}) {
      e = std::max(e, grad_check(
          [&](const Tensor& v) {
            auto [Abar, Bbar] =
                discretize(neg(exp(a_log)), B, add_scalar(softplus(v), 0.01), mode);
            return sum(add(mul(Abar, Abar), mul(Bbar, Bbar)));
          },
          draw));
      e = std::max(e, grad_check(
          [&](const Tensor& v) {
            auto [Abar, Bbar] =
                discretize(neg(exp(v)), B, add_scalar(softplus(draw), 0.01), mode);
            return sum(add(sum(mul(Abar, Abar)), sum(mul(Bbar, Bbar))));
          },
          a_log));
      e = std::max(e, grad_check(
          [&](const Tensor& v) {
            auto [Abar, Bbar] =
                discretize(neg(exp(a_log)), v, add_scalar(softplus(draw), 0.01), mode);
            return sum(mul(Bbar, Bbar));
          },
          B));
    }
    return e;
  });
  s.run("selective_scan", [](std::mt19937_64& r) {
    const std::size_t B = 2, L = 5, D = 3, N = 4;
    const Tensor Abar = rand_uniform<double>({B, L, D, N}, r, -0.9, 0.9);
    const Tensor Bbar = randn<double>({B, L, D, N}, r);
    const Tensor C = randn<double>({B, L, N}, r);
    const Tensor u = randn<double>({B, L, D}, r);
    auto loss_of = [&](const Tensor& y) { return sum(mul(y, y)); };
    double e = grad_check(
        [&](const Tensor& v) { return loss_of(selective_scan(v, Bbar, C, u)); },
        Abar);
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return loss_of(selective_scan(Abar, v, C, u)); },
        Bbar));
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return loss_of(selective_scan(Abar, Bbar, v, u)); },
        C));
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return loss_of(selective_scan(Abar, Bbar, C, v)); },
        u));
    return e;
  });
  s.run("mamba_block_self", [](std::mt19937_64& r) {
    const MambaBlockParams p = MambaBlockParams::init(8, 16, 4, 16, 3, r);
    const Tensor seq = randn<double>({2, 6, 8}, r);
    return grad_check(
        [&](const Tensor& v) {
          const Tensor y = mamba_block_self(v, p);
          return sum(mul(y, y));
        },
        seq);
  });
  s.run("mamba_block_cross", [](std::mt19937_64& r) {
    const MambaBlockParams p = MambaBlockParams::init(8, 16, 4, 8, 3, r);
    const Tensor seq = randn<double>({2, 1, 8}, r);
    const Tensor cond = randn<double>({2, 8}, r);
    double e = grad_check(
        [&](const Tensor& v) {
          const Tensor y = mamba_block_cross(v, cond, p);
          return sum(mul(y, y));
        },
        seq);
    e = std::max(e, grad_check(
        [&](const Tensor& v) {
          const Tensor y = mamba_block_cross(seq, v, p);
          return sum(mul(y, y));
        },
        cond));
    return e;
  });

  // --- end-to-end composition 1: prediction network -> corner loss ---
  s.run("velossm_predict->corner_loss", [](std::mt19937_64& r) {
    VeloSsmConfig cfg;
    cfg.model_dim = 16;
    cfg.inner_dim = 32;
    cfg.state_dim = 8;
    cfg.layers = 4;
    cfg.history = 4;
    const VeloSsmParams params = VeloSsmParams::init(cfg, r);
    Tensor vel = randn<double>({1, 4, 10}, r, 0.3);
    Tensor last({1, 10}, {1, 0, 0, 0, 0.5, -1.0, 0.7, 1.8, 4.2, 1.5});
    Tensor gt({1, 10},
              {std::cos(0.2), 0, 0, std::sin(0.2), 0.9, -0.6, 0.7, 1.9, 4.0, 1.6});
    auto loss = [&](const Tensor& velocities) {
      const auto out = velossm_predict_graph(velocities, last, params);
      return disentangled_l1_loss_graph(gt, out.pose);
    };
    double e = grad_check(loss, vel);
    e = std::max(e, grad_check(
        [&](const Tensor& head) {
          VeloSsmParams p2 = params;
          p2.predict.w_head = head;
          const auto out = velossm_predict_graph(vel, last, p2);
          return disentangled_l1_loss_graph(gt, out.pose);
        },
        params.predict.w_head));
    return e;
  });

  // --- end-to-end composition 2: association network -> focal loss ---
  s.run("hssm_forward->focal_loss", [](std::mt19937_64& r) {
    HssmConfig cfg;
    cfg.base_dim = 8;
    cfg.state_dim = 8;
    const HssmParams params = HssmParams::init(cfg, r);
    const Tensor distance = rand_uniform<double>({4, 4, 5}, r, 0.0, 1.0);
    Tensor gt = Tensor::zeros({4, 5});
    std::uniform_int_distribution<std::size_t> col(0, 4);
    for (std::size_t i = 0; i < 4; ++i) gt.at(i * 5 + col(r)) = 1.0;
    auto loss = [&](const Tensor& d) {
      return focal_assoc_loss(hssm_forward(d, params), gt, 2.0);
    };
    double e = grad_check(loss, distance);
    e = std::max(e, grad_check(
        [&](const Tensor& head) {
          HssmParams p2 = params;
          p2.head_w = head;
          return focal_assoc_loss(hssm_forward(distance, p2), gt, 2.0);
        },
        params.head_w));
    return e;
  });

  // --- end-to-end composition 3: dense-embedding loss ---
  s.run("fcoe_loss", [](std::mt19937_64& r) {
    EmbeddingMapSpec spec;
    spec.height = 5;
    spec.width = 5;
    spec.embed_dim = 6;
    spec.objects = 2;
    spec.seed = r();
    auto [key, ref] = synth_embedding_maps(spec);
    std::mt19937_64 sample_rng(r());
    const SampledPairs pairs = sample_pairs(key, ref, 4, sample_rng);
    const Tensor key_emb = randn<double>({key.cells(), key.embed_dim}, r);
    const Tensor ref_emb = randn<double>({ref.cells(), ref.embed_dim}, r);
    double e = grad_check(
        [&](const Tensor& v) { return fcoe_loss(v, ref_emb, pairs); }, key_emb);
    e = std::max(e, grad_check(
        [&](const Tensor& v) { return fcoe_loss(key_emb, v, pairs); }, ref_emb));
    return e;
  });

  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace s3mot
