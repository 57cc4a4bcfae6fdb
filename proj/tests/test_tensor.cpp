#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "s3mot/gradcheck.hpp"
#include "s3mot/ops.hpp"
#include "s3mot/tensor.hpp"
#include "s3mot/weights.hpp"

using namespace s3mot;

namespace {

Tensor t1(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Shape random_shape(std::mt19937_64& rng, std::size_t max_rank = 4,
                   std::size_t max_dim = 6) {
  std::uniform_int_distribution<std::size_t> rank_dist(1, max_rank);
  std::uniform_int_distribution<std::size_t> dim_dist(1, max_dim);
  Shape s(rank_dist(rng));
  for (auto& d : s) d = dim_dist(rng);
  return s;
}

// N(0,1) samples kept away from |x| < margin so kinked ops (abs, relu,
// clamp) stay numerically differentiable at the probe.
Tensor randn_away_from_zero(const Shape& shape, std::mt19937_64& rng,
                            double margin = 5e-2) {
  Tensor x = randn<double>(shape, rng);
  for (auto& v : x.data())
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  return x;
}

}  // namespace

TEST_CASE("matmul basics") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor v({2, 1}, {3, 4});
  auto r = matmul(eye, v);
  CHECK(r.at(0) == 3.0);
  CHECK(r.at(1) == 4.0);

  Tensor a({1, 2}, {1, 2});
  auto r2 = matmul(a, v);
  CHECK(r2.value() == 11.0);

  Tensor z = Tensor::zeros({2, 3});
  auto r3 = matmul(eye, z);
  for (std::size_t i = 0; i < r3.size(); ++i) CHECK(r3.at(i) == 0.0);

  CHECK_THROWS_AS(matmul(a, a), ShapeMismatch);
}

TEST_CASE("matmul batched against flat loops") {
  std::mt19937_64 rng(7);
  Tensor a = randn<double>({3, 4, 5}, rng);
  Tensor b = randn<double>({3, 5, 2}, rng);
  auto y = matmul(a, b);
  REQUIRE(y.shape() == Shape{3, 4, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t r = 0; r < 2; ++r) {
        double acc = 0;
        for (std::size_t q = 0; q < 5; ++q)
          acc += a.at((i * 4 + p) * 5 + q) * b.at((i * 5 + q) * 2 + r);
        CHECK(y.at((i * 4 + p) * 2 + r) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("activation values") {
  CHECK(sigmoid(Tensor::scalar(0.0)).value() == 0.5);
  CHECK(silu(Tensor::scalar(0.0)).value() == 0.0);
  CHECK(softplus(Tensor::scalar(0.0)).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // overflow-safe forms
  CHECK(std::isfinite(softplus(Tensor::scalar(1e4)).value()));
  CHECK(softplus(Tensor::scalar(1e4)).value() == doctest::Approx(1e4));
  CHECK(sigmoid(Tensor::scalar(-1e4)).value() == doctest::Approx(0.0));
}

TEST_CASE("softmax_axis") {
  auto u = softmax_axis(t1({0, 0, 0}), 0);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  auto v = softmax_axis(t1({std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
  CHECK(v.at(0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(v.at(1) == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(v.at(2) == doctest::Approx(3.0 / 6).epsilon(1e-12));

  auto w = softmax_axis(t1({1000, 0, 0}), 0);
  CHECK(w.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w.at(1) == doctest::Approx(0.0));

  CHECK_THROWS_AS(softmax_axis(t1({1, 2}), 3), AxisOutOfRange);
}

TEST_CASE("softmax sums to one along the axis") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Shape shape = random_shape(rng);
    std::uniform_int_distribution<std::size_t> ax(0, shape.size() - 1);
    const std::size_t axis = ax(rng);
    Tensor x = randn<double>(shape, rng, 5.0);
    Tensor y = softmax_axis(x, axis);
    Tensor sums = sum_axis(y, axis);
    for (std::size_t i = 0; i < sums.size(); ++i)
      CHECK(std::abs(sums.at(i) - 1.0) <= 1e-12);
  }
}

TEST_CASE("rmsnorm") {
  Tensor g1 = Tensor::ones({4});
  auto y = rmsnorm(t1({1, 1, 1, 1}), g1);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(y.at(i) == doctest::Approx(1.0).epsilon(1e-6));

  auto y2 = rmsnorm(t1({2, 2}), Tensor::ones({2}));
  CHECK(y2.at(0) == doctest::Approx(1.0).epsilon(1e-6));

  auto y3 = rmsnorm(t1({0, 0, 0}), Tensor::ones({3}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(y3.at(i) == 0.0);
}

TEST_CASE("layernorm") {
  Tensor g = Tensor::ones({2});
  Tensor b = Tensor::zeros({2});
  auto y = layernorm(t1({5, 5}), g, b);
  CHECK(y.at(0) == doctest::Approx(0.0));
  CHECK(y.at(1) == doctest::Approx(0.0));

  auto y2 = layernorm(t1({1, 3}), g, b);
  CHECK(y2.at(0) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y2.at(1) == doctest::Approx(1.0).epsilon(1e-6));

  auto y3 = layernorm(t1({-1, 1}), g, t1({5, 5}));
  CHECK(y3.at(0) == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(y3.at(1) == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("conv1d_depthwise") {
  // delta kernel is the identity, bit for bit
  std::mt19937_64 rng(3);
  Tensor x = randn<double>({2, 5, 3}, rng);
  Tensor delta({3, 3}, {0, 1, 0, 0, 1, 0, 0, 1, 0});
  auto y = conv1d_depthwise(x, delta);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.at(i) == x.at(i));

  Tensor ones_x({1, 3, 1}, {1, 1, 1});
  Tensor k({1, 3}, {1, 1, 1});
  auto y2 = conv1d_depthwise(ones_x, k);
  CHECK(y2.at(0) == 2.0);
  CHECK(y2.at(1) == 3.0);
  CHECK(y2.at(2) == 2.0);

  auto y3 = conv1d_depthwise(Tensor::zeros({1, 4, 2}), randn<double>({2, 3}, rng));
  for (std::size_t i = 0; i < y3.size(); ++i) CHECK(y3.at(i) == 0.0);

  CHECK_THROWS_AS(conv1d_depthwise(x, Tensor::zeros({3, 4})), ShapeMismatch);
}

TEST_CASE("conv1d causal padding") {
  Tensor x({1, 4, 1}, {1, 2, 3, 4});
  Tensor k({1, 3}, {1, 1, 1});
  auto y = conv1d_depthwise(x, k, Pad1d::Causal);
  CHECK(y.at(0) == 1.0);
  CHECK(y.at(1) == 3.0);
  CHECK(y.at(2) == 6.0);
  CHECK(y.at(3) == 9.0);
}

TEST_CASE("conv2d") {
  std::mt19937_64 rng(5);
  Tensor x = randn<double>({1, 2, 3, 4}, rng);

  // 1x1 identity over channels
  Tensor eye({2, 2, 1, 1}, {1, 0, 0, 1});
  auto y = conv2d(x, eye);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.at(i) == x.at(i));

  // 1x1 channel mix [alpha, beta]
  Tensor mix({1, 2, 1, 1}, {2.0, -3.0});
  auto y2 = conv2d(x, mix);
  for (std::size_t px = 0; px < 12; ++px)
    CHECK(y2.at(px) ==
          doctest::Approx(2.0 * x.at(px) - 3.0 * x.at(12 + px)).epsilon(1e-12));

  auto y3 = conv2d(x, Tensor::zeros({3, 2, 3, 3}));
  for (std::size_t i = 0; i < y3.size(); ++i) CHECK(y3.at(i) == 0.0);
}

TEST_CASE("backward basics") {
  // loss = sum(x) -> grad ones
  Tensor x = t1({1, 2, 3});
  x.set_requires_grad(true);
  {
    Tape tape;
    auto loss = sum(x);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);

  // loss = sum(x^2) at [1,2] -> grad [2,4]
  Tensor x2 = t1({1, 2});
  x2.set_requires_grad(true);
  {
    Tape tape;
    auto loss = sum(mul(x2, x2));
    tape.backward(loss);
  }
  CHECK(x2.grad()[0] == 2.0);
  CHECK(x2.grad()[1] == 4.0);

  // disconnected tensor stays at zero grad
  Tensor other = t1({7});
  other.set_requires_grad(true);
  {
    Tape tape;
    auto a = t1({1});
    auto unused = mul_scalar(other, 2.0);
    auto loss = sum(a);
    tape.backward(loss);
  }
  CHECK_FALSE(other.has_grad());
}

TEST_CASE("backward accumulates; replay doubles") {
  Tensor x = t1({1.5, -2.0});
  x.set_requires_grad(true);
  Tape tape;
  auto loss = sum(mul(x, x));
  tape.backward(loss);
  const double g0 = x.grad()[0], g1 = x.grad()[1];
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0 * g0);
  CHECK(x.grad()[1] == 2.0 * g1);
  x.zero_grad();
  tape.backward(loss);
  CHECK(x.grad()[0] == g0);
  CHECK(x.grad()[1] == g1);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = t1({1, 2});
  Tape tape;
  auto y = mul_scalar(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), NonScalarLoss);
}

TEST_CASE("grad_check reference cases") {
  std::mt19937_64 rng(17);
  Tensor x = randn<double>({5}, rng);

  const double e_sig = grad_check(
      [](const Tensor& t) { return sum(sigmoid(t)); }, x);
  CHECK(e_sig <= 1e-6);

  const double e_lin = grad_check(
      [](const Tensor& t) { return sum(mul_scalar(t, 3.0)); }, x);
  CHECK(e_lin <= 1e-10);

  const double e_quad = grad_check(
      [](const Tensor& t) { return sum(mul(t, t)); }, x);
  CHECK(e_quad <= 1e-8);

  CHECK_THROWS_AS(grad_check(
      [](const Tensor& t) { return log(sum(mul_scalar(t, 0.0))); }, x),
      NonFiniteValue);
}

TEST_CASE("gradient property: every op within 1e-4 over random inputs") {
  std::mt19937_64 rng(2024);
  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    bool away_from_zero = false;
    bool positive = false;
  };

  std::mt19937_64 aux(99);
  std::vector<Case> cases;
  cases.push_back({"add", [&](const Tensor& x) {
    return sum(add(x, mul_scalar(x, 0.5)));
  }});
  cases.push_back({"sub", [](const Tensor& x) {
    return sum(sub(x, mul_scalar(x, 2.0)));
  }});
  cases.push_back({"mul", [](const Tensor& x) { return sum(mul(x, x)); }});
  cases.push_back({"div", [](const Tensor& x) {
    return sum(div(x, add_scalar(mul(x, x), 1.0)));
  }});
  cases.push_back({"add_scalar", [](const Tensor& x) {
    return sum(add_scalar(x, 2.5));
  }});
  cases.push_back({"mul_scalar", [](const Tensor& x) {
    return sum(mul_scalar(x, -1.7));
  }});
  cases.push_back({"pow_scalar", [](const Tensor& x) {
    return sum(pow_scalar(add_scalar(mul(x, x), 1.0), 1.7));
  }});
  cases.push_back({"exp", [](const Tensor& x) { return sum(exp(x)); }});
  cases.push_back({"log", [](const Tensor& x) {
    return sum(log(add_scalar(mul(x, x), 1.0)));
  }});
  cases.push_back({"log1p", [](const Tensor& x) {
    return sum(log1p(mul(x, x)));
  }});
  cases.push_back({"expm1", [](const Tensor& x) { return sum(expm1(x)); }});
  cases.push_back({"sqrt", [](const Tensor& x) {
    return sum(sqrt(add_scalar(mul(x, x), 0.5)));
  }});
  cases.push_back({"abs", [](const Tensor& x) { return sum(abs(x)); }, true});
  cases.push_back({"tanh", [](const Tensor& x) { return sum(tanh(x)); }});
  cases.push_back({"sigmoid", [](const Tensor& x) { return sum(sigmoid(x)); }});
  cases.push_back({"silu", [](const Tensor& x) { return sum(silu(x)); }});
  cases.push_back({"softplus", [](const Tensor& x) { return sum(softplus(x)); }});
  cases.push_back({"relu", [](const Tensor& x) { return sum(relu(x)); }, true});
  cases.push_back({"clamp", [](const Tensor& x) {
    return sum(clamp(x, -0.75, 0.75));
  }, true});
  cases.push_back({"clamp_min", [](const Tensor& x) {
    return sum(clamp_min(x, 0.0));
  }, true});
  cases.push_back({"reshape", [](const Tensor& x) {
    return sum(mul(reshape(x, {x.size()}), reshape(x, {x.size()})));
  }});
  cases.push_back({"flip", [](const Tensor& x) {
    return sum(mul(flip(x, 0), x));
  }});
  cases.push_back({"sum_axis", [](const Tensor& x) {
    return sum(mul(sum_axis(x, 0), sum_axis(x, 0)));
  }});
  cases.push_back({"mean", [](const Tensor& x) { return mean(mul(x, x)); }});
  cases.push_back({"softmax", [](const Tensor& x) {
    return sum(mul(softmax_axis(x, 0), softmax_axis(x, 0)));
  }});
  cases.push_back({"broadcast", [](const Tensor& x) {
    Shape target = x.shape();
    target.insert(target.begin(), 3);
    return sum(mul(broadcast_to(x, target), broadcast_to(x, target)));
  }});
  cases.push_back({"slice_concat", [](const Tensor& x) {
    const std::size_t n = x.dim(0);
    if (n < 2) return sum(mul(x, x));
    auto a = slice(x, 0, 0, 1);
    auto b = slice(x, 0, 1, n - 1);
    return sum(mul(concat<double>({b, a}, 0), x));
  }});
  cases.push_back({"permute", [](const Tensor& x) {
    std::vector<std::size_t> perm(x.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
    return sum(mul(permute(x, perm), permute(x, perm)));
  }});
  cases.push_back({"gather_rows", [](const Tensor& x) {
    std::vector<std::size_t> idx = {0, 0, x.dim(0) - 1};
    return sum(mul(gather_rows(x, idx), gather_rows(x, idx)));
  }});

  for (const auto& c : cases) {
    for (int t = 0; t < 20; ++t) {
      Shape shape = random_shape(rng);
      Tensor x = c.away_from_zero ? randn_away_from_zero(shape, rng)
                                  : randn<double>(shape, rng);
      const double err = grad_check(c.f, x);
      INFO(c.name << " trial " << t << " shape " << shape_str(shape));
      CHECK(err <= 1e-4);
    }
  }

  // shape-constrained ops
  for (int t = 0; t < 20; ++t) {
    Tensor x = randn<double>({2, 5, 3}, rng);
    Tensor k = randn<double>({3, 3}, rng);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(conv1d_depthwise(v, k), conv1d_depthwise(v, k)));
    }, x) <= 1e-4);
    CHECK(grad_check([&](const Tensor& kk) {
      return sum(conv1d_depthwise(x, kk, Pad1d::Causal));
    }, k) <= 1e-4);

    Tensor img = randn<double>({2, 3, 4, 3}, rng);
    Tensor k2 = randn<double>({2, 3, 3, 3}, rng);
    Tensor bias = randn<double>({2}, rng);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(conv2d(v, k2, &bias), conv2d(v, k2, &bias)));
    }, img) <= 1e-4);
    CHECK(grad_check([&](const Tensor& kk) {
      return sum(conv2d(img, kk, &bias));
    }, k2) <= 1e-4);
    CHECK(grad_check([&](const Tensor& bb) {
      return sum(mul(conv2d(img, k2, &bb), conv2d(img, k2, &bb)));
    }, bias) <= 1e-4);

    Tensor kd = randn<double>({3, 3, 3}, rng);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(conv2d_depthwise(v, kd), conv2d_depthwise(v, kd)));
    }, img) <= 1e-4);

    Tensor a = randn<double>({3, 4}, rng);
    Tensor b = randn<double>({4, 2}, rng);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(matmul(v, b), matmul(v, b)));
    }, a) <= 1e-4);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(matmul(a, v), matmul(a, v)));
    }, b) <= 1e-4);

    Tensor batched = randn<double>({2, 3, 4}, rng);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(matmul(batched, v));
    }, b) <= 1e-4);

    Tensor g = randn<double>({4}, rng);
    Tensor bb = randn<double>({4}, rng);
    Tensor rows = randn<double>({3, 4}, rng);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(rmsnorm(v, g), rmsnorm(v, g)));
    }, rows) <= 1e-4);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(rmsnorm(rows, v), rmsnorm(rows, v)));
    }, g) <= 1e-4);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(layernorm(v, g, bb), layernorm(v, g, bb)));
    }, rows) <= 1e-4);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(layernorm(rows, v, bb), layernorm(rows, v, bb)));
    }, g) <= 1e-4);
    CHECK(grad_check([&](const Tensor& v) {
      return sum(mul(layernorm(rows, g, v), layernorm(rows, g, v)));
    }, bb) <= 1e-4);
  }
}

TEST_CASE("weight container round trip is bit exact") {
  std::mt19937_64 rng(31);
  WeightMap w;
  w.put("ssm.0.a_log", randn<double>({4, 3}, rng));
  w.put("velossm_p.embed", randn<double>({10, 8}, rng));
  w.put("odd \xcf\x80 name", randn<double>({2, 2, 2, 2}, rng, 1e-300));
  w.put("scalarish", Tensor::scalar(-0.0));

  const std::string path = "test_weights_roundtrip.s3mw";
  w.save(path);
  WeightMap r = WeightMap::load(path);
  REQUIRE(r.size() == w.size());
  for (const auto& [name, t] : w.entries()) {
    REQUIRE(r.contains(name));
    const Tensor& u = r.at(name);
    REQUIRE(u.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      // bit-exact, including signed zero
      const double a = u.at(i), b = t.at(i);
      CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
    }
  }
  std::remove(path.c_str());
}
