#include "s3mot/gradcheck.hpp"

#include <cmath>
#include <vector>

#include "s3mot/errors.hpp"

namespace s3mot {

namespace {

double eval_scalar(const std::function<Tensor(const Tensor&)>& f,
                   const Tensor& x) {
  const Tensor y = f(x);
  const double v = y.value();
  if (!std::isfinite(v)) throw NonFiniteValue("grad_check: f produced a non-finite value");
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);

  std::vector<double> analytic(probe.size());
  {
    Tape tape;
    const Tensor y = f(probe);
    if (y.size() != 1) throw NonScalarLoss("grad_check: f must be scalar-valued");
    if (!std::isfinite(y.value()))
      throw NonFiniteValue("grad_check: f produced a non-finite value");
    tape.backward(y);
    auto g = probe.grad();
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = g[i];
  }

  double worst = 0.0;
  {
    NoTapeScope quiet;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const double saved = probe.at(i);
      probe.at(i) = saved + h;
      const double fp = eval_scalar(f, probe);
      probe.at(i) = saved - h;
      const double fm = eval_scalar(f, probe);
      probe.at(i) = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double scale =
          std::max(1.0, std::max(std::abs(analytic[i]), std::abs(numeric)));
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
  }
  return worst;
}

}  // namespace s3mot
