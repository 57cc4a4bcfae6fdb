#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "s3mot/tensor.hpp"

// Differentiable free functions over TensorT. Every op computes its output
// eagerly and, when a tape is active, records a closure that maps the
// output's sweep gradient onto the inputs' sweep gradients.

namespace s3mot {

namespace detail {

template <class S>
void record(TensorT<S> out, std::vector<TensorT<S>> inputs,
            typename TapeT<S>::BackwardFn fn) {
  if (auto* tape = TapeT<S>::active())
    tape->record(std::move(out), std::move(inputs), std::move(fn));
}

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b,
                      const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()) + " differ");
}

inline std::size_t checked_axis(std::size_t rank, std::size_t axis,
                                const char* op) {
  if (axis >= rank)
    throw AxisOutOfRange(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  return axis;
}

template <class S>
using MatMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "add");
  TensorT<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) + b.at(i);
  detail::record<S>(out, {a, b}, [a, b, out](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    auto gb = g.slot(b);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      ga[i] += gy[i];
      gb[i] += gy[i];
    }
  });
  return out;
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "sub");
  TensorT<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) - b.at(i);
  detail::record<S>(out, {a, b}, [a, b, out](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    auto gb = g.slot(b);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      ga[i] += gy[i];
      gb[i] -= gy[i];
    }
  });
  return out;
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "mul");
  TensorT<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) * b.at(i);
  detail::record<S>(out, {a, b}, [a, b, out](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    auto gb = g.slot(b);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      ga[i] += gy[i] * b.at(i);
      gb[i] += gy[i] * a.at(i);
    }
  });
  return out;
}

template <class S>
TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "div");
  TensorT<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) / b.at(i);
  detail::record<S>(out, {a, b}, [a, b, out](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    auto gb = g.slot(b);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const S inv = S(1) / b.at(i);
      ga[i] += gy[i] * inv;
      gb[i] -= gy[i] * a.at(i) * inv * inv;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Scalar and unary
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
  TensorT<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) + c;
  detail::record<S>(out, {a}, [a, out](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
  return out;
}

template <class S>
TensorT<S> mul_scalar(const TensorT<S>& a, S c) {
  TensorT<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) * c;
  detail::record<S>(out, {a}, [a, out, c](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += c * gy[i];
  });
  return out;
}

template <class S>
TensorT<S> neg(const TensorT<S>& a) {
  return mul_scalar(a, S(-1));
}

// x^p for x > 0 (or integral p); backward p*x^(p-1).
template <class S>
TensorT<S> pow_scalar(const TensorT<S>& a, S p) {
  TensorT<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.at(i) = std::pow(a.at(i), p);
  detail::record<S>(out, {a}, [a, out, p](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t i = 0; i < gy.size(); ++i)
      ga[i] += gy[i] * p * std::pow(a.at(i), p - S(1));
  });
  return out;
}

namespace detail {

// Shared pattern for unary elementwise ops: fwd(x) and dfdx expressed from
// (x, y) so backward can reuse the forward value.
template <class S, class Fwd, class Dfdx>
TensorT<S> unary_op(const TensorT<S>& a, Fwd fwd, Dfdx dfdx) {
  TensorT<S> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = fwd(a.at(i));
  detail::record<S>(out, {a}, [a, out, dfdx](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t i = 0; i < gy.size(); ++i)
      ga[i] += gy[i] * dfdx(a.at(i), out.at(i));
  });
  return out;
}

template <class S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

template <class S>
TensorT<S> exp(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
TensorT<S> log(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
TensorT<S> log1p(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::log1p(x); },
      [](S x, S) { return S(1) / (S(1) + x); });
}

template <class S>
TensorT<S> expm1(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::expm1(x); }, [](S, S y) { return y + S(1); });
}

template <class S>
TensorT<S> sqrt(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::sqrt(x); },
      [](S, S y) { return S(1) / (S(2) * y); });
}

template <class S>
TensorT<S> abs(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::abs(x); },
      [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <class S>
TensorT<S> tanh(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::tanh(x); },
      [](S, S y) { return S(1) - y * y; });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return detail::stable_sigmoid(x); },
      [](S, S y) { return y * (S(1) - y); });
}

template <class S>
TensorT<S> silu(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x * detail::stable_sigmoid(x); },
      [](S x, S) {
        const S s = detail::stable_sigmoid(x);
        return s + x * s * (S(1) - s);
      });
}

// softplus(x) = max(x,0) + log1p(exp(-|x|)); overflow-safe, d/dx = sigmoid.
template <class S>
TensorT<S> softplus(const TensorT<S>& a) {
  return detail::unary_op(
      a,
      [](S x) { return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x))); },
      [](S x, S) { return detail::stable_sigmoid(x); });
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

// Gradient passes only strictly inside (lo, hi).
template <class S>
TensorT<S> clamp(const TensorT<S>& a, S lo, S hi) {
  return detail::unary_op(
      a, [lo, hi](S x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](S x, S) { return (x > lo && x < hi) ? S(1) : S(0); });
}

template <class S>
TensorT<S> clamp_min(const TensorT<S>& a, S lo) {
  return detail::unary_op(
      a, [lo](S x) { return std::max(x, lo); },
      [lo](S x, S) { return x > lo ? S(1) : S(0); });
}

enum class Activation { Sigmoid, Silu, Softplus, Exp, Tanh };

template <class S>
TensorT<S> activation(const TensorT<S>& x, Activation kind) {
  switch (kind) {
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Silu: return silu(x);
    case Activation::Softplus: return softplus(x);
    case Activation::Exp: return exp(x);
    case Activation::Tanh: return tanh(x);
  }
  throw std::invalid_argument("unknown activation kind");
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeMismatch("reshape: cannot view " + shape_str(a.shape()) +
                        " as " + shape_str(shape));
  TensorT<S> out(std::move(shape), std::vector<S>(a.data().begin(), a.data().end()));
  detail::record<S>(out, {a}, [a, out](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
  return out;
}

template <class S>
TensorT<S> unsqueeze(const TensorT<S>& a, std::size_t axis) {
  Shape s = a.shape();
  if (axis > s.size()) throw AxisOutOfRange("unsqueeze: axis out of range");
  s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
  return reshape(a, std::move(s));
}

template <class S>
TensorT<S> squeeze(const TensorT<S>& a, std::size_t axis) {
  detail::checked_axis(a.rank(), axis, "squeeze");
  if (a.dim(axis) != 1) throw ShapeMismatch("squeeze: axis extent is not 1");
  Shape s = a.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  if (s.empty()) s.push_back(1);
  return reshape(a, std::move(s));
}

namespace detail {

// Copies src into dst where dst indices are a permutation of src indices.
template <class S>
void permute_copy(std::span<const S> src, const Shape& src_shape,
                  const std::vector<std::size_t>& perm, std::span<S> dst) {
  const std::size_t rank = src_shape.size();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = src_shape[perm[i]];
  const auto sst = row_major_strides(src_shape);
  const auto dstst = row_major_strides(out_shape);
  const std::size_t n = src.size();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    // flat is the destination index; map back to source
    std::size_t rem = flat;
    std::size_t sflat = 0;
    for (std::size_t i = 0; i < rank; ++i) {
      idx[i] = rem / dstst[i];
      rem %= dstst[i];
      sflat += idx[i] * sst[perm[i]];
    }
    dst[flat] = src[sflat];
  }
}

}  // namespace detail

template <class S>
TensorT<S> permute(const TensorT<S>& a, std::vector<std::size_t> perm) {
  if (perm.size() != a.rank())
    throw ShapeMismatch("permute: perm length mismatch");
  std::vector<bool> seen(a.rank(), false);
  for (std::size_t p : perm) {
    if (p >= a.rank() || seen[p]) throw AxisOutOfRange("permute: bad axis list");
    seen[p] = true;
  }
  Shape out_shape(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) out_shape[i] = a.dim(perm[i]);
  TensorT<S> out(out_shape);
  detail::permute_copy<S>(a.data(), a.shape(), perm, out.data());
  detail::record<S>(out, {a}, [a, out, perm](GradTableT<S>& g) mutable {
    // inverse permutation maps output grads back
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    std::vector<S> tmp(a.size());
    detail::permute_copy<S>(std::span<const S>(g.slot(out)), out.shape(), inv,
                            std::span<S>(tmp));
    auto ga = g.slot(a);
    for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
  });
  return out;
}

template <class S>
TensorT<S> slice(const TensorT<S>& a, std::size_t axis, std::size_t start,
                 std::size_t len) {
  detail::checked_axis(a.rank(), axis, "slice");
  if (start + len > a.dim(axis))
    throw ShapeMismatch("slice: window exceeds axis extent");
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  TensorT<S> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t in = 0; in < inner; ++in)
        out.at((o * len + k) * inner + in) =
            a.at((o * a.dim(axis) + start + k) * inner + in);
  detail::record<S>(out, {a},
                    [a, out, axis, start, len, outer, inner](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        for (std::size_t in = 0; in < inner; ++in)
          ga[(o * a.dim(axis) + start + k) * inner + in] +=
              gy[(o * len + k) * inner + in];
  });
  return out;
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeMismatch("concat: no inputs");
  detail::checked_axis(parts[0].rank(), axis, "concat");
  Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank())
      throw ShapeMismatch("concat: rank mismatch");
    for (std::size_t i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != parts[0].dim(i))
        throw ShapeMismatch("concat: off-axis extent mismatch");
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  TensorT<S> out(out_shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t plen = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < plen; ++k)
        for (std::size_t in = 0; in < inner; ++in)
          out.at((o * total + offset + k) * inner + in) =
              p.at((o * plen + k) * inner + in);
    offset += plen;
  }
  detail::record<S>(out, parts,
                    [parts, out, axis, total, outer, inner](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    std::size_t offset = 0;
    for (auto& p : parts) {
      auto gp = g.slot(p);
      const std::size_t plen = p.dim(axis);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < plen; ++k)
          for (std::size_t in = 0; in < inner; ++in)
            gp[(o * plen + k) * inner + in] +=
                gy[(o * total + offset + k) * inner + in];
      offset += plen;
    }
  });
  return out;
}

template <class S>
TensorT<S> flip(const TensorT<S>& a, std::size_t axis) {
  detail::checked_axis(a.rank(), axis, "flip");
  std::size_t outer = 1, inner = 1;
  const std::size_t n = a.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  TensorT<S> out(a.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t in = 0; in < inner; ++in)
        out.at((o * n + k) * inner + in) = a.at((o * n + (n - 1 - k)) * inner + in);
  detail::record<S>(out, {a}, [a, out, n, outer, inner](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t in = 0; in < inner; ++in)
          ga[(o * n + (n - 1 - k)) * inner + in] += gy[(o * n + k) * inner + in];
  });
  return out;
}

// Explicit broadcast (numpy-style right-aligned; source dims must be 1 or
// equal). Backward sums over the expanded axes.
template <class S>
TensorT<S> broadcast_to(const TensorT<S>& a, Shape target) {
  const std::size_t rt = target.size();
  const std::size_t ra = a.rank();
  if (ra > rt)
    throw ShapeMismatch("broadcast_to: source rank exceeds target rank");
  Shape padded(rt, 1);
  for (std::size_t i = 0; i < ra; ++i) padded[rt - ra + i] = a.dim(i);
  for (std::size_t i = 0; i < rt; ++i)
    if (padded[i] != target[i] && padded[i] != 1)
      throw ShapeMismatch("broadcast_to: " + shape_str(a.shape()) +
                          " incompatible with " + shape_str(target));
  const auto tst = row_major_strides(target);
  const auto pst = row_major_strides(padded);
  TensorT<S> out(target);
  const std::size_t n = out.size();
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat, sflat = 0;
    for (std::size_t i = 0; i < rt; ++i) {
      const std::size_t idx = rem / tst[i];
      rem %= tst[i];
      if (padded[i] != 1) sflat += idx * pst[i];
    }
    out.at(flat) = a.at(sflat);
  }
  detail::record<S>(out, {a},
                    [a, out, target, padded, tst, pst, rt](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t flat = 0; flat < gy.size(); ++flat) {
      std::size_t rem = flat, sflat = 0;
      for (std::size_t i = 0; i < rt; ++i) {
        const std::size_t idx = rem / tst[i];
        rem %= tst[i];
        if (padded[i] != 1) sflat += idx * pst[i];
      }
      ga[sflat] += gy[flat];
    }
  });
  return out;
}

// Row gather over the leading axis; backward scatter-adds.
template <class S>
TensorT<S> gather_rows(const TensorT<S>& a, std::vector<std::size_t> idx) {
  if (a.rank() < 1) throw ShapeMismatch("gather_rows: rank-0 input");
  std::size_t inner = 1;
  for (std::size_t i = 1; i < a.rank(); ++i) inner *= a.dim(i);
  for (std::size_t r : idx)
    if (r >= a.dim(0)) throw AxisOutOfRange("gather_rows: row out of range");
  Shape out_shape = a.shape();
  out_shape[0] = idx.size();
  TensorT<S> out(out_shape);
  for (std::size_t k = 0; k < idx.size(); ++k)
    for (std::size_t in = 0; in < inner; ++in)
      out.at(k * inner + in) = a.at(idx[k] * inner + in);
  detail::record<S>(out, {a}, [a, out, idx, inner](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t in = 0; in < inner; ++in)
        ga[idx[k] * inner + in] += gy[k * inner + in];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> sum(const TensorT<S>& a) {
  S acc = S(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  TensorT<S> out = TensorT<S>::scalar(acc);
  detail::record<S>(out, {a}, [a, out](GradTableT<S>& g) mutable {
    const S gy = g.slot(out)[0];
    auto ga = g.slot(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy;
  });
  return out;
}

template <class S>
TensorT<S> mean(const TensorT<S>& a) {
  return mul_scalar(sum(a), S(1) / static_cast<S>(a.size()));
}

template <class S>
TensorT<S> sum_axis(const TensorT<S>& a, std::size_t axis, bool keepdim = false) {
  detail::checked_axis(a.rank(), axis, "sum_axis");
  std::size_t outer = 1, inner = 1;
  const std::size_t n = a.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape.push_back(1);
  }
  TensorT<S> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      S acc = S(0);
      for (std::size_t k = 0; k < n; ++k) acc += a.at((o * n + k) * inner + in);
      out.at(o * inner + in) = acc;
    }
  detail::record<S>(out, {a}, [a, out, n, outer, inner](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t in = 0; in < inner; ++in)
          ga[(o * n + k) * inner + in] += gy[o * inner + in];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// Contracted product over the last axis of `a` and second-to-last of `b`.
// Leading (batch) dims must match, or either operand may omit them entirely
// and is then shared across the other's batch.
template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeMismatch("matmul: operands must have rank >= 2");
  const std::size_t p = a.dim(a.rank() - 2);
  const std::size_t q = a.dim(a.rank() - 1);
  const std::size_t q2 = b.dim(b.rank() - 2);
  const std::size_t r = b.dim(b.rank() - 1);
  if (q != q2)
    throw ShapeMismatch("matmul: inner dims differ, " + shape_str(a.shape()) +
                        " x " + shape_str(b.shape()));
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  if (!abatch.empty() && !bbatch.empty() && abatch != bbatch)
    throw ShapeMismatch("matmul: batch dims differ");
  const Shape batch = abatch.empty() ? bbatch : abatch;
  const std::size_t nb = numel(batch);
  const bool a_batched = !abatch.empty();
  const bool b_batched = !bbatch.empty();

  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  TensorT<S> out(out_shape);
  for (std::size_t i = 0; i < nb; ++i) {
    detail::ConstMatMap<S> ma(a.data().data() + (a_batched ? i * p * q : 0), p, q);
    detail::ConstMatMap<S> mb(b.data().data() + (b_batched ? i * q * r : 0), q, r);
    detail::MatMap<S> mo(out.data().data() + i * p * r, p, r);
    mo.noalias() = ma * mb;
  }
  detail::record<S>(out, {a, b},
                    [a, b, out, p, q, r, nb, a_batched, b_batched](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    auto gb = g.slot(b);
    for (std::size_t i = 0; i < nb; ++i) {
      detail::ConstMatMap<S> my(gy.data() + i * p * r, p, r);
      detail::ConstMatMap<S> ma(a.data().data() + (a_batched ? i * p * q : 0), p, q);
      detail::ConstMatMap<S> mb(b.data().data() + (b_batched ? i * q * r : 0), q, r);
      detail::MatMap<S> mga(ga.data() + (a_batched ? i * p * q : 0), p, q);
      detail::MatMap<S> mgb(gb.data() + (b_batched ? i * q * r : 0), q, r);
      mga.noalias() += my * mb.transpose();
      mgb.noalias() += ma.transpose() * my;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and normalization
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> softmax_axis(const TensorT<S>& a, std::size_t axis) {
  detail::checked_axis(a.rank(), axis, "softmax_axis");
  std::size_t outer = 1, inner = 1;
  const std::size_t n = a.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  TensorT<S> out(a.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      S mx = a.at((o * n) * inner + in);
      for (std::size_t k = 1; k < n; ++k)
        mx = std::max(mx, a.at((o * n + k) * inner + in));
      S z = S(0);
      for (std::size_t k = 0; k < n; ++k) {
        const S e = std::exp(a.at((o * n + k) * inner + in) - mx);
        out.at((o * n + k) * inner + in) = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out.at((o * n + k) * inner + in) /= z;
    }
  detail::record<S>(out, {a}, [a, out, n, outer, inner](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto ga = g.slot(a);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        S dot = S(0);
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t ix = (o * n + k) * inner + in;
          dot += gy[ix] * out.at(ix);
        }
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t ix = (o * n + k) * inner + in;
          ga[ix] += out.at(ix) * (gy[ix] - dot);
        }
      }
  });
  return out;
}

inline constexpr double kNormEps = 1e-6;

// y = x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <class S>
TensorT<S> rmsnorm(const TensorT<S>& x, const TensorT<S>& gain) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != d)
    throw ShapeMismatch("rmsnorm: gain must match the last axis");
  const std::size_t rows = x.size() / d;
  TensorT<S> out(x.shape());
  std::vector<S> rstore(rows);
  for (std::size_t rix = 0; rix < rows; ++rix) {
    S ms = S(0);
    for (std::size_t j = 0; j < d; ++j) ms += x.at(rix * d + j) * x.at(rix * d + j);
    const S r = std::sqrt(ms / static_cast<S>(d) + static_cast<S>(kNormEps));
    rstore[rix] = r;
    for (std::size_t j = 0; j < d; ++j)
      out.at(rix * d + j) = x.at(rix * d + j) / r * gain.at(j);
  }
  detail::record<S>(out, {x, gain},
                    [x, gain, out, d, rows, rstore](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto gx = g.slot(x);
    auto gg = g.slot(gain);
    for (std::size_t rix = 0; rix < rows; ++rix) {
      const S r = rstore[rix];
      S dot = S(0);  // sum_k gy_k * gain_k * x_k
      for (std::size_t j = 0; j < d; ++j)
        dot += gy[rix * d + j] * gain.at(j) * x.at(rix * d + j);
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t ix = rix * d + j;
        gx[ix] += gy[ix] * gain.at(j) / r -
                  x.at(ix) * dot / (static_cast<S>(d) * r * r * r);
        gg[j] += gy[ix] * x.at(ix) / r;
      }
    }
  });
  return out;
}

// y = (x - mean) / sqrt(var + eps) * gain + bias over the last axis.
template <class S>
TensorT<S> layernorm(const TensorT<S>& x, const TensorT<S>& gain,
                     const TensorT<S>& bias) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw ShapeMismatch("layernorm: gain/bias must match the last axis");
  const std::size_t rows = x.size() / d;
  TensorT<S> out(x.shape());
  std::vector<S> inv_std(rows);
  std::vector<S> xhat(x.size());
  for (std::size_t rix = 0; rix < rows; ++rix) {
    S mu = S(0);
    for (std::size_t j = 0; j < d; ++j) mu += x.at(rix * d + j);
    mu /= static_cast<S>(d);
    S var = S(0);
    for (std::size_t j = 0; j < d; ++j) {
      const S c = x.at(rix * d + j) - mu;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S istd = S(1) / std::sqrt(var + static_cast<S>(kNormEps));
    inv_std[rix] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t ix = rix * d + j;
      xhat[ix] = (x.at(ix) - mu) * istd;
      out.at(ix) = xhat[ix] * gain.at(j) + bias.at(j);
    }
  }
  detail::record<S>(out, {x, gain, bias},
                    [x, gain, bias, out, d, rows, inv_std, xhat](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto gx = g.slot(x);
    auto gg = g.slot(gain);
    auto gb = g.slot(bias);
    for (std::size_t rix = 0; rix < rows; ++rix) {
      S m1 = S(0), m2 = S(0);  // mean(dxhat), mean(dxhat * xhat)
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t ix = rix * d + j;
        const S dxh = gy[ix] * gain.at(j);
        m1 += dxh;
        m2 += dxh * xhat[ix];
        gg[j] += gy[ix] * xhat[ix];
        gb[j] += gy[ix];
      }
      m1 /= static_cast<S>(d);
      m2 /= static_cast<S>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t ix = rix * d + j;
        const S dxh = gy[ix] * gain.at(j);
        gx[ix] += (dxh - m1 - xhat[ix] * m2) * inv_std[rix];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

enum class Pad1d { Same, Causal };

// Per-channel 1-D convolution, x: [B,L,D], kernel: [D,k] with odd k.
template <class S>
TensorT<S> conv1d_depthwise(const TensorT<S>& x, const TensorT<S>& kernel,
                            Pad1d pad = Pad1d::Same) {
  if (x.rank() != 3 || kernel.rank() != 2)
    throw ShapeMismatch("conv1d_depthwise: expects x[B,L,D], kernel[D,k]");
  const std::size_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
  const std::size_t K = kernel.dim(1);
  if (kernel.dim(0) != D)
    throw ShapeMismatch("conv1d_depthwise: channel count mismatch");
  if (K % 2 == 0) throw ShapeMismatch("conv1d_depthwise: kernel width must be odd");
  const std::ptrdiff_t off =
      pad == Pad1d::Same ? static_cast<std::ptrdiff_t>(K / 2)
                         : static_cast<std::ptrdiff_t>(K - 1);
  TensorT<S> out(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t d = 0; d < D; ++d) {
        S acc = S(0);
        for (std::size_t t = 0; t < K; ++t) {
          const std::ptrdiff_t src =
              static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(t) - off;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
          acc += kernel.at(d * K + t) *
                 x.at((b * L + static_cast<std::size_t>(src)) * D + d);
        }
        out.at((b * L + l) * D + d) = acc;
      }
  detail::record<S>(out, {x, kernel},
                    [x, kernel, out, B, L, D, K, off](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto gx = g.slot(x);
    auto gk = g.slot(kernel);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t d = 0; d < D; ++d) {
          const S gyv = gy[(b * L + l) * D + d];
          for (std::size_t t = 0; t < K; ++t) {
            const std::ptrdiff_t src =
                static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(t) - off;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
            const std::size_t xi = (b * L + static_cast<std::size_t>(src)) * D + d;
            gx[xi] += kernel.at(d * K + t) * gyv;
            gk[d * K + t] += x.at(xi) * gyv;
          }
        }
  });
  return out;
}

// Cross-correlation, same padding. x: [B,C,H,W], kernel: [O,C,kh,kw],
// optional bias [O].
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernel,
                  const TensorT<S>* bias = nullptr) {
  if (x.rank() != 4 || kernel.rank() != 4)
    throw ShapeMismatch("conv2d: expects x[B,C,H,W], kernel[O,C,kh,kw]");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (kernel.dim(1) != C) throw ShapeMismatch("conv2d: channel count mismatch");
  if (KH % 2 == 0 || KW % 2 == 0)
    throw ShapeMismatch("conv2d: kernel extents must be odd for same padding");
  if (bias && (bias->rank() != 1 || bias->dim(0) != O))
    throw ShapeMismatch("conv2d: bias shape mismatch");
  const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(KH / 2);
  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(KW / 2);
  TensorT<S> out(Shape{B, O, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          S acc = bias ? bias->at(o) : S(0);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < KH; ++u) {
              const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + u) - oh;
              if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v = 0; v < KW; ++v) {
                const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + v) - ow;
                if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += kernel.at(((o * C + c) * KH + u) * KW + v) *
                       x.at(((b * C + c) * H + static_cast<std::size_t>(si)) * W +
                            static_cast<std::size_t>(sj));
              }
            }
          out.at(((b * O + o) * H + i) * W + j) = acc;
        }
  std::vector<TensorT<S>> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  TensorT<S> bias_t = bias ? *bias : TensorT<S>();
  detail::record<S>(out, inputs,
                    [x, kernel, bias_t, has_bias, out, B, C, H, W, O, KH, KW, oh,
                     ow](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto gx = g.slot(x);
    auto gk = g.slot(kernel);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const S gyv = gy[((b * O + o) * H + i) * W + j];
            if (gyv == S(0)) continue;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t u = 0; u < KH; ++u) {
                const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + u) - oh;
                if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t v = 0; v < KW; ++v) {
                  const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + v) - ow;
                  if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
                  const std::size_t xi =
                      ((b * C + c) * H + static_cast<std::size_t>(si)) * W +
                      static_cast<std::size_t>(sj);
                  gx[xi] += kernel.at(((o * C + c) * KH + u) * KW + v) * gyv;
                  gk[((o * C + c) * KH + u) * KW + v] += x.at(xi) * gyv;
                }
              }
          }
    if (has_bias) {
      auto gb = g.slot(bias_t);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t px = 0; px < H * W; ++px)
            gb[o] += gy[(b * O + o) * H * W + px];
    }
  });
  return out;
}

// Depthwise 2-D convolution, kernel: [C,kh,kw], optional bias [C].
template <class S>
TensorT<S> conv2d_depthwise(const TensorT<S>& x, const TensorT<S>& kernel,
                            const TensorT<S>* bias = nullptr) {
  if (x.rank() != 4 || kernel.rank() != 3)
    throw ShapeMismatch("conv2d_depthwise: expects x[B,C,H,W], kernel[C,kh,kw]");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t KH = kernel.dim(1), KW = kernel.dim(2);
  if (kernel.dim(0) != C)
    throw ShapeMismatch("conv2d_depthwise: channel count mismatch");
  if (KH % 2 == 0 || KW % 2 == 0)
    throw ShapeMismatch("conv2d_depthwise: kernel extents must be odd");
  if (bias && (bias->rank() != 1 || bias->dim(0) != C))
    throw ShapeMismatch("conv2d_depthwise: bias shape mismatch");
  const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(KH / 2);
  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(KW / 2);
  TensorT<S> out(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          S acc = bias ? bias->at(c) : S(0);
          for (std::size_t u = 0; u < KH; ++u) {
            const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + u) - oh;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t v = 0; v < KW; ++v) {
              const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + v) - ow;
              if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += kernel.at((c * KH + u) * KW + v) *
                     x.at(((b * C + c) * H + static_cast<std::size_t>(si)) * W +
                          static_cast<std::size_t>(sj));
            }
          }
          out.at(((b * C + c) * H + i) * W + j) = acc;
        }
  std::vector<TensorT<S>> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  TensorT<S> bias_t = bias ? *bias : TensorT<S>();
  detail::record<S>(out, inputs,
                    [x, kernel, bias_t, has_bias, out, B, C, H, W, KH, KW, oh,
                     ow](GradTableT<S>& g) mutable {
    auto gy = g.slot(out);
    auto gx = g.slot(x);
    auto gk = g.slot(kernel);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const S gyv = gy[((b * C + c) * H + i) * W + j];
            if (gyv == S(0)) continue;
            for (std::size_t u = 0; u < KH; ++u) {
              const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + u) - oh;
              if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v = 0; v < KW; ++v) {
                const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + v) - ow;
                if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t xi =
                    ((b * C + c) * H + static_cast<std::size_t>(si)) * W +
                    static_cast<std::size_t>(sj);
                gx[xi] += kernel.at((c * KH + u) * KW + v) * gyv;
                gk[(c * KH + u) * KW + v] += x.at(xi) * gyv;
              }
            }
          }
    if (has_bias) {
      auto gb = g.slot(bias_t);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t px = 0; px < H * W; ++px)
            gb[c] += gy[(b * C + c) * H * W + px];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Operator sugar (elementwise)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) { return add(a, b); }
template <class S>
TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) { return sub(a, b); }
template <class S>
TensorT<S> operator*(const TensorT<S>& a, const TensorT<S>& b) { return mul(a, b); }
template <class S>
TensorT<S> operator/(const TensorT<S>& a, const TensorT<S>& b) { return div(a, b); }
template <class S>
TensorT<S> operator*(const TensorT<S>& a, S c) { return mul_scalar(a, c); }
template <class S>
TensorT<S> operator*(S c, const TensorT<S>& a) { return mul_scalar(a, c); }
template <class S>
TensorT<S> operator-(const TensorT<S>& a) { return neg(a); }

}  // namespace s3mot
