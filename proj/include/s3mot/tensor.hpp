#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "s3mot/errors.hpp"

namespace s3mot {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Row-major strides; last dimension is contiguous.
inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

// Dense tensor handle with shared storage. Copies are shallow; the tape
// records handles, so storage stays alive as long as a backward pass may
// need it. Data recorded on a live tape must not be mutated before
// backward runs.
template <class S>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape, S fill = S(0))
      : node_(std::make_shared<Node>()) {
    check_dims(shape);
    node_->shape = std::move(shape);
    node_->data.assign(numel(node_->shape), fill);
  }

  TensorT(Shape shape, std::vector<S> data) : node_(std::make_shared<Node>()) {
    check_dims(shape);
    if (numel(shape) != data.size())
      throw ShapeMismatch("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape), S(0)); }
  static TensorT ones(Shape shape) { return TensorT(std::move(shape), S(1)); }
  static TensorT full(Shape shape, S v) { return TensorT(std::move(shape), v); }
  static TensorT scalar(S v) { return TensorT(Shape{1}, std::vector<S>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<S> data() { return node_->data; }
  std::span<const S> data() const { return node_->data; }

  S value() const {
    if (size() != 1) throw ShapeMismatch("value() requires a one-element tensor");
    return node_->data[0];
  }

  S& at(std::size_t flat) { return node_->data[flat]; }
  S at(std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  TensorT& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  // Accumulated gradient; sized like data once touched, empty before.
  std::span<const S> grad() const { return node_->grad; }
  std::span<S> grad_data() {
    if (node_->grad.empty()) node_->grad.assign(size(), S(0));
    return node_->grad;
  }
  void accumulate_grad(std::span<const S> g) {
    auto dst = grad_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(size(), S(0));
  }

  // Deep copy of data; grad is not copied.
  TensorT clone() const {
    TensorT out(node_->shape, node_->data);
    out.node_->requires_grad = node_->requires_grad;
    return out;
  }

  const void* key() const { return node_.get(); }
  bool same_storage(const TensorT& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool requires_grad = false;
  };

  static void check_dims(const Shape& shape) {
    for (std::size_t d : shape)
      if (d == 0) throw ShapeMismatch("zero-sized dimension in " + shape_str(shape));
  }

  std::shared_ptr<Node> node_;
};

// Scratch gradients for one backward sweep. Keeping the sweep separate from
// the persistent per-tensor grad gives plain += accumulation semantics when
// backward runs more than once on the same tape.
template <class S>
class GradTableT {
 public:
  std::span<S> slot(const TensorT<S>& t) {
    auto it = table_.find(t.key());
    if (it == table_.end()) {
      it = table_.emplace(t.key(), Entry{t, std::vector<S>(t.size(), S(0))}).first;
    }
    return it->second.grad;
  }

  const std::vector<S>* find(const TensorT<S>& t) const {
    auto it = table_.find(t.key());
    return it == table_.end() ? nullptr : &it->second.grad;
  }

  template <class Fn>
  void for_each(Fn&& fn) {
    for (auto& [key, entry] : table_) fn(entry.tensor, entry.grad);
  }

 private:
  struct Entry {
    TensorT<S> tensor;
    std::vector<S> grad;
  };
  std::unordered_map<const void*, Entry> table_;
};

// Reverse-mode tape. Construction pushes the tape as the active recorder for
// this thread; destruction pops it. Ops record only onto the active tape, so
// forward passes without a live tape run inference-only.
template <class S>
class TapeT {
 public:
  using BackwardFn = std::function<void(GradTableT<S>&)>;

  TapeT() : prev_(tls_active()) { tls_active() = this; }
  ~TapeT() { tls_active() = prev_; }
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  static TapeT* active() { return tls_active(); }
  static TapeT* exchange_active(TapeT* t) {
    TapeT* prev = tls_active();
    tls_active() = t;
    return prev;
  }

  void record(TensorT<S> output, std::vector<TensorT<S>> inputs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(output), std::move(inputs), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1, replays all recorded nodes newest-first, then
  // flushes the sweep into each touched tensor's persistent grad.
  void backward(const TensorT<S>& loss) {
    if (loss.size() != 1)
      throw NonScalarLoss("backward requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
    GradTableT<S> table;
    table.slot(loss)[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (table.find(it->output) == nullptr) continue;  // not reachable from loss
      it->fn(table);
    }
    table.for_each([](TensorT<S>& t, const std::vector<S>& g) {
      t.accumulate_grad(g);
    });
  }

 private:
  struct Node {
    TensorT<S> output;
    std::vector<TensorT<S>> inputs;
    BackwardFn fn;
  };

  static TapeT*& tls_active() {
    thread_local TapeT* active = nullptr;
    return active;
  }

  std::vector<Node> nodes_;
  TapeT* prev_ = nullptr;
};

// Suspends recording inside the scope; the previously active tape is
// restored on exit.
template <class S>
class NoTapeScopeT {
 public:
  NoTapeScopeT() : prev_(TapeT<S>::exchange_active(nullptr)) {}
  ~NoTapeScopeT() { TapeT<S>::exchange_active(prev_); }
  NoTapeScopeT(const NoTapeScopeT&) = delete;
  NoTapeScopeT& operator=(const NoTapeScopeT&) = delete;

 private:
  TapeT<S>* prev_;
};

using Tensor = TensorT<double>;
using Tape = TapeT<double>;
using GradTable = GradTableT<double>;
using NoTapeScope = NoTapeScopeT<double>;

template <class S>
TensorT<S> randn(Shape shape, std::mt19937_64& rng, S stddev = S(1)) {
  std::normal_distribution<double> dist(0.0, 1.0);
  TensorT<S> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<S>(dist(rng)) * stddev;
  return out;
}

template <class S>
TensorT<S> rand_uniform(Shape shape, std::mt19937_64& rng, S lo, S hi) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                              static_cast<double>(hi));
  TensorT<S> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<S>(dist(rng));
  return out;
}

}  // namespace s3mot
