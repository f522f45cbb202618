#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "maanet/common.hpp"

namespace maanet {

// Dims of a dense tensor, rank 1..4. Image-like data is N x C x H x W.
struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    if (dims.size() < 1 || dims.size() > 4) throw ShapeError("Shape: rank must be 1..4");
    rank = static_cast<int>(dims.size());
    int i = 0;
    for (int v : dims) {
      if (v <= 0) throw ShapeError("Shape: extents must be positive, got " + std::to_string(v));
      d[i++] = v;
    }
  }

  int operator[](int i) const { return d[static_cast<size_t>(i)]; }
  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int i = 0; i < rank; ++i) n *= d[static_cast<size_t>(i)];
    return n;
  }
  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i) if (d[size_t(i)] != o.d[size_t(i)]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s;
    for (int i = 0; i < rank; ++i) {
      if (i) s += 'x';
      s += std::to_string(d[size_t(i)]);
    }
    return s;
  }
};

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

namespace detail {
inline std::uint64_t next_tensor_id() {
  static thread_local std::uint64_t counter = 0;
  return ++counter;
}
}  // namespace detail

template <typename Scalar>
struct TensorStorage {
  Shape shape;
  ArrayX<Scalar> values;
  ArrayX<Scalar> grad;               // size 0 when gradient is not tracked
  bool requires_grad = false;        // leaf flag (parameters)
  std::uint64_t tape_serial = 0;     // serial of the Graph that produced this tensor
  std::uint64_t id = detail::next_tensor_id();
};

template <typename Scalar>
class Graph;

// Value-semantic handle on shared dense storage. Copies alias the storage;
// clone() deep-copies.
template <typename Scalar>
class Tensor {
 public:
  using Storage = TensorStorage<Scalar>;
  using value_type = Scalar;

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    Tensor t = uninit(shape);
    t.s_->values.setZero();
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }
  static Tensor constant(const Shape& shape, Scalar value) {
    Tensor t = uninit(shape);
    t.s_->values.setConstant(value);
    return t;
  }
  static Tensor from(const Shape& shape, const std::vector<Scalar>& vals,
                     bool requires_grad = false) {
    if (static_cast<std::int64_t>(vals.size()) != shape.numel())
      throw ShapeError("Tensor::from: value count " + std::to_string(vals.size()) +
                       " does not match shape " + shape.str());
    Tensor t = uninit(shape);
    for (std::int64_t i = 0; i < shape.numel(); ++i) t.s_->values[i] = vals[size_t(i)];
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }
  static Tensor uninit(const Shape& shape) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = shape;
    t.s_->values.resize(shape.numel());
    return t;
  }

  bool valid() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::int64_t numel() const { return s_->shape.numel(); }
  std::uint64_t id() const { return s_->id; }

  ArrayX<Scalar>& values() { return s_->values; }
  const ArrayX<Scalar>& values() const { return s_->values; }
  Scalar* data() { return s_->values.data(); }
  const Scalar* data() const { return s_->values.data(); }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (on && s_->grad.size() != numel()) {
      s_->grad.resize(numel());
      s_->grad.setZero();
    }
  }
  bool has_grad() const { return s_ && s_->grad.size() == numel(); }
  ArrayX<Scalar>& grad() {
    if (!has_grad()) throw ContractError("Tensor::grad: gradient buffer absent");
    return s_->grad;
  }
  const ArrayX<Scalar>& grad() const {
    if (!has_grad()) throw ContractError("Tensor::grad: gradient buffer absent");
    return s_->grad;
  }
  void zero_grad() {
    if (has_grad()) s_->grad.setZero();
  }

  Scalar item() const {
    if (numel() != 1) throw ContractError("Tensor::item: tensor is not scalar, shape " + shape().str());
    return s_->values[0];
  }

  // Row-major N x C x H x W addressing; trailing indices default to 0 so the
  // same accessor serves rank 1..4.
  Scalar& at(int n, int c = 0, int h = 0, int w = 0) {
    return s_->values[offset(n, c, h, w)];
  }
  Scalar at(int n, int c = 0, int h = 0, int w = 0) const {
    return s_->values[offset(n, c, h, w)];
  }

  Tensor clone() const {
    Tensor t = uninit(shape());
    t.s_->values = s_->values;
    return t;
  }

  std::shared_ptr<Storage> storage() const { return s_; }

 private:
  std::int64_t offset(int n, int c, int h, int w) const {
    const Shape& s = s_->shape;
    std::int64_t idx = n;
    if (s.rank > 1) idx = idx * s.d[1] + c;
    if (s.rank > 2) idx = idx * s.d[2] + h;
    if (s.rank > 3) idx = idx * s.d[3] + w;
    return idx;
  }

  std::shared_ptr<Storage> s_;
};

// Reverse-mode tape. Constructing a Graph activates recording for Scalar on
// the current thread; ops executed while it is active append their backward
// rules in execution order. backward() replays them in reverse exactly once.
// Training math is single-threaded by contract, so one active tape per
// thread is enforced rather than synchronized.
template <typename Scalar>
class Graph {
 public:
  struct OpRecord {
    const char* op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
    std::function<void()> backprop;
  };

  Graph() {
    if (active_) throw ContractError("Graph: a tape is already active on this thread");
    serial_ = ++serial_counter_;
    active_ = this;
  }
  ~Graph() { active_ = nullptr; }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active() { return active_; }
  std::uint64_t serial() const { return serial_; }

  void push(const char* op, std::vector<std::uint64_t> inputs,
            const std::shared_ptr<TensorStorage<Scalar>>& out,
            std::function<void()> backprop) {
    ops_.push_back(OpRecord{op, std::move(inputs), out->id, std::move(backprop)});
    outputs_.push_back(out);
  }

  void note_leaf(const std::shared_ptr<TensorStorage<Scalar>>& leaf) { leaves_.insert(leaf); }

  void backward(const Tensor<Scalar>& loss) {
    if (ran_backward_) throw ContractError("Graph::backward: tape already consumed");
    if (!loss.valid() || loss.numel() != 1)
      throw ContractError("Graph::backward: loss must be a scalar tensor");
    if (loss.storage()->tape_serial != serial_ && !loss.requires_grad()) {
      // A constant loss over an empty tape differentiates to all-zero
      // gradients; anything else detached from this tape is a bug.
      if (ops_.empty()) {
        ran_backward_ = true;
        return;
      }
      throw ContractError("Graph::backward: loss is not on this graph");
    }
    ran_backward_ = true;
    loss.storage()->grad.resize(1);
    loss.storage()->grad[0] = Scalar(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backprop();
    // NaN/Inf anywhere after a backward pass is a hard error.
    for (const auto& s : outputs_)
      if (s->grad.size() && !s->grad.allFinite())
        throw NumericError("backward: non-finite gradient (intermediate)");
    for (const auto& s : leaves_)
      if (s->grad.size() && !s->grad.allFinite())
        throw NumericError("backward: non-finite gradient (leaf)");
  }

  const std::vector<OpRecord>& ops() const { return ops_; }

 private:
  std::vector<OpRecord> ops_;
  std::vector<std::shared_ptr<TensorStorage<Scalar>>> outputs_;
  std::set<std::shared_ptr<TensorStorage<Scalar>>> leaves_;
  bool ran_backward_ = false;
  std::uint64_t serial_ = 0;

  inline static thread_local Graph* active_ = nullptr;
  inline static thread_local std::uint64_t serial_counter_ = 0;
};

// True when gradient must flow into x under the currently active tape.
template <typename Scalar>
inline bool tracked(const Tensor<Scalar>& x) {
  if (!x.valid()) return false;
  if (x.requires_grad()) return true;
  auto* g = Graph<Scalar>::active();
  return g && x.storage()->tape_serial == g->serial();
}

// Graph inspection: can gradient flowing back from `from_output` reach
// `to_node` without passing through any node in `cut`?
template <typename Scalar>
inline bool reaches(const Graph<Scalar>& g, std::uint64_t from_output, std::uint64_t to_node,
                    const std::set<std::uint64_t>& cut = {}) {
  std::set<std::uint64_t> frontier{from_output};
  std::set<std::uint64_t> seen{from_output};
  while (!frontier.empty()) {
    std::set<std::uint64_t> next;
    for (std::uint64_t node : frontier) {
      if (node == to_node) return true;
      if (cut.count(node)) continue;
      for (const auto& rec : g.ops()) {
        if (rec.output != node) continue;
        for (std::uint64_t in : rec.inputs)
          if (seen.insert(in).second) next.insert(in);
      }
    }
    frontier = std::move(next);
  }
  return false;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace maanet
