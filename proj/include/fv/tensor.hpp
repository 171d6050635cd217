#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fv/error.hpp"

namespace fv {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Row-major n-d array of scalars with an optional gradient buffer.
// Value-semantic handle: copies share storage (clone() for a deep copy).
template <class S>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape, S fill = S(0), bool requires_grad = false)
      : st_(std::make_shared<Storage>()) {
    validate_shape(shape);
    st_->shape = std::move(shape);
    st_->data.assign(static_cast<std::size_t>(shape_numel(st_->shape)), fill);
    set_requires_grad(requires_grad);
  }

  static TensorT from(Shape shape, std::vector<S> data,
                      bool requires_grad = false) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    TensorT t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = std::move(shape);
    t.st_->data = std::move(data);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return TensorT(std::move(shape), S(0), requires_grad);
  }

  static TensorT full(Shape shape, S value, bool requires_grad = false) {
    return TensorT(std::move(shape), value, requires_grad);
  }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int rank() const { return static_cast<int>(st_->shape.size()); }
  int dim(int i) const { return st_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(st_->data.size());
  }

  std::vector<S>& data() { return st_->data; }
  const std::vector<S>& data() const { return st_->data; }

  S& operator[](std::int64_t i) { return st_->data[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const {
    return st_->data[static_cast<std::size_t>(i)];
  }

  S& at(int i, int j) { return st_->data[idx2(i, j)]; }
  const S& at(int i, int j) const { return st_->data[idx2(i, j)]; }
  S& at(int c, int i, int j) { return st_->data[idx3(c, i, j)]; }
  const S& at(int c, int i, int j) const { return st_->data[idx3(c, i, j)]; }

  bool requires_grad() const { return st_->requires_grad; }

  void set_requires_grad(bool rg) {
    st_->requires_grad = rg;
    if (rg)
      st_->grad.assign(st_->data.size(), S(0));
    else
      st_->grad.clear();
  }

  std::vector<S>& grad() {
    if (!st_->requires_grad)
      throw StateError("tensor has no gradient buffer (requires_grad=false)");
    return st_->grad;
  }
  const std::vector<S>& grad() const {
    if (!st_->requires_grad)
      throw StateError("tensor has no gradient buffer (requires_grad=false)");
    return st_->grad;
  }

  void zero_grad() {
    if (st_->requires_grad) st_->grad.assign(st_->data.size(), S(0));
  }

  TensorT clone() const {
    TensorT t;
    t.st_ = std::make_shared<Storage>(*st_);
    return t;
  }

  // Storage identity; two handles to the same buffer compare equal.
  const void* id() const { return st_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool requires_grad = false;
  };

  static void validate_shape(const Shape& s) {
    if (s.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (int d : s)
      if (d <= 0)
        throw DimensionError("tensor shape has non-positive dim " +
                             shape_str(s));
  }

  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * st_->shape[1] + j;
  }
  std::size_t idx3(int c, int i, int j) const {
    return (static_cast<std::size_t>(c) * st_->shape[1] + i) * st_->shape[2] + j;
  }

  std::shared_ptr<Storage> st_;
};

// Define-by-run tape. Ops append one node per forward call; construction
// order is a topological order, so backward() is a single reverse sweep and
// visits each node exactly once. A graph and its tensors belong to one
// logical thread.
template <class S>
class GraphT {
 public:
  GraphT() = default;
  explicit GraphT(bool recording) : recording_(recording) {}

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  void record(const char* op, std::function<void()> backward_fn) {
    if (recording_) nodes_.push_back(Node{op, std::move(backward_fn)});
  }

  std::size_t node_count() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  void backward(TensorT<S>& loss) {
    if (loss.numel() != 1)
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
    if (!loss.requires_grad()) return;  // constant loss: all gradients zero
    loss.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

 private:
  struct Node {
    const char* op;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
};

using Tensor = TensorT<float>;
using Graph = GraphT<float>;

template <class S>
void backward(GraphT<S>& g, TensorT<S>& loss) {
  g.backward(loss);
}

}  // namespace fv
