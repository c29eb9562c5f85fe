#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crackseg/common.hpp"

namespace crackseg {

struct TensorNode;

/// Shared handle to a dense float tensor participating in a reverse-mode
/// autodiff graph. Copies share the underlying node; ops record their
/// parents so a scalar result can backpropagate into every reachable
/// tensor with requires_grad set. Gradients accumulate until zeroed.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;

  std::vector<float>& data();
  const std::vector<float>& data() const;
  float scalar() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::vector<float>& grad();
  bool has_grad() const;
  void zero_grad();

  const char* op() const;
  const std::vector<Tensor>& parents() const;

  /// Backpropagate from a scalar with seed gradient 1.
  void backward() const;
  /// Backpropagate with an explicit output-gradient seed (same length as data).
  void backward(const std::vector<float>& seed) const;

  TensorNode* node() const { return n_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}
  std::shared_ptr<TensorNode> n_;

  friend Tensor make_op(const char* name, Shape shape, std::vector<float> data,
                        std::vector<Tensor> parents,
                        std::function<void(TensorNode&)> backward_fn);
};

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until first touched
  const char* op = "leaf";
  std::vector<Tensor> parents;
  std::function<void(TensorNode&)> backward_fn;  // null for leaves

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  std::vector<float>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

inline Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

inline Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  const int64_t count = numel_of(shape);
  if (count <= 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero-sized dimension");
  n->shape = std::move(shape);
  n->data.assign(static_cast<size_t>(count), value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

inline Tensor Tensor::from_data(Shape shape, std::vector<float> data,
                                bool requires_grad) {
  if (numel_of(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

inline const Shape& Tensor::shape() const { return n_->shape; }
inline int64_t Tensor::numel() const { return n_->numel(); }
inline std::vector<float>& Tensor::data() { return n_->data; }
inline const std::vector<float>& Tensor::data() const { return n_->data; }

inline float Tensor::scalar() const {
  if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape()));
  return n_->data[0];
}

inline bool Tensor::requires_grad() const { return n_->requires_grad; }
inline void Tensor::set_requires_grad(bool flag) { n_->requires_grad = flag; }
inline std::vector<float>& Tensor::grad() { return n_->ensure_grad(); }
inline bool Tensor::has_grad() const { return !n_->grad.empty(); }

inline void Tensor::zero_grad() {
  if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0f);
}

inline const char* Tensor::op() const { return n_->op; }
inline const std::vector<Tensor>& Tensor::parents() const { return n_->parents; }

/// Factory used by every op (and by tests that build custom ops): records
/// structure unconditionally; the backward rule is kept only when some
/// parent requires a gradient.
inline Tensor make_op(const char* name, Shape shape, std::vector<float> data,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(data));
  TensorNode* n = out.node();
  n->op = name;
  n->parents = std::move(parents);
  bool needs = false;
  for (const Tensor& p : n->parents) needs = needs || p.requires_grad();
  n->requires_grad = needs;
  if (needs) n->backward_fn = std::move(backward_fn);
  return out;
}

namespace detail {

// Post-order over the requires_grad subgraph, iterative to keep deep
// decoder chains off the call stack.
inline void topo_order(TensorNode* root, std::vector<TensorNode*>& order) {
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    TensorNode* node = stack.back().first;
    size_t i = stack.back().second;
    if (i < node->parents.size()) {
      stack.back().second = i + 1;
      TensorNode* p = node->parents[i].node();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
}

}  // namespace detail

inline void Tensor::backward(const std::vector<float>& seed) const {
  if (seed.size() != n_->data.size())
    throw ShapeError("backward seed length " + std::to_string(seed.size()) +
                     " does not match tensor shape " + shape_str(shape()));
  if (!n_->requires_grad)
    throw ShapeError("backward() on a tensor that does not require gradients");
  std::vector<TensorNode*> order;
  detail::topo_order(n_.get(), order);
  auto& g = n_->ensure_grad();
  for (size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (!node->backward_fn) continue;
    node->ensure_grad();
    node->backward_fn(*node);
  }
}

inline void Tensor::backward() const {
  if (numel() != 1)
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  backward(std::vector<float>{1.0f});
}

/// Op-name histogram of the recorded forward graph rooted at `root`.
/// Walks all parents regardless of requires_grad; leaves are not counted.
inline std::map<std::string, int> count_ops(const Tensor& root) {
  std::map<std::string, int> counts;
  std::unordered_set<TensorNode*> visited;
  std::vector<TensorNode*> stack{root.node()};
  visited.insert(root.node());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    if (n->backward_fn || !n->parents.empty()) counts[n->op]++;
    for (const Tensor& p : n->parents) {
      if (visited.insert(p.node()).second) stack.push_back(p.node());
    }
  }
  return counts;
}

}  // namespace crackseg
