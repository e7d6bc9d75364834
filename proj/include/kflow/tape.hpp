#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kflow/tensor.hpp"

namespace kflow {

// A trainable array that outlives any single tape. `grad` is absent until a
// backward pass reaches the parameter through Tape::param.
struct Parameter {
  Tensor value;
  std::optional<Tensor> grad;

  void zero_grad() { grad.reset(); }
};

// Named parameters in deterministic (lexicographic) order. Node-based
// storage keeps Parameter addresses stable while a tape refers to them.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  void zero_grad();
  std::size_t scalar_count() const;
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter, std::less<>> params_;
};

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  // Accumulated gradient of a leaf; nullopt if none was produced.
  std::optional<Tensor> grad() const;

  Tape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in execution order (ids are a topological order) and
// runs one reverse sweep per backward() call. Confined to one thread.
//
// Gradients of leaves accumulate across backward() calls until the leaf or
// parameter grads are reset; interior adjoints are rebuilt on every call.
class Tape {
 public:
  // Propagates the adjoint of node `self` (passed as `out_grad`) to inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // Leaf whose gradient accumulates into `p.grad`. `p` must outlive the tape.
  Var param(Parameter& p);

  // Records an op output. `backward` is kept only when some input requires a
  // gradient. Throws NumericError (naming `op`) on non-finite output.
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void backward(const Var& loss);

  // Adjoint buffer of node `id` during a backward sweep, or an empty span if
  // the node does not require a gradient. For use inside BackwardFn.
  std::span<double> grad_buffer(std::size_t id);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::optional<Tensor> leaf_grad(std::size_t id) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = false;
    Parameter* param = nullptr;
    std::optional<Tensor> leaf_grad;
    BackwardFn backward;
    std::optional<Tensor> adjoint;
  };

  std::vector<Node> nodes_;
};

}  // namespace kflow
