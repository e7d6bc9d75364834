#include "kflow/tape.hpp"

#include "kflow/error.hpp"

namespace kflow {

Parameter& ParameterSet::add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.try_emplace(name, Parameter{std::move(init), std::nullopt});
  if (!inserted) throw ContractError("duplicate parameter name " + name);
  return it->second;
}

Parameter& ParameterSet::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + std::string(name));
  return it->second;
}

const Parameter& ParameterSet::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + std::string(name));
  return it->second;
}

bool ParameterSet::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

void ParameterSet::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

const Tensor& Var::value() const { return tape().value(id_); }
bool Var::requires_grad() const { return tape().requires_grad(id_); }
std::optional<Tensor> Var::grad() const { return tape().leaf_grad(id_); }

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), false, true, nullptr, std::nullopt, {}, std::nullopt});
  return {this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  require_finite(value, "leaf");
  nodes_.push_back(Node{std::move(value), true, true, nullptr, std::nullopt, {}, std::nullopt});
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  require_finite(p.value, "parameter");
  nodes_.push_back(Node{p.value, true, true, &p, std::nullopt, {}, std::nullopt});
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError("non-finite output of " + std::string(op));
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError(std::string(op) + ": inputs recorded on a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node node{std::move(value), needs, false, nullptr, std::nullopt, {}, std::nullopt};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return {};
  if (!n.adjoint) n.adjoint = Tensor(n.value.shape());
  return n.adjoint->data();
}

std::optional<Tensor> Tape::leaf_grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.param) return n.param->grad;
  return n.leaf_grad;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  const std::size_t root = loss.id();
  if (nodes_[root].value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(nodes_[root].value.shape()));
  }
  if (!nodes_[root].requires_grad) return;

  for (auto& n : nodes_) n.adjoint.reset();
  grad_buffer(root)[0] = 1.0;

  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.adjoint) continue;
    if (n.is_leaf) {
      std::optional<Tensor>& dst = n.param ? n.param->grad : n.leaf_grad;
      if (!dst) {
        dst = std::move(*n.adjoint);
      } else {
        auto d = dst->data();
        auto s = n.adjoint->data();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
      }
      n.adjoint.reset();
      continue;
    }
    // Interior adjoints are released as soon as they are propagated.
    const Tensor g = std::move(*n.adjoint);
    n.adjoint.reset();
    n.backward(*this, g);
  }
}

}  // namespace kflow
