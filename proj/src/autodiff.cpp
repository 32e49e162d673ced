#include "bad/autodiff.hpp"

#include <algorithm>

namespace bad {

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant");
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return {this, nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite input");
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, record_});
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, record_});
  return {this, nodes_.size() - 1};
}

Var Graph::make(Tensor value, std::span<const Var> parents, Backward backward, const char* op_name) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from op '") + op_name + "'");
  }
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) {
      if (&p.graph() != this) throw std::logic_error(std::string("op '") + op_name + "' mixes graphs");
      if (nodes_[p.id()].needs_grad) needs = true;
    }
  }
  Node node{std::move(value), {}, {}, nullptr, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var scalar_output) {
  if (!record_) throw std::logic_error("backward() on a graph built without gradient recording");
  if (backward_done_) throw std::logic_error("backward() called twice on the same graph");
  const std::size_t root = scalar_output.id();
  if (nodes_[root].value.size() != 1) {
    throw std::invalid_argument("backward() needs a scalar output, got shape " +
                                shape_to_string(nodes_[root].value.shape()));
  }
  backward_done_ = true;
  grad_buffer(root)[0] = real(1);
  backward_visits_ = 0;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, i);
      ++backward_visits_;
    } else if (n.param != nullptr) {
      auto& g = n.param->grad;
      if (g.empty()) g = Tensor(n.param->value.shape());
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

}  // namespace bad
