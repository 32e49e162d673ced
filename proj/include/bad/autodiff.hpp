#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bad/tensor.hpp"

namespace bad {

// Thrown when a forward op produces NaN/Inf or a loss diverges.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trainable tensor plus its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(real(0)); }
};

class Graph;

// Handle to a node on a Graph's tape.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  std::size_t id() const { return id_; }
  Graph& graph() const { return *graph_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Tape-based reverse-mode differentiation. Nodes are appended in evaluation
// order, so reverse tape order is a reverse topological order. A graph is
// single-use: build, call backward() once, discard.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value);
  // Leaf bound to a parameter; backward() adds its gradient into p.grad.
  Var parameter(Parameter& p);

  // Appends an op result. `backward` reads grad(self) and accumulates into
  // the parents' grad_buffer(). Non-finite values raise NumericError.
  Var make(Tensor value, std::span<const Var> parents, Backward backward, const char* op_name);
  Var make(Tensor value, std::initializer_list<Var> parents, Backward backward, const char* op_name) {
    return make(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward), op_name);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool recording() const { return record_; }

  // Gradient of the last backward() w.r.t. node; zeros if never reached.
  Tensor grad(Var v) const;
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad_buffer(std::size_t id);

  void backward(Var scalar_output);
  std::size_t size() const { return nodes_.size(); }
  // Number of node backward rules executed by the last backward().
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_;
  bool backward_done_ = false;
  std::size_t backward_visits_ = 0;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

}  // namespace bad
