#pragma once

#include "lgpt/numerics/tensor.hpp"

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lgpt {

using TensorMap = std::map<std::string, Tensor>;

// Named trainable tensors. Ordered so that iteration (and therefore the
// optimizer and checkpoint layout) is deterministic.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    TensorMap& tensors() { return tensors_; }
    const TensorMap& tensors() const { return tensors_; }
    std::size_t size() const { return tensors_.size(); }
    std::size_t element_count() const;
    // Element count of parameters whose name starts with prefix.
    std::size_t element_count(const std::string& prefix) const;

private:
    TensorMap tensors_;
};

// One differentiable operation. Ops are stateless; forward() validates
// shapes and throws ShapeError on violation.
class Op {
public:
    virtual ~Op() = default;
    virtual std::string name() const = 0;
    virtual Tensor forward(std::span<const Tensor* const> inputs) const = 0;
    // Accumulates d(loss)/d(input) into grads[i]; grads[i] is null when input
    // i does not need a gradient.
    virtual void backward(std::span<const Tensor* const> inputs, const Tensor& output, const Tensor& grad_output,
                          std::span<Tensor* const> grads) const = 0;
};

class Graph;

// Handle to a node of a Graph.
class Var {
public:
    Var() = default;

    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    friend class Graph;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Define-by-run computation graph. Nodes are evaluated as they are added,
// and the whole graph can be replayed with recompute() after parameters
// change. Node order is a topological order by construction.
class Graph {
public:
    explicit Graph(ParameterStore* params = nullptr) : params_(params) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var parameter(const std::string& name);
    Var input(const std::string& name, Tensor value);
    Var constant(Tensor value);
    Var apply(std::shared_ptr<const Op> op, std::vector<Var> inputs);

    // Attaches a name so the node can be requested from evaluate().
    Var name(Var v, const std::string& label);
    Var find(const std::string& label) const;

    void recompute();

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    std::size_t node_count() const { return nodes_.size(); }
    ParameterStore* params() const { return params_; }

    // Reverse-mode pass from a scalar node. Returns a gradient for every
    // parameter of the bound store (zeros where unreachable).
    TensorMap backward(Var loss) const;

private:
    enum class Kind { parameter, input, constant, op };

    struct Node {
        Kind kind = Kind::constant;
        std::shared_ptr<const Op> op;
        std::vector<std::size_t> inputs;
        Tensor value;
        std::string label;
        bool requires_grad = false;
    };

    void run_node(std::size_t id);
    std::string describe(std::size_t id) const;

    ParameterStore* params_;
    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> labels_;
    std::map<std::string, std::size_t> param_nodes_;
};

// Recomputes the graph and returns the requested named nodes. Throws
// NonFiniteError if any requested output holds NaN or Inf.
TensorMap evaluate(Graph& graph, const std::vector<std::string>& outputs);

// Exact reverse-mode gradients of a scalar node.
TensorMap gradients(Graph& graph, const std::string& scalar_loss);
TensorMap gradients(Graph& graph, Var scalar_loss);

// Central-difference estimate of d(loss)/d(param), element by element.
// Restores the parameter and the graph values before returning.
Tensor finite_difference_oracle(Graph& graph, const std::string& scalar_loss, const std::string& param,
                                double h = 1e-5);
// Same, restricted to the given flat element indices.
std::vector<double> finite_difference_oracle(Graph& graph, const std::string& scalar_loss, const std::string& param,
                                             std::span<const std::size_t> indices, double h = 1e-5);

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

} // namespace lgpt
