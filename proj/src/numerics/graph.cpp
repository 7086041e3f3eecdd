#include "lgpt/numerics/graph.hpp"

#include "lgpt/error.hpp"

#include <algorithm>
#include <cmath>

namespace lgpt {

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
    auto [it, inserted] = tensors_.emplace(name, std::move(value));
    if (!inserted) throw Error("duplicate parameter '" + name + "'");
    return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParameterStore::element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
}

std::size_t ParameterStore::element_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors_) {
        if (name.compare(0, prefix.size(), prefix) == 0) n += t.size();
    }
    return n;
}

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::parameter(const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var(this, it->second);
    if (!params_) throw Error("graph has no parameter store; cannot bind '" + name + "'");
    Node node;
    node.kind = Kind::parameter;
    node.label = name;
    node.value = params_->get(name);
    node.requires_grad = true;
    nodes_.push_back(std::move(node));
    const std::size_t id = nodes_.size() - 1;
    param_nodes_[name] = id;
    labels_[name] = id;
    return Var(this, id);
}

Var Graph::input(const std::string& name, Tensor value) {
    Node node;
    node.kind = Kind::input;
    node.label = name;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    labels_[name] = nodes_.size() - 1;
    return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
    Node node;
    node.kind = Kind::constant;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Graph::apply(std::shared_ptr<const Op> op, std::vector<Var> inputs) {
    Node node;
    node.kind = Kind::op;
    node.op = std::move(op);
    for (const Var& v : inputs) {
        if (v.graph_ != this) throw Error("operand of '" + node.op->name() + "' belongs to another graph");
        node.inputs.push_back(v.id_);
        node.requires_grad = node.requires_grad || nodes_[v.id_].requires_grad;
    }
    nodes_.push_back(std::move(node));
    const std::size_t id = nodes_.size() - 1;
    try {
        run_node(id);
    } catch (...) {
        nodes_.pop_back();
        throw;
    }
    return Var(this, id);
}

Var Graph::name(Var v, const std::string& label) {
    nodes_.at(v.id_).label = label;
    labels_[label] = v.id_;
    return v;
}

Var Graph::find(const std::string& label) const {
    auto it = labels_.find(label);
    if (it == labels_.end()) throw Error("graph has no node named '" + label + "'");
    return Var(const_cast<Graph*>(this), it->second);
}

std::string Graph::describe(std::size_t id) const {
    const Node& n = nodes_[id];
    std::string s = "node " + std::to_string(id);
    if (n.op) s += " '" + n.op->name() + "'";
    if (!n.label.empty()) s += " (" + n.label + ")";
    return s;
}

void Graph::run_node(std::size_t id) {
    Node& node = nodes_[id];
    std::vector<const Tensor*> in;
    in.reserve(node.inputs.size());
    for (auto i : node.inputs) in.push_back(&nodes_[i].value);
    try {
        node.value = node.op->forward(in);
    } catch (const ShapeError& e) {
        throw ShapeError(describe(id) + ": " + e.what());
    }
}

void Graph::recompute() {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        Node& node = nodes_[id];
        if (node.kind == Kind::parameter) {
            node.value = params_->get(node.label);
        } else if (node.kind == Kind::op) {
            run_node(id);
        }
    }
}

TensorMap Graph::backward(Var loss) const {
    if (loss.graph_ != this) throw Error("loss belongs to another graph");
    const Tensor& loss_value = nodes_[loss.id_].value;
    if (loss_value.size() != 1) {
        throw ShapeError("loss " + describe(loss.id_) + " is not scalar: " + shape_string(loss_value.shape()));
    }
    std::vector<Tensor> grads(loss.id_ + 1);
    grads[loss.id_] = Tensor(loss_value.shape(), 1.0);

    std::vector<const Tensor*> in;
    std::vector<Tensor*> grad_in;
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (node.kind != Kind::op || grads[id].empty() || !node.requires_grad) continue;
        in.clear();
        grad_in.clear();
        for (auto i : node.inputs) {
            in.push_back(&nodes_[i].value);
            if (nodes_[i].requires_grad) {
                if (grads[i].empty()) grads[i] = Tensor(nodes_[i].value.shape());
                grad_in.push_back(&grads[i]);
            } else {
                grad_in.push_back(nullptr);
            }
        }
        node.op->backward(in, node.value, grads[id], grad_in);
        grads[id] = Tensor();
    }

    TensorMap out;
    if (params_) {
        for (const auto& [name, t] : params_->tensors()) out.emplace(name, Tensor(t.shape()));
    }
    for (const auto& [name, id] : param_nodes_) {
        if (id < grads.size() && !grads[id].empty()) {
            if (!grads[id].all_finite()) throw NonFiniteError("non-finite gradient for parameter '" + name + "'");
            out[name] = std::move(grads[id]);
        } else {
            out[name] = Tensor(nodes_[id].value.shape());
        }
    }
    return out;
}

TensorMap evaluate(Graph& graph, const std::vector<std::string>& outputs) {
    graph.recompute();
    TensorMap result;
    for (const auto& name : outputs) {
        const Tensor& v = graph.find(name).value();
        if (!v.all_finite()) throw NonFiniteError("output '" + name + "' contains non-finite values");
        result.emplace(name, v);
    }
    return result;
}

TensorMap gradients(Graph& graph, Var scalar_loss) { return graph.backward(scalar_loss); }

TensorMap gradients(Graph& graph, const std::string& scalar_loss) { return graph.backward(graph.find(scalar_loss)); }

std::vector<double> finite_difference_oracle(Graph& graph, const std::string& scalar_loss, const std::string& param,
                                             std::span<const std::size_t> indices, double h) {
    if (!(h > 0.0)) throw Error("finite-difference step must be positive");
    if (!graph.params()) throw Error("graph has no parameter store");
    Tensor& p = graph.params()->get(param);
    const Var loss = graph.find(scalar_loss);
    std::vector<double> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        const double saved = p[i];
        p[i] = saved + h;
        graph.recompute();
        const double plus = loss.value().item();
        p[i] = saved - h;
        graph.recompute();
        const double minus = loss.value().item();
        p[i] = saved;
        out.push_back((plus - minus) / (2.0 * h));
    }
    graph.recompute();
    return out;
}

Tensor finite_difference_oracle(Graph& graph, const std::string& scalar_loss, const std::string& param, double h) {
    if (!graph.params()) throw Error("graph has no parameter store");
    const Tensor& p = graph.params()->get(param);
    std::vector<std::size_t> all(p.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Shape shape = p.shape();
    return Tensor(std::move(shape), finite_difference_oracle(graph, scalar_loss, param, all, h));
}

double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

} // namespace lgpt
