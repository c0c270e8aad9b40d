#include "gttdi/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gttdi {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dimension " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape))) {}

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

std::int64_t Tensor::rows() const {
    if (shape.empty()) return 1;
    std::int64_t r = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
    return r;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

const Tensor& Var::value() const { return tape_->node(id_).value; }

const Tensor& Var::grad() const {
    const Tape::Node& n = tape_->node(id_);
    if (!n.has_grad)
        throw std::logic_error("gradient requested before backward pass (node op '" + n.op + "')");
    return n.grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::apply(const std::string& op, Tensor value, std::vector<int> parents,
                std::function<void(Tape&, const Node&)> backward_fn) {
    if (!value.all_finite())
        throw std::runtime_error("primitive '" + op + "' produced a non-finite value");
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (int p : parents)
        if (nodes_[static_cast<std::size_t>(p)].requires_grad) n.requires_grad = true;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate_grad(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = Tensor::zeros(n.value.shape);
        n.has_grad = true;
    }
    if (!n.grad.same_shape(g))
        throw std::logic_error("gradient shape " + shape_str(g.shape) + " does not match value shape " +
                               shape_str(n.value.shape) + " at op '" + n.op + "'");
    for (std::int64_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
}

void Tape::backward(const Var& output) {
    if (output.tape() != this) throw std::logic_error("backward called with a var from another tape");
    const Node& out = node(output.id());
    if (out.value.numel() != 1)
        throw std::invalid_argument("backward requires a scalar output, got shape " + shape_str(out.value.shape));
    accumulate_grad(output.id(), Tensor::scalar(1.0));
    // Nodes are appended in forward order, so reverse index order is a
    // valid reverse topological order.
    for (int id = output.id(); id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad || !n.has_grad || !n.backward_fn) continue;
        n.backward_fn(*this, n);
    }
}

} // namespace gttdi
