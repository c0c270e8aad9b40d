#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace gttdi {

// Dense row-major 64-bit tensor. Plain value type, no autodiff state.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, double fill);
    Tensor(std::vector<int> s, std::vector<double> d);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    // Number of rows / row width when viewed as a 2-D matrix
    // (all leading axes collapsed into rows, last axis = columns).
    std::int64_t rows() const;
    std::int64_t cols() const { return shape.empty() ? 1 : shape.back(); }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    double& at2(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
    double at2(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

class Tape;

// Handle to a node on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }

    const Tensor& value() const;
    const Tensor& grad() const; // throws if backward has not produced one
    const std::vector<int>& shape() const { return value().shape; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Records one forward pass as a topologically ordered list of primitive
// applications; replayed in reverse for gradients.
class Tape {
public:
    struct Node {
        std::string op;            // primitive name, for error messages
        Tensor value;
        Tensor grad;               // allocated on demand during backward
        bool has_grad = false;
        bool requires_grad = false;
        std::vector<int> parents;
        // Accumulates into parent grads given this node's grad.
        std::function<void(Tape&, const Node&)> backward_fn;
    };

    // Leaves: inputs and parameters.
    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Interior node produced by a primitive application.
    Var apply(const std::string& op, Tensor value, std::vector<int> parents,
              std::function<void(Tape&, const Node&)> backward_fn);

    // Reverse pass from a scalar output; fills grads of every node that
    // requires them. Gradients accumulate additively across fan-out.
    void backward(const Var& output);

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(nodes_.size()); }

    void accumulate_grad(int id, const Tensor& g);

private:
    std::deque<Node> nodes_;
};

} // namespace gttdi
