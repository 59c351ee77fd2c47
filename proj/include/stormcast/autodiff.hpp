#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace stormcast {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major 64-bit tensor. Plain value type; differentiation state
// lives on the Tape, not here.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);

    std::int64_t numel() const;
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const;  // negative indices count from the back
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;
    double item() const;
};

class Tape;

// Handle to a tape node; cheap to copy, valid until the tape is cleared.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    bool defined() const { return tape_ != nullptr; }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so iterating
// ids backwards is a valid topological order for the backward sweep.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily during backward
        bool requires_grad = false;
        std::function<void(Tape&, const Tensor&)> backward;
    };

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    void backward(Var loss);
    void clear();
    std::size_t size() const { return nodes_.size(); }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Var emplace(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> back);
    // Adds g into the node's grad buffer, allocating it on first touch;
    // no-op for nodes that do not require gradients.
    void accumulate(int id, const Tensor& g);
    void accumulate(int id, const double* g, std::int64_t n);

private:
    std::vector<Node> nodes_;
};

// ---- differentiable ops ----
// 2-D (m,k)x(k,n) or batched 3-D (N,m,k)x(N,k,n)
Var matmul(Var a, Var b);
// same shape, or b's shape a trailing suffix of a's (bias-style broadcast)
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise, same shape
Var scale(Var a, double c);
Var relu(Var a);
Var softmax_lastdim(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_last(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);  // 2-D, along axis 0
Var reduce_mean(Var a);                          // -> scalar
Var transpose_last2(Var a);
Var masked_fill(Var a, const Tensor& mask01, double fill);
Var narrow_last(Var a, int start, int len);
Var take_row(Var a, int row);                       // (m,d) -> (d)
Var take_rows(Var a, const std::vector<int>& rows); // (m,d) -> (|rows|,d)
Var reshape(Var a, std::vector<int> shape);
Var linear(Var x, Var w, Var b);  // x*W + b

// SmoothL1 against a constant target: quadratic inside |d| < beta, linear
// outside; summed over the last axis, averaged over rows.
Var smooth_l1(Var pred, const Tensor& target, double beta = 1.0);

// ---- optimizer ----
struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig hyper;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    long t = 0;
};

void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state);

// ---- finite-difference verification ----
using ParamMap = std::map<std::string, Tensor>;
// Evaluates the loss for the given parameters; when grads_out is non-null
// also records tape gradients into it.
using ModelClosure = std::function<double(const ParamMap&, ParamMap* grads_out)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_coord = -1;
    std::size_t coords_checked = 0;
};

GradCheckReport grad_check(const ModelClosure& closure, const ParamMap& params,
                           double epsilon = 1e-5, std::size_t coords_per_tensor = 50,
                           std::uint64_t seed = 0);

}  // namespace stormcast
