#pragma once

#include "gcmcg/tensor.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace gcmcg::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    Tape* tape() const { return tape_; }
    int index() const { return idx_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    friend class OpBuilder;
    Var(Tape* t, int i) : tape_(t), idx_(i) {}
    Tape* tape_ = nullptr;
    int idx_ = -1;
};

// Define-by-run tape: each op evaluates its forward result immediately and
// records a closure that scatters the output gradient to its parents.
// Rebuild the tape for every forward pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(const std::string& name, Tensor value, bool requires_grad = true);
    Var constant(Tensor value);

    // Seed defaults to ones of the output shape.
    void backward(const Var& output);
    void backward(const Var& output, const Tensor& seed);

    const Tensor& value(const Var& v) const;
    const Tensor& value_at(int idx) const;
    const Tensor& grad(const Var& v) const;
    // Gradients of all named inputs with requires_grad, keyed by name.
    // Inputs the output does not depend on report zero gradients.
    std::map<std::string, Tensor> input_gradients() const;

    std::size_t node_count() const { return nodes_.size(); }
    bool backward_run() const { return backward_run_; }

    // Gradient scatter used by op backprop closures; no-ops on nodes that do
    // not require gradients.
    void accumulate(int idx, const double* g, std::size_t n);
    void accumulate_at(int idx, std::size_t offset, const double* g, std::size_t n);

private:
    friend class OpBuilder;
    friend class Var;
    struct Node {
        Tensor value;
        Tensor grad; // empty until first accumulation
        bool requires_grad = false;
        std::string name;
        std::function<void(Tape&, const Tensor&)> backprop;
    };
    std::vector<Node> nodes_;
    bool backward_run_ = false;

    int push(Node n);
    Tensor& grad_slot(int idx);
};

// ---- primitive ops -------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b); // also the mask multiply (mask as constant)
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale_const(const Var& a, double c);
Var add_const(const Var& a, double c);

Var matmul(const Var& a, const Var& b);             // (m,k)x(k,n) -> (m,n)
Var matvec(const Var& m, const Var& v);             // (m,n)x(n)   -> (m)
Var vecmat(const Var& v, const Var& m);             // (m)x(m,n)   -> (n)
Var transpose(const Var& m);

// 1-D cross-correlation, no padding. Rank-1 x with rank-1 kernel, or
// rank-2 x (C,S) with rank-3 kernel (D,C,K) and optional bias (D).
Var conv1d(const Var& x, const Var& kernel, std::size_t stride);
Var conv1d(const Var& x, const Var& kernel, const Var& bias, std::size_t stride);

Var exp_(const Var& a);
Var log_(const Var& a);                      // errors on non-positive values
Var log_clamped(const Var& a, double floor); // ln(max(a, floor))
Var log_offset(const Var& a, double eps);    // ln(a + eps)
Var tanh_(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var elu(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var pow_const(const Var& a, double p);
Var softmax(const Var& a); // rank-1

Var sum(const Var& a);  // -> scalar
Var mean(const Var& a); // -> scalar

Var concat1d(const std::vector<Var>& parts);
Var slice1d(const Var& a, std::size_t begin, std::size_t len);
Var gather1d(const Var& a, std::vector<std::size_t> indices);
Var gather_rows(const Var& m, std::vector<std::size_t> indices);
Var row_vec(const Var& m, std::size_t row); // (m,n) -> (n)
Var stack_rows(const std::vector<Var>& rows);
Var concat_rows(const Var& a, const Var& b);
Var concat_cols(const std::vector<Var>& parts);
Var mean_rows(const Var& m); // (m,n) -> (n), column means

Var tile_cols(const Var& v, std::size_t ncols);      // (m) -> (m,ncols)
Var broadcast_row(const Var& v, std::size_t nrows);  // (n) -> (nrows,n)
Var broadcast_scalar(const Var& s, std::size_t n);   // (1) -> (n)
Var add_scalar(const Var& a, const Var& s);          // a[i] + s

// ---- verification --------------------------------------------------------

using TapeFn = std::function<Var(Tape&, std::map<std::string, Var>&)>;

// Max over all coordinates of |analytic - central difference| /
// max(1, |central difference|). The function must be scalar-valued and the
// step must lie in [1e-6, 1e-3].
double grad_check(const TapeFn& f, const std::map<std::string, Tensor>& inputs, double step);

} // namespace gcmcg::ad
