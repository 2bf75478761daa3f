#include "gcmcg/autodiff.hpp"
#include "gcmcg/kernels.hpp"

#include <cmath>
#include <memory>

namespace gcmcg::ad {

using kernels::active;

// ---- Var -------------------------------------------------------------------

const Tensor& Var::value() const {
    if (!tape_) throw error("Var: unbound handle");
    return tape_->value(*this);
}

const Tensor& Var::grad() const {
    if (!tape_) throw error("Var: unbound handle");
    return tape_->grad(*this);
}

bool Var::requires_grad() const {
    if (!tape_) throw error("Var: unbound handle");
    return tape_->nodes_[static_cast<std::size_t>(idx_)].requires_grad;
}

// ---- Tape ------------------------------------------------------------------

int Tape::push(Node n) {
    if (!n.value.all_finite())
        throw error("tape: non-finite value produced" + (n.name.empty() ? std::string() : " for " + n.name));
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::input(const std::string& name, Tensor value, bool requires_grad) {
    if (name.empty()) throw error("tape: input name must be nonempty");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.name = name;
    return Var(this, push(std::move(n)));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = false;
    return Var(this, push(std::move(n)));
}

const Tensor& Tape::value(const Var& v) const {
    return nodes_.at(static_cast<std::size_t>(v.idx_)).value;
}

const Tensor& Tape::value_at(int idx) const {
    return nodes_.at(static_cast<std::size_t>(idx)).value;
}

Tensor& Tape::grad_slot(int idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

void Tape::accumulate(int idx, const double* g, std::size_t n) {
    Node& node = nodes_[static_cast<std::size_t>(idx)];
    if (!node.requires_grad) return;
    Tensor& slot = grad_slot(idx);
    active().axpy(1.0, g, slot.data(), n);
}

void Tape::accumulate_at(int idx, std::size_t offset, const double* g, std::size_t n) {
    Node& node = nodes_[static_cast<std::size_t>(idx)];
    if (!node.requires_grad) return;
    Tensor& slot = grad_slot(idx);
    active().axpy(1.0, g, slot.data() + offset, n);
}

void Tape::backward(const Var& output) {
    backward(output, Tensor::full(value(output).shape(), 1.0));
}

void Tape::backward(const Var& output, const Tensor& seed) {
    if (output.tape() != this) throw error("backward: output from a different tape");
    if (backward_run_) throw error("backward: already run on this tape; rebuild the tape");
    const Tensor& out = value(output);
    if (seed.shape() != out.shape())
        throw error("backward: seed shape " + seed.shape_str() + " != output shape " + out.shape_str());
    nodes_[static_cast<std::size_t>(output.index())].grad = seed;
    for (int i = output.index(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.size() == 0 || !n.backprop) continue;
        n.backprop(*this, n.grad);
    }
    backward_run_ = true;
}

const Tensor& Tape::grad(const Var& v) const {
    if (!backward_run_) throw error("grad: backward has not been run on this tape");
    const Node& n = nodes_.at(static_cast<std::size_t>(v.idx_));
    if (n.grad.size() == 0) {
        static thread_local Tensor zero;
        zero = Tensor::zeros(n.value.shape());
        return zero;
    }
    return n.grad;
}

std::map<std::string, Tensor> Tape::input_gradients() const {
    if (!backward_run_) throw error("input_gradients: backward has not been run");
    std::map<std::string, Tensor> out;
    for (const Node& n : nodes_) {
        if (n.name.empty() || !n.requires_grad) continue;
        out[n.name] = n.grad.size() ? n.grad : Tensor::zeros(n.value.shape());
    }
    return out;
}

// ---- op plumbing -----------------------------------------------------------

namespace {

Tape* tape_of(const Var& a) {
    if (!a.valid()) throw error("op: unbound Var");
    return a.tape();
}

Tape* same_tape(const Var& a, const Var& b) {
    Tape* t = tape_of(a);
    if (t != tape_of(b)) throw error("op: operands from different tapes");
    return t;
}

} // namespace

// The builder needs Tape internals; implemented as a friend class.
class OpBuilder {
public:
    OpBuilder(Tape* tape, Tensor value) : tape_(tape) {
        node_.value = std::move(value);
    }
    OpBuilder& depends(const Var& v) {
        node_.requires_grad = node_.requires_grad || v.requires_grad();
        return *this;
    }
    OpBuilder& backward(std::function<void(Tape&, const Tensor&)> fn) {
        backprop_ = std::move(fn);
        return *this;
    }
    Var build() {
        if (node_.requires_grad) node_.backprop = std::move(backprop_);
        return Var(tape_, tape_->push(std::move(node_)));
    }

private:
    Tape* tape_;
    Tape::Node node_;
    std::function<void(Tape&, const Tensor&)> backprop_;
};

namespace {

void check_same_shape(const char* op, const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw error(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                    b.value().shape_str());
}

} // namespace

// ---- arithmetic ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_same_shape("add", a, b);
    Tensor out(a.value().shape());
    active().vadd(a.value().data(), b.value().data(), out.data(), out.size());
    const int ai = a.index(), bi = b.index();
    const std::size_t n = out.size();
    return OpBuilder(t, std::move(out))
        .depends(a)
        .depends(b)
        .backward([ai, bi, n](Tape& t, const Tensor& g) {
            t.accumulate(ai, g.data(), n);
            t.accumulate(bi, g.data(), n);
        })
        .build();
}

Var sub(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_same_shape("sub", a, b);
    Tensor out(a.value().shape());
    active().vsub(a.value().data(), b.value().data(), out.data(), out.size());
    const int ai = a.index(), bi = b.index();
    const std::size_t n = out.size();
    return OpBuilder(t, std::move(out))
        .depends(a)
        .depends(b)
        .backward([ai, bi, n](Tape& t, const Tensor& g) {
            t.accumulate(ai, g.data(), n);
            std::vector<double> ng(n);
            for (std::size_t i = 0; i < n; ++i) ng[i] = -g.at(i);
            t.accumulate(bi, ng.data(), n);
        })
        .build();
}

Var mul(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_same_shape("mul", a, b);
    Tensor out(a.value().shape());
    active().vmul(a.value().data(), b.value().data(), out.data(), out.size());
    const int ai = a.index(), bi = b.index();
    const std::size_t n = out.size();
    return OpBuilder(t, std::move(out))
        .depends(a)
        .depends(b)
        .backward([ai, bi, n](Tape& t, const Tensor& g) {
            std::vector<double> tmp(n);
            active().vmul(g.data(), t.value_at(bi).data(), tmp.data(), n);
            t.accumulate(ai, tmp.data(), n);
            active().vmul(g.data(), t.value_at(ai).data(), tmp.data(), n);
            t.accumulate(bi, tmp.data(), n);
        })
        .build();
}

Var div(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_same_shape("div", a, b);
    const Tensor& xa = a.value();
    const Tensor& xb = b.value();
    Tensor out(xa.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (xb.at(i) == 0.0) throw error("div: division by zero");
        out.at(i) = xa.at(i) / xb.at(i);
    }
    const int ai = a.index(), bi = b.index();
    const std::size_t n = out.size();
    return OpBuilder(t, std::move(out))
        .depends(a)
        .depends(b)
        .backward([ai, bi, n](Tape& t, const Tensor& g) {
            const Tensor& va = t.value_at(ai);
            const Tensor& vb = t.value_at(bi);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = g.at(i) / vb.at(i);
            t.accumulate(ai, tmp.data(), n);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = -g.at(i) * va.at(i) / (vb.at(i) * vb.at(i));
            t.accumulate(bi, tmp.data(), n);
        })
        .build();
}

Var neg(const Var& a) { return scale_const(a, -1.0); }

Var scale_const(const Var& a, double c) {
    Tensor out = a.value();
    active().scale(c, out.data(), out.size());
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, c, n](Tape& t, const Tensor& g) {
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = c * g.at(i);
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var add_const(const Var& a, double c) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += c;
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n](Tape& t, const Tensor& g) { t.accumulate(ai, g.data(), n); })
        .build();
}

// ---- matrix ops ------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
        throw error("matmul: incompatible shapes " + A.shape_str() + " x " + B.shape_str());
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor out({m, n});
    kernels::gemm_acc(A.data(), B.data(), out.data(), m, k, n);
    const int ai = a.index(), bi = b.index();
    return OpBuilder(t, std::move(out))
        .depends(a)
        .depends(b)
        .backward([ai, bi, m, k, n](Tape& t, const Tensor& g) {
            const Tensor& A = t.value_at(ai);
            const Tensor& B = t.value_at(bi);
            // dA[i,:] = g[i,:] * B^T  (row i of g times B rows)
            std::vector<double> tmp(k);
            for (std::size_t i = 0; i < m; ++i) {
                kernels::gemv(B.data(), g.data() + i * n, tmp.data(), k, n);
                t.accumulate_at(ai, i * k, tmp.data(), k);
            }
            // dB += A^T * g
            Tensor dB({k, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    const double aval = A.at(i, l);
                    if (aval != 0.0) active().axpy(aval, g.data() + i * n, dB.data() + l * n, n);
                }
            t.accumulate(bi, dB.data(), dB.size());
        })
        .build();
}

Var matvec(const Var& m, const Var& v) {
    Tape* t = same_tape(m, v);
    const Tensor& M = m.value();
    const Tensor& x = v.value();
    if (M.rank() != 2 || x.rank() != 1 || M.dim(1) != x.dim(0))
        throw error("matvec: incompatible shapes " + M.shape_str() + " x " + x.shape_str());
    const std::size_t rows = M.dim(0), cols = M.dim(1);
    Tensor out({rows});
    kernels::gemv(M.data(), x.data(), out.data(), rows, cols);
    const int mi = m.index(), vi = v.index();
    return OpBuilder(t, std::move(out))
        .depends(m)
        .depends(v)
        .backward([mi, vi, rows, cols](Tape& t, const Tensor& g) {
            const Tensor& M = t.value_at(mi);
            const Tensor& x = t.value_at(vi);
            for (std::size_t i = 0; i < rows; ++i) {
                std::vector<double> tmp(cols);
                active().axpy(g.at(i), x.data(), tmp.data(), cols);
                t.accumulate_at(mi, i * cols, tmp.data(), cols);
            }
            Tensor dv({cols});
            kernels::gemv_t_acc(M.data(), g.data(), dv.data(), rows, cols);
            t.accumulate(vi, dv.data(), cols);
        })
        .build();
}

Var vecmat(const Var& v, const Var& m) {
    Tape* t = same_tape(v, m);
    const Tensor& x = v.value();
    const Tensor& M = m.value();
    if (x.rank() != 1 || M.rank() != 2 || x.dim(0) != M.dim(0))
        throw error("vecmat: incompatible shapes " + x.shape_str() + " x " + M.shape_str());
    const std::size_t rows = M.dim(0), cols = M.dim(1);
    Tensor out({cols});
    kernels::gemv_t_acc(M.data(), x.data(), out.data(), rows, cols);
    const int vi = v.index(), mi = m.index();
    return OpBuilder(t, std::move(out))
        .depends(v)
        .depends(m)
        .backward([vi, mi, rows, cols](Tape& t, const Tensor& g) {
            const Tensor& x = t.value_at(vi);
            const Tensor& M = t.value_at(mi);
            Tensor dv({rows});
            kernels::gemv(M.data(), g.data(), dv.data(), rows, cols);
            t.accumulate(vi, dv.data(), rows);
            for (std::size_t i = 0; i < rows; ++i) {
                if (x.at(i) == 0.0) continue;
                std::vector<double> tmp(cols);
                active().axpy(x.at(i), g.data(), tmp.data(), cols);
                t.accumulate_at(mi, i * cols, tmp.data(), cols);
            }
        })
        .build();
}

Var transpose(const Var& m) {
    const Tensor& M = m.value();
    if (M.rank() != 2) throw error("transpose: expected rank-2, got " + M.shape_str());
    const std::size_t rows = M.dim(0), cols = M.dim(1);
    Tensor out({cols, rows});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out.at(j, i) = M.at(i, j);
    const int mi = m.index();
    return OpBuilder(m.tape(), std::move(out))
        .depends(m)
        .backward([mi, rows, cols](Tape& t, const Tensor& g) {
            Tensor dg({rows, cols});
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) dg.at(i, j) = g.at(j, i);
            t.accumulate(mi, dg.data(), dg.size());
        })
        .build();
}

// ---- convolution -----------------------------------------------------------

namespace {

Var conv1d_single(const Var& x, const Var& kernel, std::size_t stride) {
    Tape* t = same_tape(x, kernel);
    const Tensor& xs = x.value();
    const Tensor& w = kernel.value();
    const std::size_t S = xs.dim(0), K = w.dim(0);
    if (stride == 0) throw error("conv1d: stride must be positive");
    if (S < K)
        throw error("conv1d: input length " + std::to_string(S) + " shorter than kernel " +
                    std::to_string(K));
    const std::size_t T = (S - K) / stride + 1;
    Tensor out({T});
    for (std::size_t i = 0; i < T; ++i)
        out.at(i) = active().dot(xs.data() + i * stride, w.data(), K);
    const int xi = x.index(), wi = kernel.index();
    return OpBuilder(t, std::move(out))
        .depends(x)
        .depends(kernel)
        .backward([xi, wi, S, K, T, stride](Tape& t, const Tensor& g) {
            const Tensor& xs = t.value_at(xi);
            const Tensor& w = t.value_at(wi);
            Tensor dx({S});
            Tensor dw({K});
            for (std::size_t i = 0; i < T; ++i) {
                active().axpy(g.at(i), w.data(), dx.data() + i * stride, K);
                active().axpy(g.at(i), xs.data() + i * stride, dw.data(), K);
            }
            t.accumulate(xi, dx.data(), S);
            t.accumulate(wi, dw.data(), K);
        })
        .build();
}

// Multichannel conv with kernel (D,C,K); weights are repacked to (C,K,D) so
// the inner loops run contiguously over D.
Var conv1d_multi(const Var& x, const Var& kernel, const Var* bias, std::size_t stride) {
    Tape* t = same_tape(x, kernel);
    const Tensor& X = x.value();
    const Tensor& W = kernel.value();
    if (X.rank() != 2 || W.rank() != 3)
        throw error("conv1d: expected input (C,S) with kernel (D,C,K), got " + X.shape_str() +
                    " and " + W.shape_str());
    const std::size_t C = X.dim(0), S = X.dim(1);
    const std::size_t D = W.dim(0), Kc = W.dim(1), K = W.dim(2);
    if (Kc != C)
        throw error("conv1d: kernel channel count " + std::to_string(Kc) +
                    " != input channels " + std::to_string(C));
    if (stride == 0) throw error("conv1d: stride must be positive");
    if (S < K)
        throw error("conv1d: sequence length " + std::to_string(S) + " shorter than kernel " +
                    std::to_string(K));
    const std::size_t T = (S - K) / stride + 1;
    if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != D))
        throw error("conv1d: bias shape " + bias->value().shape_str() + " != (D)");

    auto wt = std::make_shared<std::vector<double>>(C * K * D);
    for (std::size_t d = 0; d < D; ++d)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < K; ++k)
                (*wt)[(c * K + k) * D + d] = W.at(d, c, k);

    Tensor out({D, T});
    std::vector<double> acc(D);
    for (std::size_t ti = 0; ti < T; ++ti) {
        if (bias)
            for (std::size_t d = 0; d < D; ++d) acc[d] = bias->value().at(d);
        else
            std::fill(acc.begin(), acc.end(), 0.0);
        const std::size_t base = ti * stride;
        for (std::size_t c = 0; c < C; ++c) {
            const double* xrow = X.data() + c * S + base;
            for (std::size_t k = 0; k < K; ++k) {
                if (xrow[k] != 0.0) active().axpy(xrow[k], wt->data() + (c * K + k) * D, acc.data(), D);
            }
        }
        for (std::size_t d = 0; d < D; ++d) out.at(d, ti) = acc[d];
    }

    const int xi = x.index(), wi = kernel.index();
    const int bi = bias ? bias->index() : -1;
    OpBuilder b(t, std::move(out));
    b.depends(x).depends(kernel);
    if (bias) b.depends(*bias);
    return b
        .backward([xi, wi, bi, wt, C, S, D, K, T, stride](Tape& t, const Tensor& g) {
            const Tensor& X = t.value_at(xi);
            Tensor dX({C, S});
            Tensor dW({D, C, K});
            std::vector<double> dwt(C * K * D, 0.0);
            std::vector<double> gcol(D);
            for (std::size_t ti = 0; ti < T; ++ti) {
                for (std::size_t d = 0; d < D; ++d) gcol[d] = g.at(d, ti);
                const std::size_t base = ti * stride;
                for (std::size_t c = 0; c < C; ++c) {
                    const double* xrow = X.data() + c * S + base;
                    double* dxrow = dX.data() + c * S + base;
                    for (std::size_t k = 0; k < K; ++k) {
                        dxrow[k] += active().dot(wt->data() + (c * K + k) * D, gcol.data(), D);
                        if (xrow[k] != 0.0)
                            active().axpy(xrow[k], gcol.data(), dwt.data() + (c * K + k) * D, D);
                    }
                }
            }
            for (std::size_t d = 0; d < D; ++d)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t k = 0; k < K; ++k)
                        dW.at(d, c, k) = dwt[(c * K + k) * D + d];
            t.accumulate(xi, dX.data(), dX.size());
            t.accumulate(wi, dW.data(), dW.size());
            if (bi >= 0) {
                Tensor db({D});
                for (std::size_t d = 0; d < D; ++d)
                    for (std::size_t ti = 0; ti < T; ++ti) db.at(d) += g.at(d, ti);
                t.accumulate(bi, db.data(), D);
            }
        })
        .build();
}

} // namespace

Var conv1d(const Var& x, const Var& kernel, std::size_t stride) {
    if (x.value().rank() == 1 && kernel.value().rank() == 1)
        return conv1d_single(x, kernel, stride);
    return conv1d_multi(x, kernel, nullptr, stride);
}

Var conv1d(const Var& x, const Var& kernel, const Var& bias, std::size_t stride) {
    return conv1d_multi(x, kernel, &bias, stride);
}

// ---- elementwise nonlinearities ---------------------------------------------

Var exp_(const Var& a) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = std::exp(x.at(i));
    const int ai = a.index();
    const std::size_t n = out.size();
    auto outcopy = std::make_shared<Tensor>(out);
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, outcopy](Tape& t, const Tensor& g) {
            std::vector<double> tmp(n);
            active().vmul(g.data(), outcopy->data(), tmp.data(), n);
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var log_(const Var& a) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.at(i) <= 0.0)
            throw error("log: non-positive value " + std::to_string(x.at(i)) + " at index " +
                        std::to_string(i));
        out.at(i) = std::log(x.at(i));
    }
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_at(ai);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = g.at(i) / xv.at(i);
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var log_clamped(const Var& a, double floor) {
    if (floor <= 0.0) throw error("log_clamped: floor must be positive");
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = std::log(std::max(x.at(i), floor));
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, floor](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_at(ai);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = xv.at(i) > floor ? g.at(i) / xv.at(i) : 0.0;
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var log_offset(const Var& a, double eps) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.at(i) + eps;
        if (v <= 0.0) throw error("log_offset: non-positive shifted value");
        out.at(i) = std::log(v);
    }
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, eps](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_at(ai);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = g.at(i) / (xv.at(i) + eps);
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var tanh_(const Var& a) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = std::tanh(x.at(i));
    const int ai = a.index();
    const std::size_t n = out.size();
    auto outcopy = std::make_shared<Tensor>(out);
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, outcopy](Tape& t, const Tensor& g) {
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double y = outcopy->at(i);
                tmp[i] = g.at(i) * (1.0 - y * y);
            }
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var sigmoid(const Var& a) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.at(i);
        out.at(i) = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    const int ai = a.index();
    const std::size_t n = out.size();
    auto outcopy = std::make_shared<Tensor>(out);
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, outcopy](Tape& t, const Tensor& g) {
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double y = outcopy->at(i);
                tmp[i] = g.at(i) * y * (1.0 - y);
            }
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var relu(const Var& a) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = x.at(i) > 0.0 ? x.at(i) : 0.0;
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_at(ai);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = xv.at(i) > 0.0 ? g.at(i) : 0.0;
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var leaky_relu(const Var& a, double slope) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        out.at(i) = x.at(i) > 0.0 ? x.at(i) : slope * x.at(i);
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, slope](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_at(ai);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = xv.at(i) > 0.0 ? g.at(i) : slope * g.at(i);
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var elu(const Var& a) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        out.at(i) = x.at(i) > 0.0 ? x.at(i) : std::expm1(x.at(i));
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_at(ai);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = xv.at(i) > 0.0 ? g.at(i) : g.at(i) * std::exp(xv.at(i));
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var clamp(const Var& a, double lo, double hi) {
    if (lo > hi) throw error("clamp: lo > hi");
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = std::min(std::max(x.at(i), lo), hi);
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, lo, hi](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_at(ai);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = (xv.at(i) > lo && xv.at(i) < hi) ? g.at(i) : 0.0;
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var pow_const(const Var& a, double p) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = std::pow(x.at(i), p);
    const int ai = a.index();
    const std::size_t n = out.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, p](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_at(ai);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = g.at(i) * p * std::pow(xv.at(i), p - 1.0);
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var softmax(const Var& a) {
    const Tensor& x = a.value();
    if (x.rank() != 1) throw error("softmax: expected rank-1, got " + x.shape_str());
    const std::size_t n = x.size();
    double mx = x.at(0);
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x.at(i));
    Tensor out({n});
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.at(i) = std::exp(x.at(i) - mx);
        z += out.at(i);
    }
    for (std::size_t i = 0; i < n; ++i) out.at(i) /= z;
    const int ai = a.index();
    auto outcopy = std::make_shared<Tensor>(out);
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n, outcopy](Tape& t, const Tensor& g) {
            const double dots = active().dot(g.data(), outcopy->data(), n);
            std::vector<double> tmp(n);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = outcopy->at(i) * (g.at(i) - dots);
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

// ---- reductions --------------------------------------------------------------

Var sum(const Var& a) {
    const Tensor& x = a.value();
    Tensor out = Tensor::scalar(active().sum(x.data(), x.size()));
    const int ai = a.index();
    const std::size_t n = x.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n](Tape& t, const Tensor& g) {
            std::vector<double> tmp(n, g.at(0));
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

Var mean(const Var& a) {
    const Tensor& x = a.value();
    const std::size_t n = x.size();
    Tensor out = Tensor::scalar(active().sum(x.data(), n) / static_cast<double>(n));
    const int ai = a.index();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, n](Tape& t, const Tensor& g) {
            std::vector<double> tmp(n, g.at(0) / static_cast<double>(n));
            t.accumulate(ai, tmp.data(), n);
        })
        .build();
}

// ---- shape ops -----------------------------------------------------------------

Var concat1d(const std::vector<Var>& parts) {
    if (parts.empty()) throw error("concat: no inputs");
    Tape* t = tape_of(parts[0]);
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.tape() != t) throw error("concat: operands from different tapes");
        if (p.value().rank() != 1) throw error("concat: expected rank-1 parts");
        total += p.value().size();
    }
    Tensor out({total});
    std::size_t off = 0;
    std::vector<int> idxs;
    std::vector<std::size_t> sizes, offs;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        std::copy(v.data(), v.data() + v.size(), out.data() + off);
        idxs.push_back(p.index());
        sizes.push_back(v.size());
        offs.push_back(off);
        off += v.size();
    }
    OpBuilder b(t, std::move(out));
    for (const Var& p : parts) b.depends(p);
    return b
        .backward([idxs, sizes, offs](Tape& t, const Tensor& g) {
            for (std::size_t i = 0; i < idxs.size(); ++i)
                t.accumulate(idxs[i], g.data() + offs[i], sizes[i]);
        })
        .build();
}

Var slice1d(const Var& a, std::size_t begin, std::size_t len) {
    const Tensor& x = a.value();
    if (x.rank() != 1 || begin + len > x.size())
        throw error("slice: [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                    ") out of range for " + x.shape_str());
    Tensor out({len});
    std::copy(x.data() + begin, x.data() + begin + len, out.data());
    const int ai = a.index();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, begin, len](Tape& t, const Tensor& g) {
            t.accumulate_at(ai, begin, g.data(), len);
        })
        .build();
}

Var gather1d(const Var& a, std::vector<std::size_t> indices) {
    const Tensor& x = a.value();
    if (x.rank() != 1) throw error("gather: expected rank-1, got " + x.shape_str());
    for (std::size_t i : indices)
        if (i >= x.size()) throw error("gather: index " + std::to_string(i) + " out of range");
    Tensor out({indices.size()});
    for (std::size_t i = 0; i < indices.size(); ++i) out.at(i) = x.at(indices[i]);
    const int ai = a.index();
    const std::size_t n = x.size();
    return OpBuilder(a.tape(), std::move(out))
        .depends(a)
        .backward([ai, indices, n](Tape& t, const Tensor& g) {
            Tensor dx({n});
            for (std::size_t i = 0; i < indices.size(); ++i) dx.at(indices[i]) += g.at(i);
            t.accumulate(ai, dx.data(), n);
        })
        .build();
}

Var gather_rows(const Var& m, std::vector<std::size_t> indices) {
    const Tensor& M = m.value();
    if (M.rank() != 2) throw error("gather_rows: expected rank-2, got " + M.shape_str());
    const std::size_t rows = M.dim(0), cols = M.dim(1);
    for (std::size_t i : indices)
        if (i >= rows) throw error("gather_rows: index " + std::to_string(i) + " out of range");
    Tensor out({indices.size(), cols});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy(M.data() + indices[i] * cols, M.data() + (indices[i] + 1) * cols,
                  out.data() + i * cols);
    const int mi = m.index();
    return OpBuilder(m.tape(), std::move(out))
        .depends(m)
        .backward([mi, indices, cols](Tape& t, const Tensor& g) {
            for (std::size_t i = 0; i < indices.size(); ++i)
                t.accumulate_at(mi, indices[i] * cols, g.data() + i * cols, cols);
        })
        .build();
}

Var row_vec(const Var& m, std::size_t row) {
    const Tensor& M = m.value();
    if (M.rank() != 2 || row >= M.dim(0))
        throw error("row_vec: row " + std::to_string(row) + " out of range for " + M.shape_str());
    const std::size_t cols = M.dim(1);
    Tensor out({cols});
    std::copy(M.data() + row * cols, M.data() + (row + 1) * cols, out.data());
    const int mi = m.index();
    return OpBuilder(m.tape(), std::move(out))
        .depends(m)
        .backward([mi, row, cols](Tape& t, const Tensor& g) {
            t.accumulate_at(mi, row * cols, g.data(), cols);
        })
        .build();
}

Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw error("stack_rows: no inputs");
    Tape* t = tape_of(rows[0]);
    const std::size_t cols = rows[0].value().size();
    for (const Var& r : rows) {
        if (r.tape() != t) throw error("stack_rows: operands from different tapes");
        if (r.value().rank() != 1 || r.value().size() != cols)
            throw error("stack_rows: row shape mismatch");
    }
    Tensor out({rows.size(), cols});
    std::vector<int> idxs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(rows[i].value().data(), rows[i].value().data() + cols, out.data() + i * cols);
        idxs.push_back(rows[i].index());
    }
    OpBuilder b(t, std::move(out));
    for (const Var& r : rows) b.depends(r);
    return b
        .backward([idxs, cols](Tape& t, const Tensor& g) {
            for (std::size_t i = 0; i < idxs.size(); ++i)
                t.accumulate(idxs[i], g.data() + i * cols, cols);
        })
        .build();
}

Var concat_rows(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1))
        throw error("concat_rows: shapes " + A.shape_str() + " and " + B.shape_str());
    const std::size_t cols = A.dim(1);
    Tensor out({A.dim(0) + B.dim(0), cols});
    std::copy(A.data(), A.data() + A.size(), out.data());
    std::copy(B.data(), B.data() + B.size(), out.data() + A.size());
    const int ai = a.index(), bi = b.index();
    const std::size_t an = A.size(), bn = B.size();
    return OpBuilder(t, std::move(out))
        .depends(a)
        .depends(b)
        .backward([ai, bi, an, bn](Tape& t, const Tensor& g) {
            t.accumulate(ai, g.data(), an);
            t.accumulate(bi, g.data() + an, bn);
        })
        .build();
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw error("concat_cols: no inputs");
    Tape* t = tape_of(parts[0]);
    const std::size_t rows = parts[0].value().dim(0);
    std::size_t total_cols = 0;
    for (const Var& p : parts) {
        if (p.tape() != t) throw error("concat_cols: operands from different tapes");
        if (p.value().rank() != 2 || p.value().dim(0) != rows)
            throw error("concat_cols: row count mismatch");
        total_cols += p.value().dim(1);
    }
    Tensor out({rows, total_cols});
    std::vector<int> idxs;
    std::vector<std::size_t> widths, offs;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        const std::size_t w = v.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(v.data() + r * w, v.data() + (r + 1) * w, out.data() + r * total_cols + off);
        idxs.push_back(p.index());
        widths.push_back(w);
        offs.push_back(off);
        off += w;
    }
    OpBuilder b(t, std::move(out));
    for (const Var& p : parts) b.depends(p);
    return b
        .backward([idxs, widths, offs, rows, total_cols](Tape& t, const Tensor& g) {
            for (std::size_t i = 0; i < idxs.size(); ++i) {
                Tensor dp({rows, widths[i]});
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy(g.data() + r * total_cols + offs[i],
                              g.data() + r * total_cols + offs[i] + widths[i],
                              dp.data() + r * widths[i]);
                t.accumulate(idxs[i], dp.data(), dp.size());
            }
        })
        .build();
}

Var mean_rows(const Var& m) {
    const Tensor& M = m.value();
    if (M.rank() != 2) throw error("mean_rows: expected rank-2, got " + M.shape_str());
    const std::size_t rows = M.dim(0), cols = M.dim(1);
    Tensor out({cols});
    for (std::size_t r = 0; r < rows; ++r)
        active().axpy(1.0 / static_cast<double>(rows), M.data() + r * cols, out.data(), cols);
    const int mi = m.index();
    return OpBuilder(m.tape(), std::move(out))
        .depends(m)
        .backward([mi, rows, cols](Tape& t, const Tensor& g) {
            std::vector<double> tmp(cols);
            for (std::size_t j = 0; j < cols; ++j) tmp[j] = g.at(j) / static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r) t.accumulate_at(mi, r * cols, tmp.data(), cols);
        })
        .build();
}

Var tile_cols(const Var& v, std::size_t ncols) {
    const Tensor& x = v.value();
    if (x.rank() != 1) throw error("tile_cols: expected rank-1, got " + x.shape_str());
    if (ncols == 0) throw error("tile_cols: zero columns");
    const std::size_t m = x.size();
    Tensor out({m, ncols});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < ncols; ++j) out.at(i, j) = x.at(i);
    const int vi = v.index();
    return OpBuilder(v.tape(), std::move(out))
        .depends(v)
        .backward([vi, m, ncols](Tape& t, const Tensor& g) {
            Tensor dv({m});
            for (std::size_t i = 0; i < m; ++i)
                dv.at(i) = active().sum(g.data() + i * ncols, ncols);
            t.accumulate(vi, dv.data(), m);
        })
        .build();
}

Var broadcast_row(const Var& v, std::size_t nrows) {
    const Tensor& x = v.value();
    if (x.rank() != 1) throw error("broadcast_row: expected rank-1, got " + x.shape_str());
    if (nrows == 0) throw error("broadcast_row: zero rows");
    const std::size_t n = x.size();
    Tensor out({nrows, n});
    for (std::size_t r = 0; r < nrows; ++r)
        std::copy(x.data(), x.data() + n, out.data() + r * n);
    const int vi = v.index();
    return OpBuilder(v.tape(), std::move(out))
        .depends(v)
        .backward([vi, nrows, n](Tape& t, const Tensor& g) {
            Tensor dv({n});
            for (std::size_t r = 0; r < nrows; ++r)
                active().vadd(dv.data(), g.data() + r * n, dv.data(), n);
            t.accumulate(vi, dv.data(), n);
        })
        .build();
}

Var broadcast_scalar(const Var& s, std::size_t n) {
    const Tensor& x = s.value();
    if (x.size() != 1) throw error("broadcast_scalar: expected scalar, got " + x.shape_str());
    Tensor out = Tensor::full({n}, x.at(0));
    const int si = s.index();
    return OpBuilder(s.tape(), std::move(out))
        .depends(s)
        .backward([si, n](Tape& t, const Tensor& g) {
            const double total = active().sum(g.data(), n);
            t.accumulate(si, &total, 1);
        })
        .build();
}

Var add_scalar(const Var& a, const Var& s) {
    Tape* t = same_tape(a, s);
    const Tensor& x = a.value();
    const Tensor& sv = s.value();
    if (sv.size() != 1) throw error("add_scalar: expected scalar addend, got " + sv.shape_str());
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += sv.at(0);
    const int ai = a.index(), si = s.index();
    const std::size_t n = out.size();
    return OpBuilder(t, std::move(out))
        .depends(a)
        .depends(s)
        .backward([ai, si, n](Tape& t, const Tensor& g) {
            t.accumulate(ai, g.data(), n);
            const double total = active().sum(g.data(), n);
            t.accumulate(si, &total, 1);
        })
        .build();
}

// ---- gradient checking -------------------------------------------------------

double grad_check(const TapeFn& f, const std::map<std::string, Tensor>& inputs, double step) {
    if (step < 1e-6 || step > 1e-3)
        throw error("grad_check: step " + std::to_string(step) + " outside [1e-6, 1e-3]");

    auto evaluate = [&](const std::map<std::string, Tensor>& point, bool with_grad,
                        std::map<std::string, Tensor>* grads_out) -> double {
        Tape tape;
        std::map<std::string, Var> vars;
        for (const auto& [name, tensor] : point) vars[name] = tape.input(name, tensor, with_grad);
        Var y = f(tape, vars);
        if (y.value().size() != 1)
            throw error("grad_check: function output is not scalar, shape " +
                        y.value().shape_str());
        if (with_grad) {
            tape.backward(y, Tensor::scalar(1.0));
            *grads_out = tape.input_gradients();
        }
        return y.value().at(0);
    };

    std::map<std::string, Tensor> analytic;
    evaluate(inputs, true, &analytic);

    double max_err = 0.0;
    std::map<std::string, Tensor> point = inputs;
    for (auto& [name, tensor] : point) {
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double saved = tensor.at(i);
            tensor.at(i) = saved + step;
            const double fp = evaluate(point, false, nullptr);
            tensor.at(i) = saved - step;
            const double fm = evaluate(point, false, nullptr);
            tensor.at(i) = saved;
            const double central = (fp - fm) / (2.0 * step);
            const double a = analytic.count(name) ? analytic.at(name).at(i) : 0.0;
            const double err = std::fabs(a - central) / std::max(1.0, std::fabs(central));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

} // namespace gcmcg::ad
