#pragma once

// Reverse-mode automatic differentiation on a per-forward-pass tape. Nodes
// are created in topological order, so the backward sweep is a single reverse
// iteration; gradients accumulate by sum over all paths. The tape is rebuilt
// for every forward pass and never cached.
//
// Leaves can view external tensors (model parameters) without copying; the
// caller keeps those alive for the tape's lifetime.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "icluq/tensor.hpp"

namespace icluq {

struct Var {
    std::int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

class Tape {
public:
    Tape() { nodes_.reserve(256); }

    Var leaf(const Tensor& external) {
        Node n;
        n.external = &external;
        n.requires_grad = true;
        return push(std::move(n));
    }

    Var constant(Tensor value) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = false;
        return push(std::move(n));
    }

    const Tensor& val(Var v) const {
        const Node& n = nodes_[static_cast<std::size_t>(v.idx)];
        return n.external ? *n.external : n.value;
    }

    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].requires_grad; }

    // Gradient of the last backward() target w.r.t. v; zeros if v is off-path.
    Tensor grad(Var v) const {
        const Node& n = nodes_[static_cast<std::size_t>(v.idx)];
        if (n.grad.size() > 0) return n.grad;
        Tensor z(val(v).shape());
        return z;
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        Tensor out = icluq::add(val(a), val(b));
        return unary_or_binary(std::move(out), a, b, [](Tape& t, Var a, Var b, Var o) {
            const Tensor& g = t.node(o).grad;
            if (t.requires_grad(a)) axpy(1.0, g, t.grad_buf(a));
            if (t.requires_grad(b)) axpy(1.0, g, t.grad_buf(b));
        });
    }

    Var sub(Var a, Var b) {
        Tensor out = icluq::sub(val(a), val(b));
        return unary_or_binary(std::move(out), a, b, [](Tape& t, Var a, Var b, Var o) {
            const Tensor& g = t.node(o).grad;
            if (t.requires_grad(a)) axpy(1.0, g, t.grad_buf(a));
            if (t.requires_grad(b)) axpy(-1.0, g, t.grad_buf(b));
        });
    }

    Var scale(Var a, double s) {
        Tensor out = icluq::scale(val(a), s);
        return unary(std::move(out), a, [s](Tape& t, Var a, Var o) {
            axpy(s, t.node(o).grad, t.grad_buf(a));
        });
    }

    Var hadamard(Var a, Var b) {
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        detail::require(av.same_shape(bv), "hadamard: shape mismatch");
        Tensor out = av;
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
        return unary_or_binary(std::move(out), a, b, [](Tape& t, Var a, Var b, Var o) {
            const Tensor& g = t.node(o).grad;
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_buf(a);
                const Tensor& bv = t.val(b);
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_buf(b);
                const Tensor& av = t.val(a);
                for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }

    Var square(Var a) {
        Tensor out = val(a);
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= out[i];
        return unary(std::move(out), a, [](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            const Tensor& av = t.val(a);
            Tensor& ga = t.grad_buf(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
        });
    }

    Var relu(Var a) {
        Tensor out = val(a);
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        return unary(std::move(out), a, [](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            const Tensor& av = t.val(a);
            Tensor& ga = t.grad_buf(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += av[i] > 0.0 ? g[i] : 0.0;
        });
    }

    Var softplus(Var a) {
        Tensor out = val(a);
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = icluq::softplus(out[i]);
        return unary(std::move(out), a, [](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            const Tensor& av = t.val(a);
            Tensor& ga = t.grad_buf(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += logistic(av[i]) * g[i];
        });
    }

    Var log_ew(Var a) {
        Tensor out = val(a);
        for (std::int64_t i = 0; i < out.size(); ++i) {
            if (out[i] <= 0.0) throw DomainError("log of nonpositive value");
            out[i] = std::log(out[i]);
        }
        return unary(std::move(out), a, [](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            const Tensor& av = t.val(a);
            Tensor& ga = t.grad_buf(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
        });
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        double s = 0.0;
        const Tensor& av = val(a);
        for (std::int64_t i = 0; i < av.size(); ++i) s += av[i];
        Tensor out = Tensor::vector(1);
        out[0] = s;
        return unary(std::move(out), a, [](Tape& t, Var a, Var o) {
            const double g = t.node(o).grad[0];
            Tensor& ga = t.grad_buf(a);
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }

    Var mean_all(Var a) {
        const std::int64_t n = val(a).size();
        Var s = sum_all(a);
        return scale(s, 1.0 / static_cast<double>(n));
    }

    // ---- matrix products ----

    Var matmul(Var a, Var b) {
        Tensor out = icluq::matmul(val(a), val(b));
        return unary_or_binary(std::move(out), a, b, [](Tape& t, Var a, Var b, Var o) {
            const Tensor& g = t.node(o).grad;
            if (t.requires_grad(a)) {
                // dA += G * B^T
                const Tensor& bv = t.val(b);
                Tensor& ga = t.grad_buf(a);
                kernel_mm_nt(g.data(), bv.data(), ga.data(), g.rows(), g.cols(), bv.rows());
            }
            if (t.requires_grad(b)) {
                // dB += A^T * G
                const Tensor& av = t.val(a);
                Tensor& gb = t.grad_buf(b);
                kernel_mm_tn(av.data(), g.data(), gb.data(), av.rows(), av.cols(), g.cols());
            }
        });
    }

    // a * b^T
    Var matmul_nt(Var a, Var b) {
        Tensor out = icluq::matmul_nt(val(a), val(b));
        return unary_or_binary(std::move(out), a, b, [](Tape& t, Var a, Var b, Var o) {
            const Tensor& g = t.node(o).grad;
            if (t.requires_grad(a)) {
                // dA += G * B
                const Tensor& bv = t.val(b);
                Tensor& ga = t.grad_buf(a);
                kernel_mm_nn(g.data(), bv.data(), ga.data(), g.rows(), g.cols(), bv.cols());
            }
            if (t.requires_grad(b)) {
                // dB += G^T * A
                const Tensor& av = t.val(a);
                Tensor& gb = t.grad_buf(b);
                kernel_mm_tn(g.data(), av.data(), gb.data(), g.rows(), g.cols(), av.cols());
            }
        });
    }

    // ---- softmax ----

    // Column-wise softmax with max-subtraction; every column sums to one.
    Var softmax_cols(Var a) {
        const Tensor& av = val(a);
        detail::require(av.rank() == 2, "softmax_cols: rank-2 required");
        Tensor out = av;
        const std::int64_t r = av.rows(), c = av.cols();
        for (std::int64_t j = 0; j < c; ++j) {
            double m = out(0, j);
            for (std::int64_t i = 1; i < r; ++i) m = std::max(m, out(i, j));
            double s = 0.0;
            for (std::int64_t i = 0; i < r; ++i) {
                const double e = std::exp(out(i, j) - m);
                out(i, j) = e;
                s += e;
            }
            for (std::int64_t i = 0; i < r; ++i) out(i, j) /= s;
        }
        return unary(std::move(out), a, [](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            const Tensor& y = t.node(o).value;
            Tensor& ga = t.grad_buf(a);
            const std::int64_t r = y.rows(), c = y.cols();
            for (std::int64_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < r; ++i) acc += g(i, j) * y(i, j);
                for (std::int64_t i = 0; i < r; ++i) ga(i, j) += y(i, j) * (g(i, j) - acc);
            }
        });
    }

    // Per-row softmax restricted to the window [lo[r], r]; entries outside
    // the window are zero. Row r of the output depends only on row r of the
    // input within its own window, which keeps prefix evaluations bit-exact.
    Var window_softmax_rows(Var a, std::vector<std::int32_t> lo) {
        const Tensor& av = val(a);
        detail::require(av.rank() == 2 && av.rows() == av.cols(),
                        "window_softmax_rows: square score matrix required");
        detail::require(static_cast<std::int64_t>(lo.size()) == av.rows(),
                        "window_softmax_rows: one window per row required");
        Tensor out(av.rows(), av.cols());
        const std::int64_t n = av.rows();
        for (std::int64_t r = 0; r < n; ++r) {
            const std::int64_t l = lo[static_cast<std::size_t>(r)];
            const double* zin = av.row_ptr(r);
            double* zout = out.row_ptr(r);
            double m = zin[l];
            for (std::int64_t k = l + 1; k <= r; ++k) m = std::max(m, zin[k]);
            double s = 0.0;
            for (std::int64_t k = l; k <= r; ++k) {
                const double e = std::exp(zin[k] - m);
                zout[k] = e;
                s += e;
            }
            const double inv = 1.0 / s;
            for (std::int64_t k = l; k <= r; ++k) zout[k] *= inv;
        }
        auto lows = std::make_shared<std::vector<std::int32_t>>(std::move(lo));
        return unary(std::move(out), a, [lows](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            const Tensor& y = t.node(o).value;
            Tensor& ga = t.grad_buf(a);
            const std::int64_t n = y.rows();
            for (std::int64_t r = 0; r < n; ++r) {
                const std::int64_t l = (*lows)[static_cast<std::size_t>(r)];
                double acc = 0.0;
                for (std::int64_t k = l; k <= r; ++k) acc += g(r, k) * y(r, k);
                for (std::int64_t k = l; k <= r; ++k) ga(r, k) += y(r, k) * (g(r, k) - acc);
            }
        });
    }

    // ---- fused windowed attention ----
    //
    // Rows of q/k/v are tokens. For each query row r the scores q_r . k_j are
    // softmaxed over j in [lo[r], r] and the output row is the matching convex
    // combination of v rows. Equivalent to
    //   matmul(window_softmax_rows(matmul_nt(q, k), lo), v)
    // but skips the masked-out half of the score matrix in both directions.
    Var windowed_attention(Var q, Var k, Var v, std::vector<std::int32_t> lo) {
        const Tensor& qv = val(q);
        const Tensor& kv = val(k);
        const Tensor& vv = val(v);
        const std::int64_t n = qv.rows(), dm = qv.cols(), dv = vv.cols();
        detail::require(kv.rows() == n && kv.cols() == dm && vv.rows() == n,
                        "windowed_attention: shape mismatch");
        detail::require(static_cast<std::int64_t>(lo.size()) == n,
                        "windowed_attention: one window per row required");
        auto probs = std::make_shared<Tensor>(n, n);
        Tensor out(n, dv);
        for (std::int64_t r = 0; r < n; ++r) {
            const std::int64_t l = lo[static_cast<std::size_t>(r)];
            const double* qr = qv.row_ptr(r);
            double* pr = probs->row_ptr(r);
            double m = -1e300;
            for (std::int64_t j = l; j <= r; ++j) {
                const double* kj = kv.row_ptr(j);
                double s = 0.0;
                for (std::int64_t p = 0; p < dm; ++p) s += qr[p] * kj[p];
                pr[j] = s;
                if (s > m) m = s;
            }
            double z = 0.0;
            for (std::int64_t j = l; j <= r; ++j) {
                const double e = std::exp(pr[j] - m);
                pr[j] = e;
                z += e;
            }
            const double inv = 1.0 / z;
            double* orow = out.row_ptr(r);
            for (std::int64_t j = l; j <= r; ++j) {
                const double w = pr[j] * inv;
                pr[j] = w;
                const double* vj = vv.row_ptr(j);
                for (std::int64_t p = 0; p < dv; ++p) orow[p] += w * vj[p];
            }
        }
        auto lows = std::make_shared<std::vector<std::int32_t>>(std::move(lo));
        Node node_;
        node_.value = std::move(out);
        node_.requires_grad = requires_grad(q) || requires_grad(k) || requires_grad(v);
        if (node_.requires_grad) {
            node_.backward = [q, k, v, probs, lows](Tape& t, Var self) {
                const Tensor& g = t.node(self).grad;
                const Tensor& qv = t.val(q);
                const Tensor& kv = t.val(k);
                const Tensor& vv = t.val(v);
                const std::int64_t n = qv.rows(), dm = qv.cols(), dv = vv.cols();
                Tensor* gq = t.requires_grad(q) ? &t.grad_buf(q) : nullptr;
                Tensor* gk = t.requires_grad(k) ? &t.grad_buf(k) : nullptr;
                Tensor* gv = t.requires_grad(v) ? &t.grad_buf(v) : nullptr;
                std::vector<double> ds(static_cast<std::size_t>(n));
                for (std::int64_t r = 0; r < n; ++r) {
                    const std::int64_t l = (*lows)[static_cast<std::size_t>(r)];
                    const double* pr = probs->row_ptr(r);
                    const double* grow = g.row_ptr(r);
                    // dV and d(score weights)
                    double acc = 0.0;
                    for (std::int64_t j = l; j <= r; ++j) {
                        const double* vj = vv.row_ptr(j);
                        double d = 0.0;
                        for (std::int64_t p = 0; p < dv; ++p) d += grow[p] * vj[p];
                        ds[static_cast<std::size_t>(j)] = d;
                        acc += d * pr[j];
                        if (gv) {
                            double* gvj = gv->row_ptr(j);
                            const double w = pr[j];
                            for (std::int64_t p = 0; p < dv; ++p) gvj[p] += w * grow[p];
                        }
                    }
                    if (!gq && !gk) continue;
                    const double* qr = qv.row_ptr(r);
                    double* gqr = gq ? gq->row_ptr(r) : nullptr;
                    for (std::int64_t j = l; j <= r; ++j) {
                        const double dz = pr[j] * (ds[static_cast<std::size_t>(j)] - acc);
                        if (dz == 0.0) continue;
                        const double* kj = kv.row_ptr(j);
                        if (gqr) {
                            for (std::int64_t p = 0; p < dm; ++p) gqr[p] += dz * kj[p];
                        }
                        if (gk) {
                            double* gkj = gk->row_ptr(j);
                            for (std::int64_t p = 0; p < dm; ++p) gkj[p] += dz * qr[p];
                        }
                    }
                }
            };
        }
        return push(std::move(node_));
    }

    // ---- gather / slice ----

    Var select_rows(Var a, std::vector<std::int32_t> rows) {
        const Tensor& av = val(a);
        detail::require(av.rank() == 2, "select_rows: rank-2 required");
        Tensor out(static_cast<std::int64_t>(rows.size()), av.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double* src = av.row_ptr(rows[i]);
            double* dst = out.row_ptr(static_cast<std::int64_t>(i));
            for (std::int64_t j = 0; j < av.cols(); ++j) dst[j] = src[j];
        }
        auto idx = std::make_shared<std::vector<std::int32_t>>(std::move(rows));
        return unary(std::move(out), a, [idx](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            Tensor& ga = t.grad_buf(a);
            for (std::size_t i = 0; i < idx->size(); ++i) {
                double* dst = ga.row_ptr((*idx)[i]);
                const double* src = g.row_ptr(static_cast<std::int64_t>(i));
                for (std::int64_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
            }
        });
    }

    Var reshape(Var a, std::vector<std::int64_t> shape) {
        const Tensor& av = val(a);
        Tensor out(std::move(shape));
        detail::require(out.size() == av.size(), "reshape: element count mismatch");
        for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i];
        return unary(std::move(out), a, [](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            Tensor& ga = t.grad_buf(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }

    // Elements [lo, hi) of a flat vector.
    Var slice_1d(Var a, std::int64_t lo, std::int64_t hi) {
        const Tensor& av = val(a);
        detail::require(0 <= lo && lo <= hi && hi <= av.size(), "slice_1d: bad range");
        Tensor out = Tensor::vector(hi - lo);
        for (std::int64_t i = lo; i < hi; ++i) out[i - lo] = av[i];
        return unary(std::move(out), a, [lo](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            Tensor& ga = t.grad_buf(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[lo + i] += g[i];
        });
    }

    Var column(Var a, std::int64_t j) {
        const Tensor& av = val(a);
        detail::require(av.rank() == 2 && j < av.cols(), "column: bad index");
        Tensor out = Tensor::vector(av.rows());
        for (std::int64_t i = 0; i < av.rows(); ++i) out[i] = av(i, j);
        return unary(std::move(out), a, [j](Tape& t, Var a, Var o) {
            const Tensor& g = t.node(o).grad;
            Tensor& ga = t.grad_buf(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga(i, j) += g[i];
        });
    }

    // ---- fused heteroscedastic Gaussian negative log-likelihood ----
    //
    // sum_t w[t] * ( log(sigma[t]) + (y[t]-yhat[t])^2 / (2 sigma[t]^2) )
    Var gaussian_nll(Var yhat, Var sigma, Tensor y, Tensor w) {
        const Tensor& mv = val(yhat);
        const Tensor& sv = val(sigma);
        detail::require(mv.size() == sv.size() && mv.size() == y.size() && mv.size() == w.size(),
                        "gaussian_nll: length mismatch");
        double loss = 0.0;
        for (std::int64_t i = 0; i < mv.size(); ++i) {
            if (w[i] == 0.0) continue;
            const double r = y[i] - mv[i];
            loss += w[i] * (std::log(sv[i]) + 0.5 * r * r / (sv[i] * sv[i]));
        }
        Tensor out = Tensor::vector(1);
        out[0] = loss;
        auto aux = std::make_shared<std::pair<Tensor, Tensor>>(std::move(y), std::move(w));
        return unary_or_binary(std::move(out), yhat, sigma,
                               [aux](Tape& t, Var yhat, Var sigma, Var o) {
            const double g = t.node(o).grad[0];
            const Tensor& mv = t.val(yhat);
            const Tensor& sv = t.val(sigma);
            const Tensor& y = aux->first;
            const Tensor& w = aux->second;
            if (t.requires_grad(yhat)) {
                Tensor& gm = t.grad_buf(yhat);
                for (std::int64_t i = 0; i < mv.size(); ++i) {
                    if (w[i] == 0.0) continue;
                    gm[i] += g * w[i] * (mv[i] - y[i]) / (sv[i] * sv[i]);
                }
            }
            if (t.requires_grad(sigma)) {
                Tensor& gs = t.grad_buf(sigma);
                for (std::int64_t i = 0; i < mv.size(); ++i) {
                    if (w[i] == 0.0) continue;
                    const double r = y[i] - mv[i];
                    gs[i] += g * w[i] * (1.0 / sv[i] - r * r / (sv[i] * sv[i] * sv[i]));
                }
            }
        });
    }

    // ---- backward ----

    void backward(Var loss) {
        detail::require(val(loss).size() == 1, "backward: loss must be scalar");
        Tensor& seed = grad_buf(loss);
        seed[0] = 1.0;
        for (std::int64_t i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, Var{static_cast<std::int32_t>(i)});
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&, Var self)> backward;
        friend class Tape;
    };

    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.idx)]; }

    Tensor& grad_buf(Var v) {
        Node& n = node(v);
        if (n.grad.size() == 0) n.grad = Tensor(val(v).shape());
        return n.grad;
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    template <typename B>
    Var unary(Tensor out, Var a, B&& bwd) {
        Node n;
        n.value = std::move(out);
        n.requires_grad = requires_grad(a);
        if (n.requires_grad) {
            n.backward = [a, bwd = std::forward<B>(bwd)](Tape& t, Var self) { bwd(t, a, self); };
        }
        return push(std::move(n));
    }

    template <typename B>
    Var unary_or_binary(Tensor out, Var a, Var b, B&& bwd) {
        Node n;
        n.value = std::move(out);
        n.requires_grad = requires_grad(a) || requires_grad(b);
        if (n.requires_grad) {
            n.backward = [a, b, bwd = std::forward<B>(bwd)](Tape& t, Var self) {
                bwd(t, a, b, self);
            };
        }
        return push(std::move(n));
    }

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
// f is evaluated at point +/- step per coordinate.
template <typename F>
double finite_diff_check(F&& f, const Tensor& point, double step, const Tensor& analytic) {
    detail::require(point.size() == analytic.size(), "finite_diff_check: size mismatch");
    Tensor x = point;
    double worst = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double fp = f(x);
        x[i] = keep - step;
        const double fm = f(x);
        x[i] = keep;
        const double fd = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace icluq
