#include "reinpp/tape.hpp"

#include <cmath>
#include <memory>

namespace reinpp {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// dst += src (optionally transposed 2-D src)
void acc(Tensor& dst, const Tensor& src, bool transpose_src = false) {
    if (!transpose_src) {
        for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
    } else {
        const std::size_t r = src.rows(), c = src.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dst.at(j, i) += src.at(i, j);
    }
}
}  // namespace

Var Tape::push(Tensor value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.grad = Tensor::zeros(n.value.shape);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor v, bool needs_grad) { return push(std::move(v), needs_grad, {}); }

Var Tape::add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    Var r = push(std::move(out), needs_grad(a) || needs_grad(b), {});
    nodes_[r.id].back = [this, a, b, r]() {
        const Tensor& g = grad(r);
        if (needs_grad(a)) acc(grad_ref(a), g);
        if (needs_grad(b)) acc(grad_ref(b), g);
    };
    return r;
}

Var Tape::sub(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    Var r = push(std::move(out), needs_grad(a) || needs_grad(b), {});
    nodes_[r.id].back = [this, a, b, r]() {
        const Tensor& g = grad(r);
        if (needs_grad(a)) acc(grad_ref(a), g);
        if (needs_grad(b))
            for (std::size_t i = 0; i < g.data.size(); ++i) grad_ref(b).data[i] -= g.data[i];
    };
    return r;
}

Var Tape::mul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    Var r = push(std::move(out), needs_grad(a) || needs_grad(b), {});
    nodes_[r.id].back = [this, a, b, r]() {
        const Tensor& g = grad(r);
        if (needs_grad(a))
            for (std::size_t i = 0; i < g.data.size(); ++i)
                grad_ref(a).data[i] += g.data[i] * value(b).data[i];
        if (needs_grad(b))
            for (std::size_t i = 0; i < g.data.size(); ++i)
                grad_ref(b).data[i] += g.data[i] * value(a).data[i];
    };
    return r;
}

Var Tape::scale(Var a, double s) {
    Tensor out = value(a);
    for (auto& x : out.data) x *= s;
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, s, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        for (std::size_t i = 0; i < g.data.size(); ++i) grad_ref(a).data[i] += s * g.data[i];
    };
    return r;
}

Var Tape::add_const(Var a, double s) {
    Tensor out = value(a);
    for (auto& x : out.data) x += s;
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, r]() {
        if (needs_grad(a)) acc(grad_ref(a), grad(r));
    };
    return r;
}

Var Tape::add_row_bias(Var a, Var bias) {
    const Tensor& av = value(a);
    const Tensor& bv = value(bias);
    if (av.ndim() != 2 || bv.numel() != av.cols()) throw std::invalid_argument("add_row_bias: shapes");
    Tensor out = av;
    const std::size_t n = av.rows(), c = av.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) += bv.data[j];
    Var r = push(std::move(out), needs_grad(a) || needs_grad(bias), {});
    nodes_[r.id].back = [this, a, bias, n, c, r]() {
        const Tensor& g = grad(r);
        if (needs_grad(a)) acc(grad_ref(a), g);
        if (needs_grad(bias))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) grad_ref(bias).data[j] += g.at(i, j);
    };
    return r;
}

Var Tape::maximum(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("maximum: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = av.data[i] >= bv.data[i] ? av.data[i] : bv.data[i];
    Var r = push(std::move(out), needs_grad(a) || needs_grad(b), {});
    nodes_[r.id].back = [this, a, b, r]() {
        const Tensor& g = grad(r);
        const Tensor& av2 = value(a);
        const Tensor& bv2 = value(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            if (av2.data[i] >= bv2.data[i]) {
                if (needs_grad(a)) grad_ref(a).data[i] += g.data[i];
            } else if (needs_grad(b)) {
                grad_ref(b).data[i] += g.data[i];
            }
        }
    };
    return r;
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
    Tensor out = reinpp::matmul(value(a), value(b), trans_a, trans_b);
    Var r = push(std::move(out), needs_grad(a) || needs_grad(b), {});
    nodes_[r.id].back = [this, a, b, trans_a, trans_b, r]() {
        const Tensor& g = grad(r);
        if (needs_grad(a)) {
            // dAop = g * Bop^T
            Tensor da = trans_b ? reinpp::matmul(g, value(b), false, false)
                                : reinpp::matmul(g, value(b), false, true);
            acc(grad_ref(a), da, trans_a);
        }
        if (needs_grad(b)) {
            // dBop = Aop^T * g
            Tensor db = trans_a ? reinpp::matmul(value(a), g, false, false)
                                : reinpp::matmul(value(a), g, true, false);
            acc(grad_ref(b), db, trans_b);
        }
    };
    return r;
}

Var Tape::matmul_const(Var a, Tensor b, bool trans_a, bool trans_b) {
    return matmul(a, constant(std::move(b)), trans_a, trans_b);
}

Var Tape::const_matmul(Tensor a, Var b, bool trans_a, bool trans_b) {
    return matmul(constant(std::move(a)), b, trans_a, trans_b);
}

Var Tape::softmax_rows(Var a, double inv_temp) {
    const Tensor& av = value(a);
    if (av.ndim() != 2) throw std::invalid_argument("softmax_rows: 2-D required");
    Tensor out = av;
    const std::size_t n = av.rows(), c = av.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, av.at(i, j) * inv_temp);
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) {
            out.at(i, j) = std::exp(av.at(i, j) * inv_temp - mx);
            s += out.at(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= s;
    }
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, inv_temp, n, c, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        const Tensor& y = value(r);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < c; ++j)
                grad_ref(a).at(i, j) += inv_temp * y.at(i, j) * (g.at(i, j) - dot);
        }
    };
    return r;
}

Var Tape::log_softmax_rows(Var a) {
    const Tensor& av = value(a);
    if (av.ndim() != 2) throw std::invalid_argument("log_softmax_rows: 2-D required");
    Tensor out = av;
    const std::size_t n = av.rows(), c = av.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, av.at(i, j));
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(av.at(i, j) - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = av.at(i, j) - lse;
    }
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, n, c, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        const Tensor& y = value(r);
        for (std::size_t i = 0; i < n; ++i) {
            double gs = 0;
            for (std::size_t j = 0; j < c; ++j) gs += g.at(i, j);
            for (std::size_t j = 0; j < c; ++j)
                grad_ref(a).at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gs;
        }
    };
    return r;
}

Var Tape::sigmoid(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        const Tensor& y = value(r);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            grad_ref(a).data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    };
    return r;
}

Var Tape::softplus(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        const Tensor& x = value(a);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            grad_ref(a).data[i] += g.data[i] / (1.0 + std::exp(-x.data[i]));
    };
    return r;
}

Var Tape::gelu(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = x * norm_cdf(x);
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        const Tensor& x = value(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double v = x.data[i];
            grad_ref(a).data[i] += g.data[i] * (norm_cdf(v) + v * norm_pdf(v));
        }
    };
    return r;
}

Var Tape::log(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = std::log(x);
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        const Tensor& x = value(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) grad_ref(a).data[i] += g.data[i] / x.data[i];
    };
    return r;
}

Var Tape::layernorm_rows(Var a, Var gamma, Var beta, double eps) {
    const Tensor& av = value(a);
    const std::size_t n = av.rows(), c = av.cols();
    Tensor out({n, c});
    Tensor xhat({n, c});
    Tensor inv_std({n});
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += av.at(i, j);
        mu /= static_cast<double>(c);
        double var = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = av.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std.data[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            xhat.at(i, j) = (av.at(i, j) - mu) * is;
            out.at(i, j) = xhat.at(i, j) * value(gamma).data[j] + value(beta).data[j];
        }
    }
    bool ng = needs_grad(a) || needs_grad(gamma) || needs_grad(beta);
    Var r = push(std::move(out), ng, {});
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<Tensor>(std::move(inv_std));
    nodes_[r.id].back = [this, a, gamma, beta, n, c, r, xh, is]() {
        const Tensor& g = grad(r);
        for (std::size_t i = 0; i < n; ++i) {
            if (needs_grad(gamma) || needs_grad(beta)) {
                for (std::size_t j = 0; j < c; ++j) {
                    if (needs_grad(gamma)) grad_ref(gamma).data[j] += g.at(i, j) * xh->at(i, j);
                    if (needs_grad(beta)) grad_ref(beta).data[j] += g.at(i, j);
                }
            }
            if (needs_grad(a)) {
                double m1 = 0, m2 = 0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = g.at(i, j) * value(gamma).data[j];
                    m1 += dxh;
                    m2 += dxh * xh->at(i, j);
                }
                m1 /= static_cast<double>(c);
                m2 /= static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = g.at(i, j) * value(gamma).data[j];
                    grad_ref(a).at(i, j) += is->data[i] * (dxh - m1 - xh->at(i, j) * m2);
                }
            }
        }
    };
    return r;
}

Var Tape::slice_cols(Var a, std::size_t j0, std::size_t j1) {
    const Tensor& av = value(a);
    const std::size_t n = av.rows();
    Tensor out({n, j1 - j0});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = j0; j < j1; ++j) out.at(i, j - j0) = av.at(i, j);
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, j0, j1, n, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = j0; j < j1; ++j) grad_ref(a).at(i, j) += g.at(i, j - j0);
    };
    return r;
}

Var Tape::slice_rows(Var a, std::size_t i0, std::size_t i1) {
    const Tensor& av = value(a);
    const std::size_t c = av.cols();
    Tensor out({i1 - i0, c});
    for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i - i0, j) = av.at(i, j);
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, i0, i1, c, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        for (std::size_t i = i0; i < i1; ++i)
            for (std::size_t j = 0; j < c; ++j) grad_ref(a).at(i, j) += g.at(i - i0, j);
    };
    return r;
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
    const std::size_t n = value(xs.front()).rows();
    std::size_t ctot = 0;
    bool ng = false;
    for (Var x : xs) {
        if (value(x).rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
        ctot += value(x).cols();
        ng = ng || needs_grad(x);
    }
    Tensor out({n, ctot});
    std::size_t off = 0;
    for (Var x : xs) {
        const Tensor& v = value(x);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, off + j) = v.at(i, j);
        off += v.cols();
    }
    Var r = push(std::move(out), ng, {});
    auto parts = xs;
    nodes_[r.id].back = [this, parts, n, r]() {
        const Tensor& g = grad(r);
        std::size_t off2 = 0;
        for (Var x : parts) {
            const std::size_t cw = value(x).cols();
            if (needs_grad(x))
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < cw; ++j) grad_ref(x).at(i, j) += g.at(i, off2 + j);
            off2 += cw;
        }
    };
    return r;
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
    const std::size_t c = value(xs.front()).cols();
    std::size_t ntot = 0;
    bool ng = false;
    for (Var x : xs) {
        if (value(x).cols() != c) throw std::invalid_argument("concat_rows: col mismatch");
        ntot += value(x).rows();
        ng = ng || needs_grad(x);
    }
    Tensor out({ntot, c});
    std::size_t off = 0;
    for (Var x : xs) {
        const Tensor& v = value(x);
        for (std::size_t i = 0; i < v.rows(); ++i)
            for (std::size_t j = 0; j < c; ++j) out.at(off + i, j) = v.at(i, j);
        off += v.rows();
    }
    Var r = push(std::move(out), ng, {});
    auto parts = xs;
    nodes_[r.id].back = [this, parts, c, r]() {
        const Tensor& g = grad(r);
        std::size_t off2 = 0;
        for (Var x : parts) {
            const std::size_t nr = value(x).rows();
            if (needs_grad(x))
                for (std::size_t i = 0; i < nr; ++i)
                    for (std::size_t j = 0; j < c; ++j) grad_ref(x).at(i, j) += g.at(off2 + i, j);
            off2 += nr;
        }
    };
    return r;
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != value(a).numel()) throw std::invalid_argument("reshape: numel mismatch");
    Tensor out(std::move(shape), value(a).data);
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        for (std::size_t i = 0; i < g.data.size(); ++i) grad_ref(a).data[i] += g.data[i];
    };
    return r;
}

Var Tape::sum(Var a) {
    double s = 0;
    for (double v : value(a).data) s += v;
    Var r = push(Tensor::scalar(s), needs_grad(a), {});
    nodes_[r.id].back = [this, a, r]() {
        if (!needs_grad(a)) return;
        const double g = grad(r).at(0);
        for (auto& x : grad_ref(a).data) x += g;
    };
    return r;
}

Var Tape::mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(value(a).numel())); }

Var Tape::row_sum(Var a) {
    const Tensor& av = value(a);
    const std::size_t n = av.rows(), c = av.cols();
    Tensor out({n, 1});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, 0) += av.at(i, j);
    Var r = push(std::move(out), needs_grad(a), {});
    nodes_[r.id].back = [this, a, n, c, r]() {
        if (!needs_grad(a)) return;
        const Tensor& g = grad(r);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) grad_ref(a).at(i, j) += g.at(i, 0);
    };
    return r;
}

Var Tape::div_rows(Var a, Var rdiv) {
    const Tensor& av = value(a);
    const Tensor& rv = value(rdiv);
    const std::size_t n = av.rows(), c = av.cols();
    if (rv.rows() != n || rv.cols() != 1) throw std::invalid_argument("div_rows: divisor shape");
    Tensor out({n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = av.at(i, j) / rv.at(i, 0);
    Var r = push(std::move(out), needs_grad(a) || needs_grad(rdiv), {});
    nodes_[r.id].back = [this, a, rdiv, n, c, r]() {
        const Tensor& g = grad(r);
        const Tensor& av2 = value(a);
        const Tensor& rv2 = value(rdiv);
        for (std::size_t i = 0; i < n; ++i) {
            const double ri = rv2.at(i, 0);
            for (std::size_t j = 0; j < c; ++j) {
                if (needs_grad(a)) grad_ref(a).at(i, j) += g.at(i, j) / ri;
                if (needs_grad(rdiv))
                    grad_ref(rdiv).at(i, 0) -= g.at(i, j) * av2.at(i, j) / (ri * ri);
            }
        }
    };
    return r;
}

Var Tape::weighted_sum(Var a, Tensor w) {
    const Tensor& av = value(a);
    if (!av.same_shape(w) && av.numel() != w.numel())
        throw std::invalid_argument("weighted_sum: weight shape");
    double s = 0;
    for (std::size_t i = 0; i < av.data.size(); ++i) s += av.data[i] * w.data[i];
    Var r = push(Tensor::scalar(s), needs_grad(a), {});
    auto wp = std::make_shared<Tensor>(std::move(w));
    nodes_[r.id].back = [this, a, wp, r]() {
        if (!needs_grad(a)) return;
        const double g = grad(r).at(0);
        for (std::size_t i = 0; i < wp->data.size(); ++i) grad_ref(a).data[i] += g * wp->data[i];
    };
    return r;
}

Var Tape::sdiv(Var a, Var b) {
    if (value(a).numel() != 1 || value(b).numel() != 1)
        throw std::invalid_argument("sdiv: scalar operands required");
    const double av = value(a).at(0), bv = value(b).at(0);
    Var r = push(Tensor::scalar(av / bv), needs_grad(a) || needs_grad(b), {});
    nodes_[r.id].back = [this, a, b, r]() {
        const double g = grad(r).at(0);
        const double av2 = value(a).at(0), bv2 = value(b).at(0);
        if (needs_grad(a)) grad_ref(a).at(0) += g / bv2;
        if (needs_grad(b)) grad_ref(b).at(0) -= g * av2 / (bv2 * bv2);
    };
    return r;
}

void Tape::backward(Var scalar_out) {
    if (value(scalar_out).numel() != 1) throw std::invalid_argument("backward: scalar output required");
    if (!needs_grad(scalar_out)) return;
    grad_ref(scalar_out).at(0) = 1.0;
    for (int i = scalar_out.id; i >= 0; --i) {
        if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back();
    }
}

}  // namespace reinpp
