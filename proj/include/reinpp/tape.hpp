#pragma once

#include "reinpp/tensor.hpp"

#include <functional>
#include <vector>

namespace reinpp {

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over 1-D/2-D f64 tensors. Nodes are appended in
// topological order; backward() walks them in reverse. Covers exactly the
// operations the model graphs need.
class Tape {
public:
    Var leaf(Tensor v, bool needs_grad);
    Var constant(Tensor v) { return leaf(std::move(v), false); }
    Var constant(double v) { return leaf(Tensor::scalar(v), false); }

    const Tensor& value(Var x) const { return nodes_[x.id].value; }
    const Tensor& grad(Var x) const { return nodes_[x.id].grad; }
    bool needs_grad(Var x) const { return nodes_[x.id].needs_grad; }

    // elementwise / broadcast
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_const(Var a, double s);
    Var add_row_bias(Var a, Var bias);  // (n,c) + (c)
    Var maximum(Var a, Var b);          // elementwise; ties send grad to a

    // linear algebra
    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
    Var matmul_const(Var a, Tensor b, bool trans_a = false, bool trans_b = false);
    Var const_matmul(Tensor a, Var b, bool trans_a = false, bool trans_b = false);

    // nonlinearities
    Var softmax_rows(Var a, double inv_temp = 1.0);
    Var log_softmax_rows(Var a);
    Var sigmoid(Var a);
    Var softplus(Var a);
    Var gelu(Var a);
    Var log(Var a);
    Var layernorm_rows(Var a, Var gamma, Var beta, double eps = 1e-6);

    // shape
    Var slice_cols(Var a, std::size_t j0, std::size_t j1);
    Var slice_rows(Var a, std::size_t i0, std::size_t i1);
    Var concat_cols(const std::vector<Var>& xs);
    Var concat_rows(const std::vector<Var>& xs);
    Var reshape(Var a, std::vector<std::size_t> shape);

    // reductions
    Var sum(Var a);
    Var mean(Var a);
    Var row_sum(Var a);                    // (n,c) -> (n,1)
    Var div_rows(Var a, Var r);            // (n,c) / (n,1)
    Var weighted_sum(Var a, Tensor w);     // sum(a*w) -> scalar, w constant
    Var sdiv(Var a, Var b);                // scalar / scalar

    double scalar_value(Var a) const { return nodes_[a.id].value.at(0); }

    // Seeds d(out)/d(out)=1 and accumulates grads of all ancestors.
    void backward(Var scalar_out);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> back;  // empty for leaves
    };
    std::vector<Node> nodes_;

    Var push(Tensor value, bool needs_grad, std::function<void()> back);
    Tensor& grad_ref(Var x) { return nodes_[x.id].grad; }
};

}  // namespace reinpp
