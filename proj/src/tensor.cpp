#include "reinpp/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace reinpp {

std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape)) throw std::invalid_argument("Tensor: data/shape mismatch");
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
}

Tensor Tensor::row(std::vector<double> d) {
    std::size_t n = d.size();
    return Tensor({n}, std::move(d));
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> d) {
    return Tensor({r, c}, std::move(d));
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double v) {
    for (auto& x : data) x = v;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

void matmul(const Tensor& a, const Tensor& b, Tensor& out, bool trans_a, bool trans_b,
            bool accumulate) {
    if (a.ndim() != 2 || b.ndim() != 2) throw std::invalid_argument("matmul: 2-D operands required");
    const std::size_t am = trans_a ? a.cols() : a.rows();
    const std::size_t ak = trans_a ? a.rows() : a.cols();
    const std::size_t bk = trans_b ? b.cols() : b.rows();
    const std::size_t bn = trans_b ? b.rows() : b.cols();
    if (ak != bk)
        throw std::invalid_argument("matmul: inner dims " + a.shape_str() + " x " + b.shape_str());
    if (out.shape != std::vector<std::size_t>{am, bn}) throw std::invalid_argument("matmul: bad out shape");
    CMap A(a.data.data(), a.rows(), a.cols());
    CMap B(b.data.data(), b.rows(), b.cols());
    MMap C(out.data.data(), am, bn);
    if (!trans_a && !trans_b) {
        if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
    } else if (trans_a && !trans_b) {
        if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
    } else if (!trans_a && trans_b) {
        if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
    } else {
        if (accumulate) C.noalias() += A.transpose() * B.transpose(); else C.noalias() = A.transpose() * B.transpose();
    }
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    const std::size_t am = trans_a ? a.cols() : a.rows();
    const std::size_t bn = trans_b ? b.rows() : b.cols();
    Tensor out({am, bn});
    matmul(a, b, out, trans_a, trans_b, false);
    return out;
}

}  // namespace reinpp
