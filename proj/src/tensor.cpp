#include "gcmcg/tensor.hpp"

#include <cmath>

namespace gcmcg {

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
    if (shape.empty() || shape.size() > 3) throw error("Tensor: rank must be 1..3");
    std::size_t p = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw error("Tensor: zero dimension");
        p *= d;
    }
    return p;
}
} // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw error("Tensor: shape " + shape_str() + " does not match data length " +
                    std::to_string(data_.size()));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
}

Tensor Tensor::from_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::from_matrix(const linalg::Mat& m) {
    return Tensor({m.rows, m.cols}, m.a);
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape_[i]);
    }
    return s + ")";
}

linalg::Mat Tensor::to_matrix() const {
    if (rank() != 2) throw error("Tensor::to_matrix: rank " + std::to_string(rank()));
    linalg::Mat m(shape_[0], shape_[1]);
    m.a = data_;
    return m;
}

} // namespace gcmcg
