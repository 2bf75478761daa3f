#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcmcg {

class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

namespace linalg {

// Row-major dense matrix of doubles. Plain numeric code (ICA, clustering,
// filter design) uses this; differentiable code lives on the tape.
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }

    static Mat identity(std::size_t n);
};

Mat matmul(const Mat& A, const Mat& B);
Mat transpose(const Mat& A);
Mat operator-(const Mat& A, const Mat& B);
double frobenius(const Mat& A);

// Gauss-Jordan with partial pivoting; throws gcmcg::error on singular input.
Mat invert(const Mat& A);

struct EigenSym {
    std::vector<double> values; // ascending
    Mat vectors;                // column j pairs with values[j]
};

// Cyclic Jacobi for symmetric matrices; deterministic.
EigenSym jacobi_eigen(const Mat& A, double tol = 1e-14, int max_sweeps = 100);

// B = A^{-1/2} for symmetric positive definite A.
Mat inv_sqrt_spd(const Mat& A);

} // namespace linalg
} // namespace gcmcg
