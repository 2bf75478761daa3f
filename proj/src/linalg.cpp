#include "gcmcg/linalg.hpp"
#include "gcmcg/kernels.hpp"

#include <cmath>

namespace gcmcg::linalg {

Mat Mat::identity(std::size_t n) {
    Mat I(n, n);
    for (std::size_t i = 0; i < n; ++i) I(i, i) = 1.0;
    return I;
}

Mat matmul(const Mat& A, const Mat& B) {
    if (A.cols != B.rows)
        throw error("matmul: shape mismatch " + std::to_string(A.rows) + "x" + std::to_string(A.cols) +
                    " * " + std::to_string(B.rows) + "x" + std::to_string(B.cols));
    Mat C(A.rows, B.cols);
    kernels::gemm_acc(A.a.data(), B.a.data(), C.a.data(), A.rows, A.cols, B.cols);
    return C;
}

Mat transpose(const Mat& A) {
    Mat T(A.cols, A.rows);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
    return T;
}

Mat operator-(const Mat& A, const Mat& B) {
    if (A.rows != B.rows || A.cols != B.cols) throw error("Mat operator-: shape mismatch");
    Mat C(A.rows, A.cols);
    kernels::active().vsub(A.a.data(), B.a.data(), C.a.data(), A.a.size());
    return C;
}

double frobenius(const Mat& A) {
    return std::sqrt(kernels::active().dot(A.a.data(), A.a.data(), A.a.size()));
}

Mat invert(const Mat& A) {
    if (A.rows != A.cols) throw error("invert: matrix not square");
    const std::size_t n = A.rows;
    Mat aug(n, 2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) aug(i, j) = A(i, j);
        aug(i, n + i) = 1.0;
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        double best = std::fabs(aug(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::fabs(aug(r, col)) > best) {
                best = std::fabs(aug(r, col));
                piv = r;
            }
        }
        if (best < 1e-300) throw error("invert: singular matrix");
        if (piv != col)
            for (std::size_t j = 0; j < 2 * n; ++j) std::swap(aug(piv, j), aug(col, j));
        const double d = aug(col, col);
        for (std::size_t j = 0; j < 2 * n; ++j) aug(col, j) /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = aug(r, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < 2 * n; ++j) aug(r, j) -= f * aug(col, j);
        }
    }
    Mat inv(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) inv(i, j) = aug(i, n + j);
    return inv;
}

EigenSym jacobi_eigen(const Mat& A, double tol, int max_sweeps) {
    if (A.rows != A.cols) throw error("jacobi_eigen: matrix not square");
    const std::size_t n = A.rows;
    Mat S = A;
    // symmetrize to absorb roundoff in the caller's product
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (S(i, j) + S(j, i));
            S(i, j) = S(j, i) = m;
        }
    Mat V = Mat::identity(n);

    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(S(i, i)));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) scale = std::max(scale, std::fabs(S(i, j)));
    if (scale == 0.0) scale = 1.0;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off = std::max(off, std::fabs(S(i, j)));
        if (off <= tol * scale) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = S(p, q);
                if (std::fabs(apq) <= tol * scale * 1e-2) continue;
                const double app = S(p, p), aqq = S(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double skp = S(k, p), skq = S(k, q);
                    S(k, p) = c * skp - s * skq;
                    S(k, q) = s * skp + c * skq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double spk = S(p, k), sqk = S(q, k);
                    S(p, k) = c * spk - s * sqk;
                    S(q, k) = s * spk + c * sqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = S(i, i);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        std::size_t best = i;
        for (std::size_t j = i + 1; j < n; ++j)
            if (diag[order[j]] < diag[order[best]]) best = j;
        std::swap(order[i], order[best]);
    }

    EigenSym out;
    out.values.resize(n);
    out.vectors = Mat(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = diag[order[j]];
        // fix vector sign so results are reproducible across sweep orders
        std::size_t imax = 0;
        double vmax = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::fabs(V(i, order[j])) > vmax) {
                vmax = std::fabs(V(i, order[j]));
                imax = i;
            }
        }
        const double sgn = V(imax, order[j]) >= 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = sgn * V(i, order[j]);
    }
    return out;
}

Mat inv_sqrt_spd(const Mat& A) {
    EigenSym e = jacobi_eigen(A);
    const std::size_t n = A.rows;
    for (double v : e.values)
        if (v <= 0.0) throw error("inv_sqrt_spd: matrix not positive definite");
    Mat out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                acc += e.vectors(i, k) * e.vectors(j, k) / std::sqrt(e.values[k]);
            out(i, j) = acc;
        }
    return out;
}

} // namespace gcmcg::linalg
