#include "rareflow/linalg.hpp"

#include <cmath>

namespace rareflow {

bool cholesky_lower(const Mat& a, Mat& l, double rel_tol) {
    const std::size_t n = a.rows();
    if (a.cols() != n) return false;
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a(i, i));
    const double floor = rel_tol * max_diag;
    l = Mat(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= floor || s <= 0.0 || !std::isfinite(s)) return false;
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return true;
}

void forward_solve(const Mat& l, std::span<double> b) {
    const std::size_t n = l.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        const double* li = l.row(i);
        for (std::size_t k = 0; k < i; ++k) s -= li[k] * b[k];
        b[i] = s / li[i];
    }
}

double chol_quadratic_form(const Mat& l, std::span<const double> d) {
    const std::size_t n = l.rows();
    double y[16];  // covariance dims here never exceed the joint dimension
    std::vector<double> heap;
    double* buf = y;
    if (n > 16) {
        heap.resize(n);
        buf = heap.data();
    }
    for (std::size_t i = 0; i < n; ++i) buf[i] = d[i];
    forward_solve(l, std::span<double>(buf, n));
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i) q += buf[i] * buf[i];
    return q;
}

double chol_log_det(const Mat& l) {
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

void chol_affine(const Mat& l, std::span<const double> mean, std::span<const double> z,
                 std::span<double> out) {
    const std::size_t n = l.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double s = mean[i];
        const double* li = l.row(i);
        for (std::size_t k = 0; k <= i; ++k) s += li[k] * z[k];
        out[i] = s;
    }
}

}  // namespace rareflow
