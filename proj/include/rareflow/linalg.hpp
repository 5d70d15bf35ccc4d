#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rareflow {

using Vec = std::vector<double>;

// Dense row-major matrix, sized for the small covariance/weight blocks used
// throughout (dims of a few, network layers up to a few hundred).
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    Vec& data() { return data_; }
    const Vec& data() const { return data_; }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

// Lower Cholesky factor of a symmetric matrix; returns false if the matrix is
// not positive definite. With rel_tol > 0 a pivot below rel_tol times the
// largest diagonal entry also counts as failure, so dimensions collapsed to
// rounding noise are rejected rather than factored.
bool cholesky_lower(const Mat& a, Mat& l, double rel_tol = 0.0);

// Solves L y = b in place for lower-triangular L.
void forward_solve(const Mat& l, std::span<double> b);

// d' (L L')^{-1} d computed through one forward solve.
double chol_quadratic_form(const Mat& l, std::span<const double> d);

// log det(L L') = 2 sum log L_ii.
double chol_log_det(const Mat& l);

// Draws x = mean + L z with z standard normal entries supplied in z.
void chol_affine(const Mat& l, std::span<const double> mean, std::span<const double> z,
                 std::span<double> out);

}  // namespace rareflow
