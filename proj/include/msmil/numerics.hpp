#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace msmil {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

    static Matrix identity(std::size_t n);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Scalar activations. Non-finite inputs raise ValueError.
double sigmoid(double x);
double tanh_act(double x);

/// Numerically stable softmax. Throws ValueError on empty or non-finite input.
Vector softmax(std::span<const double> logits);
/// log(softmax(logits)), computed without forming the probabilities.
Vector log_softmax(std::span<const double> logits);

/// y = M x
Vector matvec(const Matrix& m, std::span<const double> x);
/// y = M^T x
Vector matvec_transposed(const Matrix& m, std::span<const double> x);
/// M += alpha * a b^T
void add_outer(Matrix& m, double alpha, std::span<const double> a, std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
/// Elementwise product.
Vector hadamard(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> values);

}  // namespace msmil
