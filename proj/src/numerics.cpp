#include "msmil/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msmil/error.hpp"

namespace msmil {

namespace {

void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) throw ValueError(std::string(what) + ": non-finite input");
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    require_same_size(data_.size(), rows * cols, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

double sigmoid(double x) {
    require_finite(x, "sigmoid");
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double tanh_act(double x) {
    require_finite(x, "tanh");
    return std::tanh(x);
}

Vector softmax(std::span<const double> logits) {
    if (logits.empty()) throw ValueError("softmax: empty input");
    if (!all_finite(logits)) throw ValueError("softmax: non-finite input");
    const double peak = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

Vector log_softmax(std::span<const double> logits) {
    if (logits.empty()) throw ValueError("log_softmax: empty input");
    if (!all_finite(logits)) throw ValueError("log_softmax: non-finite input");
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double l : logits) total += std::exp(l - peak);
    const double lse = peak + std::log(total);
    Vector out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
    require_same_size(m.cols(), x.size(), "matvec");
    Vector y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
    return y;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
    require_same_size(m.rows(), x.size(), "matvec_transposed");
    Vector y(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) axpy(x[r], m.row(r), y);
    return y;
}

void add_outer(Matrix& m, double alpha, std::span<const double> a, std::span<const double> b) {
    require_same_size(m.rows(), a.size(), "add_outer rows");
    require_same_size(m.cols(), b.size(), "add_outer cols");
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double scale = alpha * a[r];
        if (scale != 0.0) axpy(scale, b, m.row(r));
    }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require_same_size(x.size(), y.size(), "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vector hadamard(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "hadamard");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace msmil
