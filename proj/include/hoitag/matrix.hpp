#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoitag {

/// Thrown on incompatible operand shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles. Vectors are 1 x n rows.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) throw ShapeError("Matrix: data size does not match shape");
    }

    static Matrix row(std::span<const double> values) {
        return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(" << rows_ << "x" << cols_ << ")";
        return os.str();
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

    Matrix& operator+=(const Matrix& o) {
        check_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    void check_same(const Matrix& o, const char* what) const {
        if (!same_shape(o))
            throw ShapeError(std::string(what) + ": shape mismatch " + shape_str() + " vs " + o.shape_str());
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace kernel {

/// C += A * B
inline void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c.data() + i * m;
        const double* arow = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

/// C += A * B^T
inline void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.data() + i * k;
        double* crow = c.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

/// C += A^T * B
inline void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t r = 0; r < n; ++r) {
        const double* arow = a.data() + r * k;
        const double* brow = b.data() + r * m;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernel

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_str() + " * " + b.shape_str());
    Matrix c(a.rows(), b.cols());
    kernel::gemm_nn(a, b, c);
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline bool all_finite(const Matrix& m) {
    return std::all_of(m.values().begin(), m.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace hoitag
