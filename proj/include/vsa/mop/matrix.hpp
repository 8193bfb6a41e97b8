#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsa::mop {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit reals. Rows are tokens, columns are features.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values))
    {
        if (data.size() != rows * cols)
            throw ShapeError("matrix data length " + std::to_string(data.size()) + " != rows*cols " +
                             std::to_string(rows * cols));
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> init)
    {
        Matrix m;
        m.rows = init.size();
        m.cols = m.rows ? init.begin()->size() : 0;
        m.data.reserve(m.rows * m.cols);
        for (const auto& r : init) {
            if (r.size() != m.cols)
                throw ShapeError("ragged row in matrix literal");
            m.data.insert(m.data.end(), r.begin(), r.end());
        }
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool all_finite() const
    {
        for (double v : data)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    bool operator==(const Matrix&) const = default;
};

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what)
{
    if (m.rows != rows || m.cols != cols)
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
}

inline void require_cols(const Matrix& m, std::size_t cols, const char* what)
{
    if (m.cols != cols)
        throw ShapeError(std::string(what) + ": column count " + std::to_string(m.cols) + " != expected " +
                         std::to_string(cols));
}

inline void require_size(std::size_t got, std::size_t want, const char* what)
{
    if (got != want)
        throw ShapeError(std::string(what) + ": length " + std::to_string(got) + " != expected " +
                         std::to_string(want));
}

/// out = x * W + b for a single row vector x.
inline void affine_row(std::span<const double> x, const Matrix& w, std::span<const double> b, std::span<double> out)
{
    for (std::size_t j = 0; j < w.cols; ++j)
        out[j] = b[j];
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0)
            continue;
        const double* wr = w.data.data() + i * w.cols;
        for (std::size_t j = 0; j < w.cols; ++j)
            out[j] += xi * wr[j];
    }
}

/// Accumulates the gradients of out = x * W + b given d_out:
/// dW += x^T d_out, db += d_out, and (optionally) dx += d_out W^T.
inline void affine_row_backward(std::span<const double> x, const Matrix& w, std::span<const double> d_out,
                                Matrix& dw, std::span<double> db, std::span<double> dx)
{
    for (std::size_t j = 0; j < w.cols; ++j)
        db[j] += d_out[j];
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double* wr = w.data.data() + i * w.cols;
        double* dwr = dw.data.data() + i * w.cols;
        double acc = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) {
            dwr[j] += x[i] * d_out[j];
            acc += wr[j] * d_out[j];
        }
        if (!dx.empty())
            dx[i] += acc;
    }
}

} // namespace vsa::mop
