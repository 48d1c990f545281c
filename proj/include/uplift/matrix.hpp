#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace uplift {

// Dense row-major 2-D grid of doubles. The only numeric container in the
// library: activations, weights, gradients and datasets all live in one of
// these.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);
    // row-major literal, e.g. Matrix({{1, 2}, {3, 4}})
    Matrix(std::initializer_list<std::initializer_list<double>> rows_init);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }
    double* row_ptr(std::size_t r) { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return rows == 0 || cols == 0; }

    void fill(double v) { data.assign(data.size(), v); }
    bool all_finite() const;
    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }
    std::string shape_str() const;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T  (rows of B are dotted against rows of A; this is the layout
// dense layers use, so it gets its own contiguous-friendly kernel)
Matrix matmul_transb(const Matrix& a, const Matrix& b);
// C += scale * A^T * B, accumulated into out (out must be a.cols x b.cols)
void add_atb(const Matrix& a, const Matrix& b, Matrix& out);

Matrix transpose(const Matrix& m);

bool bitwise_equal(const Matrix& a, const Matrix& b);

} // namespace uplift
