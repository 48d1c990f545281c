#include "uplift/matrix.hpp"

#include "uplift/errors.hpp"

#include <cmath>
#include <utility>

namespace uplift {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
        throw ConfigError("Matrix: data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str());
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows_init) {
    rows = rows_init.size();
    cols = rows == 0 ? 0 : rows_init.begin()->size();
    data.reserve(rows * cols);
    for (const auto& r : rows_init) {
        if (r.size() != cols) {
            throw ConfigError("Matrix: ragged initializer rows");
        }
        data.insert(data.end(), r.begin(), r.end());
    }
}

bool Matrix::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ConfigError("matmul: shapes " + a.shape_str() + " and " + b.shape_str() +
                          " are not compatible");
    }
    Matrix out(a.rows, b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

Matrix matmul_transb(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw ConfigError("matmul_transb: shapes " + a.shape_str() + " and " + b.shape_str() +
                          " are not compatible");
    }
    Matrix out(a.rows, b.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += arow[k] * brow[k];
            }
            orow[j] = acc;
        }
    }
    return out;
}

void add_atb(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols) {
        throw ConfigError("add_atb: shapes " + a.shape_str() + ", " + b.shape_str() + ", " +
                          out.shape_str() + " are not compatible");
    }
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        const double* brow = b.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            double* orow = out.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] != b.data[i]) return false;
    }
    return true;
}

} // namespace uplift
