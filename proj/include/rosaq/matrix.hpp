#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rosaq {

// Row-major dense matrix of doubles. Carries activations, weights and
// rotations everywhere in this project. Treated as immutable once filled;
// all operations below are pure functions.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows * cols, row-major

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    // Validating constructor: rejects size mismatch and non-finite entries.
    DenseMatrix(std::size_t r, std::size_t c, std::vector<double> values);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

    bool empty() const { return rows == 0 || cols == 0; }
    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

DenseMatrix identity(std::size_t n);

// c = a * b with deterministic summation: each c(i,j) accumulates over k in
// ascending order regardless of thread count.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// x^T x, exactly symmetric by construction (upper triangle mirrored).
DenseMatrix gram(const DenseMatrix& x);

DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);

// a with row scaled: out(r,c) = a(r,c) * scale[c] (column-wise) etc.
DenseMatrix scale_columns(const DenseMatrix& a, std::span<const double> scale);
DenseMatrix scale_rows(const DenseMatrix& a, std::span<const double> scale);

double max_abs(const DenseMatrix& a);
double frobenius_norm(const DenseMatrix& a);
double trace(const DenseMatrix& a);

// Largest |a(i,j) - a(j,i)|; 0 for exactly symmetric input.
double max_asymmetry(const DenseMatrix& a);

// Copy of columns [begin, end) / rows [begin, end).
DenseMatrix column_block(const DenseMatrix& a, std::size_t begin, std::size_t end);
DenseMatrix row_block(const DenseMatrix& a, std::size_t begin, std::size_t end);

} // namespace rosaq
