#include "rosaq/matrix.hpp"

#include "rosaq/errors.hpp"

#include <cmath>
#include <cstdint>

namespace rosaq {

DenseMatrix::DenseMatrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
        throw validation_error("matrix: data length does not match rows*cols");
    }
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw validation_error("matrix: non-finite entry");
        }
    }
}

DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows) {
        throw validation_error("matmul: inner dimensions differ");
    }
    DenseMatrix c(a.rows, b.cols);
    const std::int64_t n = static_cast<std::int64_t>(a.rows);
    const std::size_t kk = a.cols;
    const std::size_t m = b.cols;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double* crow = c.data.data() + static_cast<std::size_t>(i) * m;
        const double* arow = a.data.data() + static_cast<std::size_t>(i) * kk;
        // k ascending per output element keeps the reduction order fixed.
        for (std::size_t k = 0; k < kk; ++k) {
            const double av = arow[k];
            const double* brow = b.data.data() + k * m;
            for (std::size_t j = 0; j < m; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    return c;
}

DenseMatrix gram(const DenseMatrix& x) {
    if (x.empty()) {
        throw validation_error("gram: empty input");
    }
    const std::size_t d = x.cols;
    const std::size_t n = x.rows;
    DenseMatrix g(d, d);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(d); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = i; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                acc += x(r, i) * x(r, j);
            }
            g(i, j) = acc;
            g(j, i) = acc;
        }
    }
    return g;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) throw validation_error("add: shape mismatch");
    DenseMatrix c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] + b.data[i];
    return c;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) throw validation_error("subtract: shape mismatch");
    DenseMatrix c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] - b.data[i];
    return c;
}

DenseMatrix scale_columns(const DenseMatrix& a, std::span<const double> scale) {
    if (scale.size() != a.cols) throw validation_error("scale_columns: length mismatch");
    DenseMatrix c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            c(i, j) = a(i, j) * scale[j];
        }
    }
    return c;
}

DenseMatrix scale_rows(const DenseMatrix& a, std::span<const double> scale) {
    if (scale.size() != a.rows) throw validation_error("scale_rows: length mismatch");
    DenseMatrix c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            c(i, j) = a(i, j) * scale[i];
        }
    }
    return c;
}

double max_abs(const DenseMatrix& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

double frobenius_norm(const DenseMatrix& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v * v;
    return std::sqrt(acc);
}

double trace(const DenseMatrix& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < std::min(a.rows, a.cols); ++i) acc += a(i, i);
    return acc;
}

double max_asymmetry(const DenseMatrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = i + 1; j < a.cols; ++j) {
            m = std::max(m, std::abs(a(i, j) - a(j, i)));
        }
    }
    return m;
}

DenseMatrix column_block(const DenseMatrix& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.cols) throw validation_error("column_block: bad range");
    DenseMatrix c(a.rows, end - begin);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = begin; j < end; ++j) {
            c(i, j - begin) = a(i, j);
        }
    }
    return c;
}

DenseMatrix row_block(const DenseMatrix& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows) throw validation_error("row_block: bad range");
    DenseMatrix c(end - begin, a.cols);
    for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            c(i - begin, j) = a(i, j);
        }
    }
    return c;
}

} // namespace rosaq
