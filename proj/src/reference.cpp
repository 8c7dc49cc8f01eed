#include "rosaq/reference.hpp"

#include <cmath>

namespace rosaq::ref {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += a(i, k) * b(k, j);
            }
            c(i, j) = acc;
        }
    }
    return c;
}

DenseMatrix gram(const DenseMatrix& x) {
    DenseMatrix xt(x.cols, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = 0; j < x.cols; ++j) {
            xt(j, i) = x(i, j);
        }
    }
    DenseMatrix g = ref::matmul(xt, x);
    for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < g.cols; ++j) {
            const double v = 0.5 * (g(i, j) + g(j, i));
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

RtnResult rtn(std::span<const double> values, int bits) {
    RtnResult r;
    double lo = values[0];
    double hi = values[0];
    for (double v : values) {
        if (v < lo) lo = v;
        if (v > hi) hi = v;
    }
    r.offset = lo;
    const double levels = static_cast<double>((1u << bits) - 1u);
    r.codes.resize(values.size());
    r.dequantized.resize(values.size());
    if (hi == lo) {
        r.scale = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            r.codes[i] = 0;
            r.dequantized[i] = lo;
        }
        return r;
    }
    r.scale = (hi - lo) / levels;
    for (std::size_t i = 0; i < values.size(); ++i) {
        double t = std::round((values[i] - r.offset) / r.scale);
        if (t < 0.0) t = 0.0;
        if (t > levels) t = levels;
        r.codes[i] = static_cast<std::uint32_t>(t);
        r.dequantized[i] = r.scale * t + r.offset;
    }
    return r;
}

std::vector<std::uint8_t> pack(std::span<const std::uint32_t> codes, int bits) {
    std::vector<std::uint8_t> out;
    out.reserve((codes.size() * bits + 7) / 8);
    std::uint64_t reg = 0;
    int filled = 0;
    for (std::uint32_t code : codes) {
        reg |= static_cast<std::uint64_t>(code) << filled;
        filled += bits;
        while (filled >= 8) {
            out.push_back(static_cast<std::uint8_t>(reg & 0xFF));
            reg >>= 8;
            filled -= 8;
        }
    }
    if (filled > 0) {
        out.push_back(static_cast<std::uint8_t>(reg & 0xFF));
    }
    return out;
}

std::vector<std::uint32_t> unpack(std::span<const std::uint8_t> bytes, int bits,
                                  std::size_t count) {
    std::vector<std::uint32_t> out(count);
    std::uint64_t reg = 0;
    int filled = 0;
    std::size_t next = 0;
    const std::uint32_t mask = (1u << bits) - 1u;
    for (std::size_t i = 0; i < count; ++i) {
        while (filled < bits) {
            reg |= static_cast<std::uint64_t>(bytes[next++]) << filled;
            filled += 8;
        }
        out[i] = static_cast<std::uint32_t>(reg & mask);
        reg >>= bits;
        filled -= bits;
    }
    return out;
}

} // namespace rosaq::ref
