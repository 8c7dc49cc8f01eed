#pragma once

// Serial reference implementations. These are the oracles the test suite
// checks the parallel kernels against and the baseline the benchmark
// compares them with. Keep them independent of the primary code paths:
// plain loops, no shared helpers beyond the matrix container.

#include "rosaq/matrix.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace rosaq::ref {

// Naive ijk triple loop.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// x^T x via an explicit transpose and the naive product, then symmetrised.
DenseMatrix gram(const DenseMatrix& x);

struct RtnResult {
    double scale = 0.0;
    double offset = 0.0;
    std::vector<std::uint32_t> codes;
    std::vector<double> dequantized;
};

// Scalar min-max round-to-nearest, element by element.
RtnResult rtn(std::span<const double> values, int bits);

// Shift-register bit packer (LSB-first) and its inverse.
std::vector<std::uint8_t> pack(std::span<const std::uint32_t> codes, int bits);
std::vector<std::uint32_t> unpack(std::span<const std::uint8_t> bytes, int bits,
                                  std::size_t count);

} // namespace rosaq::ref
