#pragma once

#include "rosaq/matrix.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace rosaq {

// Per-group quantization settings. The plan layer restricts bits to {3,4};
// the type itself accepts 2..8 so small definitional cases stay testable.
struct QuantConfig {
    int bits = 4;
    std::size_t group_size = 128;

    QuantConfig() = default;
    QuantConfig(int b, std::size_t g);
};

// One quantized slice: a group of input channels for a single output
// column, sharing an affine (scale, offset) pair. scale == 0 marks a
// constant group whose reconstruction is exactly `offset`.
struct QuantizedGroup {
    int bits = 4;
    double scale = 0.0;
    double offset = 0.0;
    std::size_t count = 0; // number of codes
    std::vector<std::uint8_t> codes; // LSB-first bit stream, byte padded
};

// Number of bytes pack_codes emits for `count` codes at `bits` each.
inline std::size_t packed_bytes(std::size_t count, int bits) {
    return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

// Codes concatenated LSB-first into a little-endian bit stream, zero padded
// to the next byte. bits=4: two codes per byte, first code in the low nibble.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes, int bits);

// Exact inverse of pack_codes. Rejects truncated streams and verifies the
// padding bits are zero.
std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, int bits,
                                        std::size_t count);

// Affine min-max round-to-nearest: offset = min, scale = (max-min)/(2^b-1),
// code = round((w-offset)/scale) with round-half-away-from-zero. Constant
// input degenerates to scale 0 / all-zero codes / exact reconstruction.
QuantizedGroup quantize_group(std::span<const double> values, const QuantConfig& cfg);

std::vector<double> dequantize_group(const QuantizedGroup& g);

// Decode a single value without materialising the whole group.
double dequantize_at(const QuantizedGroup& g, std::size_t index);

// Per-channel scaling for weights that cannot absorb a rotation: the layer
// computes (X D^-1)(D W) instead of X W, with D diagonal.
struct ScalingVector {
    std::vector<double> per_channel_scale; // strictly positive
    double alpha = 0.5;
};

// s_j = (mean_i |calib(i,j)|)^alpha, floored at 1e-8.
ScalingVector awq_channel_scales(const DenseMatrix& calib, double alpha);

// Same derivation from a precomputed per-channel |x| mean.
ScalingVector awq_scales_from_magnitudes(std::span<const double> mean_abs, double alpha);

} // namespace rosaq
