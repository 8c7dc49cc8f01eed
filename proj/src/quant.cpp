#include "rosaq/quant.hpp"

#include "rosaq/errors.hpp"

#include <algorithm>
#include <cmath>

namespace rosaq {

QuantConfig::QuantConfig(int b, std::size_t g) : bits(b), group_size(g) {
    if (bits < 2 || bits > 8) {
        throw validation_error("quant config: bits out of range [2,8]");
    }
    if (group_size == 0 || group_size % 32 != 0) {
        throw validation_error("quant config: group size must be a positive multiple of 32");
    }
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes, int bits) {
    if (bits < 1 || bits > 8) {
        throw validation_error("pack_codes: bits out of range");
    }
    const std::uint32_t limit = 1u << bits;
    std::vector<std::uint8_t> out(packed_bytes(codes.size(), bits), 0);
    std::uint64_t acc = 0;
    int filled = 0;
    std::size_t next = 0;
    for (std::uint32_t code : codes) {
        if (code >= limit) {
            throw validation_error("pack_codes: code out of range for bit width");
        }
        acc |= static_cast<std::uint64_t>(code) << filled;
        filled += bits;
        while (filled >= 8) {
            out[next++] = static_cast<std::uint8_t>(acc & 0xFF);
            acc >>= 8;
            filled -= 8;
        }
    }
    if (filled > 0) {
        out[next] = static_cast<std::uint8_t>(acc & 0xFF);
    }
    return out;
}

std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, int bits,
                                        std::size_t count) {
    if (bits < 1 || bits > 8) {
        throw validation_error("unpack_codes: bits out of range");
    }
    if (bytes.size() < packed_bytes(count, bits)) {
        throw format_error("unpack_codes: truncated code stream");
    }
    std::vector<std::uint32_t> out(count, 0);
    const std::uint32_t mask = (1u << bits) - 1u;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t bit = i * static_cast<std::size_t>(bits);
        std::uint32_t window = bytes[bit >> 3];
        if ((bit >> 3) + 1 < bytes.size()) {
            window |= static_cast<std::uint32_t>(bytes[(bit >> 3) + 1]) << 8;
        }
        out[i] = (window >> (bit & 7)) & mask;
    }
    // When handed an exactly-sized stream, insist the padding is zero.
    const std::size_t used = count * static_cast<std::size_t>(bits);
    if (bytes.size() == packed_bytes(count, bits) && used % 8 != 0) {
        if (bytes[bytes.size() - 1] >> (used % 8) != 0) {
            throw format_error("unpack_codes: nonzero padding bits");
        }
    }
    return out;
}

QuantizedGroup quantize_group(std::span<const double> values, const QuantConfig& cfg) {
    if (values.empty()) {
        throw validation_error("quantize_group: empty input");
    }
    // Accept one (possibly partial) group slice or a whole row block.
    if (values.size() > cfg.group_size && values.size() % cfg.group_size != 0) {
        throw validation_error("quantize_group: length is neither a slice nor a group multiple");
    }
    double lo = values[0];
    double hi = values[0];
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw validation_error("quantize_group: non-finite value");
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    QuantizedGroup g;
    g.bits = cfg.bits;
    g.count = values.size();
    g.offset = lo;

    const std::uint32_t max_code = (1u << cfg.bits) - 1u;
    std::vector<std::uint32_t> codes(values.size(), 0);
    if (hi > lo) {
        g.scale = (hi - lo) / static_cast<double>(max_code);
        for (std::size_t i = 0; i < values.size(); ++i) {
            // std::round is round-half-away-from-zero, the documented tie rule.
            const double t = std::round((values[i] - lo) / g.scale);
            codes[i] = static_cast<std::uint32_t>(
                std::min<double>(t < 0.0 ? 0.0 : t, static_cast<double>(max_code)));
        }
    } else {
        g.scale = 0.0; // constant group sentinel
    }
    g.codes = pack_codes(codes, cfg.bits);
    return g;
}

std::vector<double> dequantize_group(const QuantizedGroup& g) {
    if (g.codes.size() != packed_bytes(g.count, g.bits)) {
        throw format_error("dequantize_group: corrupt packed length");
    }
    const std::vector<std::uint32_t> codes = unpack_codes(g.codes, g.bits, g.count);
    std::vector<double> out(g.count);
    for (std::size_t i = 0; i < g.count; ++i) {
        out[i] = g.scale * static_cast<double>(codes[i]) + g.offset;
    }
    return out;
}

double dequantize_at(const QuantizedGroup& g, std::size_t index) {
    const std::size_t bit = index * static_cast<std::size_t>(g.bits);
    std::uint32_t window = g.codes[bit >> 3];
    if ((bit >> 3) + 1 < g.codes.size()) {
        window |= static_cast<std::uint32_t>(g.codes[(bit >> 3) + 1]) << 8;
    }
    const std::uint32_t code = (window >> (bit & 7)) & ((1u << g.bits) - 1u);
    return g.scale * static_cast<double>(code) + g.offset;
}

ScalingVector awq_scales_from_magnitudes(std::span<const double> mean_abs, double alpha) {
    if (mean_abs.empty()) {
        throw validation_error("awq scales: empty magnitude vector");
    }
    if (alpha < 0.0 || alpha > 1.0) {
        throw validation_error("awq scales: alpha out of [0,1]");
    }
    ScalingVector s;
    s.alpha = alpha;
    s.per_channel_scale.resize(mean_abs.size());
    for (std::size_t j = 0; j < mean_abs.size(); ++j) {
        if (!(mean_abs[j] >= 0.0) || !std::isfinite(mean_abs[j])) {
            throw validation_error("awq scales: magnitudes must be finite and non-negative");
        }
        s.per_channel_scale[j] = std::max(std::pow(mean_abs[j], alpha), 1e-8);
    }
    return s;
}

ScalingVector awq_channel_scales(const DenseMatrix& calib, double alpha) {
    if (calib.empty()) {
        throw validation_error("awq_channel_scales: empty calibration matrix");
    }
    std::vector<double> mean_abs(calib.cols, 0.0);
    for (std::size_t i = 0; i < calib.rows; ++i) {
        for (std::size_t j = 0; j < calib.cols; ++j) {
            mean_abs[j] += std::abs(calib(i, j));
        }
    }
    for (double& m : mean_abs) m /= static_cast<double>(calib.rows);
    return awq_scales_from_magnitudes(mean_abs, alpha);
}

} // namespace rosaq
