#pragma once

#include "rosaq/model.hpp"

#include <cstdint>
#include <string>

#include <json.hpp>

namespace rosaq {

struct BenchConfig {
    std::uint64_t seed = 1;
    BlockConfig block{};
    std::size_t context_tokens = 48; // decode loop length
    std::size_t batch_size = 4;
    int bits = 4;
    std::size_t group_size = 128;
    // Reference-scale dimensions for the storage arithmetic.
    std::size_t storage_d = 4096;
    std::size_t storage_d_ff = 11008;
    std::size_t storage_heads = 32;

    static BenchConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct BenchResult {
    double median_time_per_token = 0.0; // seconds, dense path
    double decode_speed = 0.0;          // 1 / median_time_per_token
    double throughput = 0.0;            // decode_speed * batch_size
    std::size_t batch_size = 0;
    double quant_median_time_per_token = 0.0;
    double quant_decode_speed = 0.0;
    double quant_throughput = 0.0;
    bool timer_too_coarse = false;
    nlohmann::json report; // full JSON including the storage table
};

// Storage arithmetic for one weight matrix in the QuantFile layout.
struct StorageBreakdown {
    std::uint64_t fp16_bytes = 0;       // 16-bit storage of the whole matrix
    std::uint64_t fp32_bytes = 0;       // the artifact's dense storage
    std::uint64_t salient_bytes = 0;    // binary32 salient block
    std::uint64_t code_bytes = 0;       // packed codes
    std::uint64_t metadata_bytes = 0;   // per-group scale/offset
    std::uint64_t mixed_total_bytes = 0;

    // 16-bit bytes of the quantized channels over their packed form; the
    // salient block stays full precision on both sides of the comparison.
    double quantized_block_compression() const;
    // Whole-matrix ratio, counting the binary32 salient block as stored.
    double whole_matrix_compression_vs_fp16() const;

    nlohmann::json to_json() const;
};

StorageBreakdown storage_breakdown(std::uint64_t rows, std::uint64_t cols, std::uint64_t salient,
                                   int bits, std::uint64_t group_size);

// Aggregate breakdown for the default plan at the given dimensions.
StorageBreakdown plan_storage_breakdown(std::size_t d, std::size_t d_ff, std::size_t heads,
                                        int bits, std::size_t group_size);

BenchResult run_bench(const BenchConfig& cfg);

} // namespace rosaq
