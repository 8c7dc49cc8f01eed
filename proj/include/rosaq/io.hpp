#pragma once

#include "rosaq/model.hpp"
#include "rosaq/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rosaq {

// ---- TensorFile ("RQTF") ---------------------------------------------
// magic | version u32 | dtype u32 (0 = binary32, 1 = binary64) | ndim u32 |
// dims u64 each | payload row-major little-endian.
struct TensorFile {
    std::uint32_t dtype = 1;
    std::vector<std::uint64_t> dims;
    std::vector<double> values; // binary32 payloads round-trip exactly

    static TensorFile from_matrix(const DenseMatrix& m, std::uint32_t dtype = 1);
    static TensorFile from_vector(const std::vector<double>& v, std::uint32_t dtype = 1);
    DenseMatrix to_matrix() const;
    std::vector<double> to_vector() const;
    std::uint64_t element_count() const;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& t);
TensorFile read_tensor_file(const std::filesystem::path& path);

// ---- QuantFile ("RQQF") ----------------------------------------------
// magic | version u32 | bits u32 | group_size u32 | rows u64 | cols u64 |
// salient u64 | permutation u32 each | salient block binary32 row-major |
// group records (input-group major, output-column minor): scale binary32,
// offset binary32, packed codes padded to a byte boundary per record.
void write_quant_file(const std::filesystem::path& path, const MixedPrecisionWeight& w);
MixedPrecisionWeight read_quant_file(const std::filesystem::path& path);

// Exact storage arithmetic for the QuantFile layout.
std::uint64_t quant_salient_bytes(std::uint64_t cols, std::uint64_t salient);
std::uint64_t quant_code_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t salient,
                               int bits, std::uint64_t group_size);
std::uint64_t quant_metadata_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t salient,
                                   std::uint64_t group_size);
std::uint64_t quant_file_total_bytes(std::uint64_t rows, std::uint64_t cols,
                                     std::uint64_t salient, int bits, std::uint64_t group_size);

// ---- Calibration accumulator file ("RQAF") ---------------------------
void write_accumulator(const std::filesystem::path& path, const CalibrationAccumulator& acc);
CalibrationAccumulator read_accumulator(const std::filesystem::path& path);

// ---- Dense model file ("RQMF") ----------------------------------------
// Block config followed by the named weight tensors in binary64.
void write_model_file(const std::filesystem::path& path, const BlockConfig& cfg,
                      const BlockWeights& w);
std::pair<BlockConfig, BlockWeights> read_model_file(const std::filesystem::path& path);

// ---- Quantized model directory -----------------------------------------
// manifest.json plus one QuantFile or TensorFile per layer and TensorFiles
// for shared rotations, gains and the W_D channel scale.
void save_quantized_model(const std::filesystem::path& dir, const QuantizedBlock& qb);
QuantizedBlock load_quantized_model(const std::filesystem::path& dir);

// Write-temp-then-rename; directories are created as needed.
void atomic_write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

} // namespace rosaq
