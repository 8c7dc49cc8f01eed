#pragma once

#include "rosaq/eigen.hpp"
#include "rosaq/matrix.hpp"
#include "rosaq/quant.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rosaq {

// Streaming second-moment statistics per activation site. Keeps the Gram
// matrix (for PCA), per-channel |x| sums (for scaling and magnitude
// reports) and, at desk scale, the raw rows themselves so rotated-space
// statistics can be measured rather than inferred.
class CalibrationAccumulator {
public:
    struct Site {
        std::size_t dim = 0;
        std::size_t count = 0; // accumulated rows
        DenseMatrix gram_acc; // dim x dim, symmetric
        std::vector<double> abs_sum; // per-channel sum of |x|
        std::vector<double> raw; // count x dim row-major (optional)
        bool keep_raw = true;

        std::vector<double> mean_abs() const;
        DenseMatrix raw_matrix() const;
    };

    void register_site(const std::string& id, std::size_t dim, bool keep_raw = true);
    bool has_site(const std::string& id) const { return sites_.count(id) != 0; }
    const Site& site(const std::string& id) const;
    std::vector<std::string> site_ids() const;

    // gram += activations^T activations (exactly symmetric), magnitude sums
    // += column-wise sum |x|, count += rows. Zero-row batches are no-ops.
    void accumulate(const std::string& id, const DenseMatrix& activations);

    // PCA of the site's accumulated Gram; cached so weight classes sharing
    // a site reuse one decomposition.
    const EigenDecomposition& rotation(const std::string& id) const;

    // Pointwise sum of two accumulators over the same site layout.
    void merge(const CalibrationAccumulator& other);

    // Used by deserialisation to reinstate a previously registered site.
    void restore_site(const std::string& id, std::size_t count, DenseMatrix gram_acc,
                      std::vector<double> abs_sum, std::vector<double> raw);

private:
    std::map<std::string, Site> sites_;
    mutable std::map<std::string, EigenDecomposition> rotation_cache_;
};

EigenDecomposition compute_rotation(const CalibrationAccumulator& acc, const std::string& id);

// One rotation per attention head, each from that head's own Gram.
std::vector<EigenDecomposition> headwise_rotations(const CalibrationAccumulator& acc,
                                                   const std::vector<std::string>& head_sites);

// Single rotation over the concatenated multi-head representation; used by
// the head-wise-vs-global ablation only.
EigenDecomposition global_mhsa_rotation(const CalibrationAccumulator& acc,
                                        const std::string& concat_site);

enum class SelectionMode { Top, Bottom, Random, TopAndBottom };

struct SalientSelection {
    SelectionMode mode = SelectionMode::Top;
    std::size_t k = 0;
    std::uint64_t seed = 0; // Random mode window offset
};

const char* selection_mode_name(SelectionMode m);
SelectionMode selection_mode_from_name(const std::string& name);

// Indices into eigenvalue-sorted channels. Top -> [0,k), Bottom -> last k,
// Random -> k consecutive channels at a seeded uniform offset,
// TopAndBottom -> first k/2 and last k/2. `require_aligned` enforces the
// k % 32 == 0 rule; unit-scope callers may waive it.
std::vector<std::size_t> select_salient(std::size_t dim, const SalientSelection& sel,
                                        bool require_aligned = true);

// A weight matrix split per the mixed-precision scheme: rotated input
// channels permuted salient-first, the salient block kept exact, the rest
// quantized per group. The rotation itself is held by the owner (sites are
// shared), not by this struct.
struct MixedPrecisionWeight {
    QuantConfig cfg;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::size_t salient_k = 0;
    std::vector<std::size_t> permutation; // permuted position -> source channel
    DenseMatrix salient; // salient_k x output_dim, exact rows of R^T W
    // Group records ordered (input group major, output column minor):
    // groups[g * output_dim + c].
    std::vector<QuantizedGroup> groups;

    std::size_t group_count() const {
        return output_dim == 0 ? 0 : groups.size() / output_dim;
    }
    std::size_t group_begin(std::size_t g) const { return salient_k + g * cfg.group_size; }
    std::size_t group_channels(std::size_t g) const;
    void validate() const;
};

// Split rotated weights into exact salient rows and quantized groups.
// rotation == nullptr means identity (no rotation applied).
MixedPrecisionWeight transform_weight(const DenseMatrix& w, const EigenDecomposition* rotation,
                                      const SalientSelection& sel, const QuantConfig& cfg);

// Rotated-space approximation of R^T W with the permutation undone: salient
// rows bitwise exact, others carrying per-group quantization error.
DenseMatrix reconstruct(const MixedPrecisionWeight& w);

// Fused dequantize-matmul: y = x_rotated * (permuted mixed weight). The
// caller applies the input rotation (shared per site). Accumulation runs
// over permuted channels in ascending order, so results are independent of
// thread count.
DenseMatrix mixed_matmul(const DenseMatrix& x_rotated, const MixedPrecisionWeight& w);

// Convenience wrapper applying the rotation inline.
DenseMatrix mixed_forward(const DenseMatrix& x, const EigenDecomposition* rotation,
                          const MixedPrecisionWeight& w);

} // namespace rosaq
