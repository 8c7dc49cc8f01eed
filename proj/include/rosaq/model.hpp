#pragma once

#include "rosaq/pipeline.hpp"
#include "rosaq/plan.hpp"

#include <optional>
#include <string>
#include <vector>

namespace rosaq {

// Single pre-norm transformer block: z + MHSA(norm(z)), then + FFN(norm(.)),
// causal attention, SiLU-gated FFN, no positional encoding.
struct BlockWeights {
    DenseMatrix wq, wk, wv; // d x d, viewed as H column blocks of d x d_h
    DenseMatrix wo;         // d x d, viewed as H row blocks of d_h x d
    DenseMatrix wu, wg;     // d x d_ff
    DenseMatrix wd;         // d_ff x d
    std::vector<double> attn_gain, ffn_gain; // RMS-norm gains, length d

    void validate(const BlockConfig& cfg) const;
};

// Calibration site ids used across the pipeline and the CLI.
namespace sites {
inline const std::string mhsa_input = "mhsa_input";
inline const std::string head_concat = "head_concat";
inline const std::string ffn_input = "ffn_input";
inline const std::string wd_input = "wd_input";
std::string head(std::size_t h);
std::vector<std::string> heads(std::size_t count);
} // namespace sites

DenseMatrix rms_norm(const DenseMatrix& z, std::span<const double> gain, double eps);
DenseMatrix silu(const DenseMatrix& x);

// Causal scaled dot-product attention over one head (inputs T x d_h).
// Softmax rows are normalised to sum to 1.
DenseMatrix causal_attention(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& v);

// Attention sublayer on its (already normalised) input x: T x d.
DenseMatrix mhsa_forward(const BlockConfig& cfg, const BlockWeights& w, const DenseMatrix& x);

// FFN sublayer: (silu(x Wg) ⊙ (x Wu)) Wd.
DenseMatrix ffn_forward(const BlockConfig& cfg, const BlockWeights& w, const DenseMatrix& x);

// Full residual block.
DenseMatrix block_forward(const BlockConfig& cfg, const BlockWeights& w, const DenseMatrix& z);

// Runs dense forward passes over the given sequences, recording activations
// at the MHSA input, each head's attentive representation, the concatenated
// heads, the FFN input and the W_D input. Appends into acc, registering the
// sites on first use, so shards can be captured independently and merged.
void capture_calibration(const BlockConfig& cfg, const BlockWeights& w,
                         const std::vector<DenseMatrix>& sequences, CalibrationAccumulator& acc);

// A linear layer in either dense or mixed-precision form. `rotated_input`
// tells the block forward whether this layer consumes the site-rotated
// activations.
struct QuantizedLinear {
    bool passthrough = true;
    bool rotated_input = false;
    DenseMatrix fp;
    MixedPrecisionWeight mixed;

    DenseMatrix forward(const DenseMatrix& x_plain, const DenseMatrix& x_rotated) const;
    std::size_t output_dim() const { return passthrough ? fp.cols : mixed.output_dim; }
};

// The quantized block. Site rotations are shared (one per site, applied
// online); head-wise W_O rotations are absorbed into W_V and so never
// materialise at runtime.
struct QuantizedBlock {
    BlockConfig cfg;
    LayerQuantPlan plan;

    std::optional<DenseMatrix> r_mhsa; // d x d input rotation for wq/wk/wv
    QuantizedLinear wq, wk, wv;

    RotationMode wo_mode = RotationMode::Passthrough;
    std::vector<QuantizedLinear> wo_heads;   // HeadWisePCA: one d_h x d layer per head
    std::optional<DenseMatrix> r_wo_global;  // GlobalPCA input rotation
    QuantizedLinear wo_single;               // GlobalPCA / None / Passthrough

    std::optional<DenseMatrix> r_ffn; // d x d input rotation for wu/wg
    QuantizedLinear wu, wg;

    std::vector<double> wd_scale; // AWQ per-channel scale (empty when unused)
    QuantizedLinear wd;

    std::vector<double> attn_gain, ffn_gain;
};

// Replace every linear layer per the plan, reading rotations and channel
// statistics from the accumulator. Throws with the offending weight class
// named when the plan and model disagree.
QuantizedBlock quantize_model(const BlockConfig& cfg, const BlockWeights& w,
                              const CalibrationAccumulator& acc, const LayerQuantPlan& plan);

// Quantized attention sublayer on normalised input x (exposed separately for
// the head-wise ablation).
DenseMatrix quantized_mhsa_forward(const QuantizedBlock& qb, const DenseMatrix& x);
DenseMatrix quantized_ffn_forward(const QuantizedBlock& qb, const DenseMatrix& x);
DenseMatrix quantized_block_forward(const QuantizedBlock& qb, const DenseMatrix& z);

// Stack-of-blocks runners. Smoke-tested only; the single block carries all
// the measured properties.
DenseMatrix stack_forward(const BlockConfig& cfg, const std::vector<BlockWeights>& blocks,
                          const DenseMatrix& z);
DenseMatrix quantized_stack_forward(const std::vector<QuantizedBlock>& blocks,
                                    const DenseMatrix& z);

} // namespace rosaq
