#pragma once

#include "rosaq/pipeline.hpp"

#include <array>
#include <cstdint>
#include <string>

#include <json.hpp>

namespace rosaq {

struct BlockConfig {
    std::size_t d = 256;
    std::size_t heads = 4;
    std::size_t d_ff = 704;
    double eps = 1e-6;

    std::size_t head_dim() const { return d / heads; }
    void validate() const;
};

enum class WeightClass : int { WQ = 0, WK, WV, WO, WU, WG, WD };
constexpr std::size_t kWeightClassCount = 7;

const char* weight_class_name(WeightClass c);
WeightClass weight_class_from_name(const std::string& name);

enum class RotationMode {
    PerLayerPCA, // shared input-site rotation, applied online in the kernel
    HeadWisePCA, // W_O only: per-head rotation, absorbed into W_V
    GlobalPCA,   // W_O only: one rotation over the concatenated heads (ablation)
    AwqScale,    // W_D: per-channel scaling instead of a rotation
    None,        // mixed-precision split without any rotation
    Passthrough  // keep the dense matrix, no quantization at all
};

const char* rotation_mode_name(RotationMode m);
RotationMode rotation_mode_from_name(const std::string& name);

struct PlanEntry {
    RotationMode rotation = RotationMode::PerLayerPCA;
    SelectionMode selection = SelectionMode::Top;
    // Salient budget. For WO under HeadWisePCA it counts per head and under
    // GlobalPCA the total is salient * heads; everywhere else it is total.
    std::size_t salient = 0;
    int bits = 4;
    std::size_t group_size = 128;
    double awq_alpha = 0.5;
    bool awq_grid = false;
};

// Per-weight-class quantization policy for one block.
struct LayerQuantPlan {
    std::array<PlanEntry, kWeightClassCount> entries;
    std::uint64_t seed = 0;

    PlanEntry& operator[](WeightClass c) { return entries[static_cast<int>(c)]; }
    const PlanEntry& operator[](WeightClass c) const { return entries[static_cast<int>(c)]; }

    // Budgets from the reference recipe, scaled to the block width: 32
    // salient channels per 1024 (minimum 32) for W_Q/W_K/W_V and W_U/W_G,
    // the same rule per head for W_O, and scaling-only W_D.
    static LayerQuantPlan default_plan(const BlockConfig& cfg, int bits = 4,
                                       std::size_t group_size = 128);
    // Every channel salient, rotations kept: quantization becomes the
    // identity while the rotation algebra stays in the path.
    static LayerQuantPlan identity_q_plan(const BlockConfig& cfg);
    // Every channel salient and no rotation anywhere: forward must be
    // bit-identical to the dense path.
    static LayerQuantPlan all_salient_no_rotation(const BlockConfig& cfg);
    // No salient channels, no rotation: plain per-group RTN of each matrix.
    static LayerQuantPlan rtn_only(const BlockConfig& cfg, int bits = 4,
                                   std::size_t group_size = 128);
    static LayerQuantPlan passthrough();

    // Structural checks against a block: budget alignment, per-class ranges.
    void validate(const BlockConfig& cfg) const;

    nlohmann::json to_json() const;
    static LayerQuantPlan from_json(const nlohmann::json& j);
};

// Default salient budget for a site of the given width.
std::size_t default_salient_budget(std::size_t dim);

} // namespace rosaq
