#pragma once

#include "rosaq/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace rosaq {

// Paired comparison of salient-selection variants on the toy block: every
// mode quantizes the same weights with the same rotations on the same data.
struct SalientAblationConfig {
    std::uint64_t seed = 1;
    std::size_t trials = 100;
    BlockConfig block{};
    std::size_t calib_sequences = 6;
    std::size_t calib_tokens = 64;
    std::size_t eval_tokens = 64;
    int bits = 4;
    std::size_t group_size = 128;
    std::size_t salient = 32; // per-head budget derives from the block width
    double spectrum_exponent = 2.0;
    std::vector<SelectionMode> modes{SelectionMode::Top, SelectionMode::Bottom,
                                     SelectionMode::Random, SelectionMode::TopAndBottom};

    static SalientAblationConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct SalientAblationResult {
    nlohmann::json report; // config echo, per-seed raw errors, aggregates
    double mean(SelectionMode m) const;
    double win_rate(SelectionMode a, SelectionMode b) const; // P[err_a < err_b]
};

SalientAblationResult run_ablation_salient(const SalientAblationConfig& cfg);

// Head-wise versus global PCA for the attention output projection, W_O
// quantized both ways on identical data, everything else dense.
struct HeadwiseAblationConfig {
    std::uint64_t seed = 1;
    std::size_t trials = 100;
    BlockConfig block{};
    std::size_t calib_sequences = 4;
    std::size_t calib_tokens = 64;
    std::size_t eval_tokens = 128;
    int bits = 4;
    // 32 aligns the group grid with the per-head split so the comparison
    // isolates the rotation structure.
    std::size_t group_size = 32;
    std::size_t salient_per_head = 32;
    bool distinct_heads = true; // false: identically distributed heads (control)
    double spectrum_exponent = 2.0;

    static HeadwiseAblationConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct HeadwiseAblationResult {
    nlohmann::json report;
    double headwise_win_rate() const; // P[err_headwise <= err_global]
    double mean_headwise() const;
    double mean_global() const;
    double paired_t_statistic() const; // mean(diff) / (std(diff)/sqrt(n))
};

HeadwiseAblationResult run_ablation_headwise(const HeadwiseAblationConfig& cfg);

} // namespace rosaq
