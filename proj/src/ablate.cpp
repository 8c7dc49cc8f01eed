#include "rosaq/ablate.hpp"

#include "rosaq/errors.hpp"
#include "rosaq/metrics.hpp"
#include "rosaq/synthetic.hpp"

#include <cmath>
#include <cstdint>
#include <map>

namespace rosaq {

namespace {

BlockConfig block_from_json(const nlohmann::json& j, BlockConfig base) {
    if (j.contains("d")) base.d = j.at("d").get<std::size_t>();
    if (j.contains("heads")) base.heads = j.at("heads").get<std::size_t>();
    if (j.contains("d_ff")) base.d_ff = j.at("d_ff").get<std::size_t>();
    if (j.contains("eps")) base.eps = j.at("eps").get<double>();
    return base;
}

nlohmann::json block_to_json(const BlockConfig& b) {
    return {{"d", b.d}, {"heads", b.heads}, {"d_ff", b.d_ff}, {"eps", b.eps}};
}

} // namespace

SalientAblationConfig SalientAblationConfig::from_json(const nlohmann::json& j) {
    SalientAblationConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("trials")) c.trials = j.at("trials").get<std::size_t>();
    if (j.contains("block")) c.block = block_from_json(j.at("block"), c.block);
    if (j.contains("calib_sequences")) c.calib_sequences = j.at("calib_sequences").get<std::size_t>();
    if (j.contains("calib_tokens")) c.calib_tokens = j.at("calib_tokens").get<std::size_t>();
    if (j.contains("eval_tokens")) c.eval_tokens = j.at("eval_tokens").get<std::size_t>();
    if (j.contains("bits")) c.bits = j.at("bits").get<int>();
    if (j.contains("group_size")) c.group_size = j.at("group_size").get<std::size_t>();
    if (j.contains("salient")) c.salient = j.at("salient").get<std::size_t>();
    if (j.contains("spectrum_exponent")) c.spectrum_exponent = j.at("spectrum_exponent").get<double>();
    if (j.contains("modes")) {
        c.modes.clear();
        for (const auto& m : j.at("modes")) {
            c.modes.push_back(selection_mode_from_name(m.get<std::string>()));
        }
    }
    return c;
}

nlohmann::json SalientAblationConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["trials"] = trials;
    j["block"] = block_to_json(block);
    j["calib_sequences"] = calib_sequences;
    j["calib_tokens"] = calib_tokens;
    j["eval_tokens"] = eval_tokens;
    j["bits"] = bits;
    j["group_size"] = group_size;
    j["salient"] = salient;
    j["spectrum_exponent"] = spectrum_exponent;
    nlohmann::json modes_j = nlohmann::json::array();
    for (SelectionMode m : modes) modes_j.push_back(selection_mode_name(m));
    j["modes"] = modes_j;
    return j;
}

SalientAblationResult run_ablation_salient(const SalientAblationConfig& cfg) {
    cfg.block.validate();
    if (cfg.trials == 0 || cfg.modes.empty()) {
        throw validation_error("salient ablation: needs trials and modes");
    }

    const std::size_t n_modes = cfg.modes.size();
    std::vector<std::vector<double>> errors(cfg.trials, std::vector<double>(n_modes, 0.0));

#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t trial = 0; trial < static_cast<std::int64_t>(cfg.trials); ++trial) {
        const std::uint64_t trial_seed = cfg.seed + static_cast<std::uint64_t>(trial);
        AnisotropicEnsemble ensemble(trial_seed * 7919u + 1, cfg.block.d, cfg.spectrum_exponent);
        Rng wrng(trial_seed * 6151u + 2);
        const BlockWeights weights = random_block_weights(wrng, cfg.block);

        CalibrationAccumulator acc;
        capture_calibration(cfg.block, weights,
                            ensemble.sample_sequences(cfg.calib_sequences, cfg.calib_tokens), acc);

        const DenseMatrix eval_z = ensemble.sample(cfg.eval_tokens);
        const DenseMatrix reference = block_forward(cfg.block, weights, eval_z);

        for (std::size_t m = 0; m < n_modes; ++m) {
            LayerQuantPlan plan = LayerQuantPlan::default_plan(cfg.block, cfg.bits, cfg.group_size);
            plan.seed = trial_seed;
            for (auto& e : plan.entries) e.selection = cfg.modes[m];
            plan[WeightClass::WQ].salient = cfg.salient;
            plan[WeightClass::WK].salient = cfg.salient;
            plan[WeightClass::WV].salient = cfg.salient;
            plan[WeightClass::WU].salient = cfg.salient;
            plan[WeightClass::WG].salient = cfg.salient;

            const QuantizedBlock qb = quantize_model(cfg.block, weights, acc, plan);
            const DenseMatrix out = quantized_block_forward(qb, eval_z);
            errors[trial][m] = reconstruction_error(reference, out);
        }
    }

    nlohmann::json report;
    report["config"] = cfg.to_json();
    nlohmann::json per_seed = nlohmann::json::array();
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        nlohmann::json row;
        row["seed"] = cfg.seed + t;
        for (std::size_t m = 0; m < n_modes; ++m) {
            row[selection_mode_name(cfg.modes[m])] = errors[t][m];
        }
        per_seed.push_back(row);
    }
    report["per_seed"] = per_seed;

    nlohmann::json means;
    for (std::size_t m = 0; m < n_modes; ++m) {
        double acc_err = 0.0;
        for (std::size_t t = 0; t < cfg.trials; ++t) acc_err += errors[t][m];
        means[selection_mode_name(cfg.modes[m])] = acc_err / static_cast<double>(cfg.trials);
    }
    report["mean_error"] = means;

    nlohmann::json wins;
    for (std::size_t a = 0; a < n_modes; ++a) {
        for (std::size_t b = 0; b < n_modes; ++b) {
            if (a == b) continue;
            std::size_t w = 0;
            for (std::size_t t = 0; t < cfg.trials; ++t) {
                if (errors[t][a] < errors[t][b]) ++w;
            }
            const std::string key = std::string(selection_mode_name(cfg.modes[a])) + "_vs_" +
                                    selection_mode_name(cfg.modes[b]);
            wins[key] = static_cast<double>(w) / static_cast<double>(cfg.trials);
        }
    }
    report["win_rate"] = wins;

    SalientAblationResult result;
    result.report = std::move(report);
    return result;
}

double SalientAblationResult::mean(SelectionMode m) const {
    return report.at("mean_error").at(selection_mode_name(m)).get<double>();
}

double SalientAblationResult::win_rate(SelectionMode a, SelectionMode b) const {
    const std::string key =
        std::string(selection_mode_name(a)) + "_vs_" + selection_mode_name(b);
    return report.at("win_rate").at(key).get<double>();
}

HeadwiseAblationConfig HeadwiseAblationConfig::from_json(const nlohmann::json& j) {
    HeadwiseAblationConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("trials")) c.trials = j.at("trials").get<std::size_t>();
    if (j.contains("block")) c.block = block_from_json(j.at("block"), c.block);
    if (j.contains("calib_sequences")) c.calib_sequences = j.at("calib_sequences").get<std::size_t>();
    if (j.contains("calib_tokens")) c.calib_tokens = j.at("calib_tokens").get<std::size_t>();
    if (j.contains("eval_tokens")) c.eval_tokens = j.at("eval_tokens").get<std::size_t>();
    if (j.contains("bits")) c.bits = j.at("bits").get<int>();
    if (j.contains("group_size")) c.group_size = j.at("group_size").get<std::size_t>();
    if (j.contains("salient_per_head")) c.salient_per_head = j.at("salient_per_head").get<std::size_t>();
    if (j.contains("distinct_heads")) c.distinct_heads = j.at("distinct_heads").get<bool>();
    if (j.contains("spectrum_exponent")) c.spectrum_exponent = j.at("spectrum_exponent").get<double>();
    return c;
}

nlohmann::json HeadwiseAblationConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["trials"] = trials;
    j["block"] = block_to_json(block);
    j["calib_sequences"] = calib_sequences;
    j["calib_tokens"] = calib_tokens;
    j["eval_tokens"] = eval_tokens;
    j["bits"] = bits;
    j["group_size"] = group_size;
    j["salient_per_head"] = salient_per_head;
    j["distinct_heads"] = distinct_heads;
    j["spectrum_exponent"] = spectrum_exponent;
    return j;
}

HeadwiseAblationResult run_ablation_headwise(const HeadwiseAblationConfig& cfg) {
    cfg.block.validate();
    if (cfg.block.heads < 1) throw validation_error("headwise ablation: needs at least one head");
    if (cfg.trials == 0) throw validation_error("headwise ablation: needs trials");

    std::vector<double> err_head(cfg.trials, 0.0);
    std::vector<double> err_global(cfg.trials, 0.0);

#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t trial = 0; trial < static_cast<std::int64_t>(cfg.trials); ++trial) {
        const std::uint64_t trial_seed = cfg.seed + static_cast<std::uint64_t>(trial);
        AnisotropicEnsemble ensemble(trial_seed * 7919u + 11, cfg.block.d, cfg.spectrum_exponent);
        Rng wrng(trial_seed * 6151u + 12);
        BlockWeightOptions opt;
        opt.distinct_head_values = cfg.distinct_heads;
        opt.identical_head_values = !cfg.distinct_heads;
        const BlockWeights weights = random_block_weights(wrng, cfg.block, opt);

        CalibrationAccumulator acc;
        capture_calibration(cfg.block, weights,
                            ensemble.sample_sequences(cfg.calib_sequences, cfg.calib_tokens), acc);

        const DenseMatrix eval_z = ensemble.sample(cfg.eval_tokens);
        const DenseMatrix x1 = rms_norm(eval_z, weights.attn_gain, cfg.block.eps);
        const DenseMatrix reference = mhsa_forward(cfg.block, weights, x1);

        LayerQuantPlan head_plan = LayerQuantPlan::passthrough();
        head_plan.seed = trial_seed;
        head_plan[WeightClass::WO] = {RotationMode::HeadWisePCA, SelectionMode::Top,
                                      cfg.salient_per_head, cfg.bits, cfg.group_size};
        const QuantizedBlock qb_head = quantize_model(cfg.block, weights, acc, head_plan);
        err_head[trial] = reconstruction_error(reference, quantized_mhsa_forward(qb_head, x1));

        LayerQuantPlan global_plan = LayerQuantPlan::passthrough();
        global_plan.seed = trial_seed;
        global_plan[WeightClass::WO] = {RotationMode::GlobalPCA, SelectionMode::Top,
                                        cfg.salient_per_head, cfg.bits, cfg.group_size};
        const QuantizedBlock qb_global = quantize_model(cfg.block, weights, acc, global_plan);
        err_global[trial] = reconstruction_error(reference, quantized_mhsa_forward(qb_global, x1));
    }

    nlohmann::json report;
    report["config"] = cfg.to_json();
    nlohmann::json per_seed = nlohmann::json::array();
    std::size_t wins = 0;
    double sum_h = 0.0, sum_g = 0.0, sum_diff = 0.0, sum_diff2 = 0.0;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        nlohmann::json row;
        row["seed"] = cfg.seed + t;
        row["headwise"] = err_head[t];
        row["global"] = err_global[t];
        per_seed.push_back(row);
        if (err_head[t] <= err_global[t]) ++wins;
        sum_h += err_head[t];
        sum_g += err_global[t];
        const double diff = err_head[t] - err_global[t];
        sum_diff += diff;
        sum_diff2 += diff * diff;
    }
    const double n = static_cast<double>(cfg.trials);
    const double mean_diff = sum_diff / n;
    const double var_diff = cfg.trials > 1 ? (sum_diff2 - n * mean_diff * mean_diff) / (n - 1.0) : 0.0;
    const double t_stat =
        var_diff > 0.0 ? mean_diff / std::sqrt(var_diff / n) : 0.0;

    report["per_seed"] = per_seed;
    report["mean_headwise"] = sum_h / n;
    report["mean_global"] = sum_g / n;
    report["headwise_win_rate"] = static_cast<double>(wins) / n;
    report["paired_t_statistic"] = t_stat;

    HeadwiseAblationResult result;
    result.report = std::move(report);
    return result;
}

double HeadwiseAblationResult::headwise_win_rate() const {
    return report.at("headwise_win_rate").get<double>();
}
double HeadwiseAblationResult::mean_headwise() const {
    return report.at("mean_headwise").get<double>();
}
double HeadwiseAblationResult::mean_global() const {
    return report.at("mean_global").get<double>();
}
double HeadwiseAblationResult::paired_t_statistic() const {
    return report.at("paired_t_statistic").get<double>();
}

} // namespace rosaq
