#include "rosaq/bench.hpp"

#include "rosaq/errors.hpp"
#include "rosaq/io.hpp"
#include "rosaq/metrics.hpp"
#include "rosaq/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace rosaq {

BenchConfig BenchConfig::from_json(const nlohmann::json& j) {
    BenchConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("block")) {
        const auto& b = j.at("block");
        if (b.contains("d")) c.block.d = b.at("d").get<std::size_t>();
        if (b.contains("heads")) c.block.heads = b.at("heads").get<std::size_t>();
        if (b.contains("d_ff")) c.block.d_ff = b.at("d_ff").get<std::size_t>();
    }
    if (j.contains("context_tokens")) c.context_tokens = j.at("context_tokens").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("bits")) c.bits = j.at("bits").get<int>();
    if (j.contains("group_size")) c.group_size = j.at("group_size").get<std::size_t>();
    if (j.contains("storage_d")) c.storage_d = j.at("storage_d").get<std::size_t>();
    if (j.contains("storage_d_ff")) c.storage_d_ff = j.at("storage_d_ff").get<std::size_t>();
    if (j.contains("storage_heads")) c.storage_heads = j.at("storage_heads").get<std::size_t>();
    return c;
}

nlohmann::json BenchConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["block"] = {{"d", block.d}, {"heads", block.heads}, {"d_ff", block.d_ff}, {"eps", block.eps}};
    j["context_tokens"] = context_tokens;
    j["batch_size"] = batch_size;
    j["bits"] = bits;
    j["group_size"] = group_size;
    j["storage_d"] = storage_d;
    j["storage_d_ff"] = storage_d_ff;
    j["storage_heads"] = storage_heads;
    return j;
}

double StorageBreakdown::quantized_block_compression() const {
    const std::uint64_t quantized = code_bytes + metadata_bytes;
    if (quantized == 0) return 0.0;
    // 16-bit storage of the channels that were quantized: 4x their codes at
    // 4 bits would occupy, computed exactly from the dense element count.
    const std::uint64_t fp16_quantized = fp16_bytes - (salient_bytes / 4) * 2;
    return static_cast<double>(fp16_quantized) / static_cast<double>(quantized);
}

double StorageBreakdown::whole_matrix_compression_vs_fp16() const {
    if (mixed_total_bytes == 0) return 0.0;
    return static_cast<double>(fp16_bytes) / static_cast<double>(mixed_total_bytes);
}

nlohmann::json StorageBreakdown::to_json() const {
    nlohmann::json j;
    j["fp16_bytes"] = fp16_bytes;
    j["fp32_bytes"] = fp32_bytes;
    j["salient_bytes"] = salient_bytes;
    j["code_bytes"] = code_bytes;
    j["metadata_bytes"] = metadata_bytes;
    j["mixed_total_bytes"] = mixed_total_bytes;
    j["quantized_block_compression"] = quantized_block_compression();
    j["whole_matrix_compression_vs_fp16"] = whole_matrix_compression_vs_fp16();
    return j;
}

StorageBreakdown storage_breakdown(std::uint64_t rows, std::uint64_t cols, std::uint64_t salient,
                                   int bits, std::uint64_t group_size) {
    if (salient > rows) throw validation_error("storage_breakdown: salient exceeds rows");
    StorageBreakdown s;
    s.fp16_bytes = rows * cols * 2;
    s.fp32_bytes = rows * cols * 4;
    s.salient_bytes = quant_salient_bytes(cols, salient);
    s.code_bytes = quant_code_bytes(rows, cols, salient, bits, group_size);
    s.metadata_bytes = quant_metadata_bytes(rows, cols, salient, group_size);
    s.mixed_total_bytes = s.salient_bytes + s.code_bytes + s.metadata_bytes;
    return s;
}

StorageBreakdown plan_storage_breakdown(std::size_t d, std::size_t d_ff, std::size_t heads,
                                        int bits, std::size_t group_size) {
    const std::size_t dh = d / heads;
    const std::size_t k_layer = default_salient_budget(d);
    const std::size_t k_head = default_salient_budget(dh);

    StorageBreakdown total;
    auto accumulate = [&total](const StorageBreakdown& s, std::size_t copies = 1) {
        for (std::size_t i = 0; i < copies; ++i) {
            total.fp16_bytes += s.fp16_bytes;
            total.fp32_bytes += s.fp32_bytes;
            total.salient_bytes += s.salient_bytes;
            total.code_bytes += s.code_bytes;
            total.metadata_bytes += s.metadata_bytes;
            total.mixed_total_bytes += s.mixed_total_bytes;
        }
    };
    accumulate(storage_breakdown(d, d, k_layer, bits, group_size), 3);          // wq wk wv
    accumulate(storage_breakdown(dh, d, k_head, bits, group_size), heads);      // wo per head
    accumulate(storage_breakdown(d, d_ff, k_layer, bits, group_size), 2);       // wu wg
    accumulate(storage_breakdown(d_ff, d, 0, bits, group_size));                // wd, scaling only
    return total;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double timer_resolution_seconds() {
    using clock = std::chrono::steady_clock;
    double best = 1.0;
    for (int i = 0; i < 64; ++i) {
        const auto a = clock::now();
        auto b = clock::now();
        while (b == a) b = clock::now();
        best = std::min(best, std::chrono::duration<double>(b - a).count());
    }
    return best;
}

template <typename Step>
std::vector<double> decode_loop(std::size_t context_tokens, std::size_t batch, Step&& step) {
    std::vector<double> times;
    times.reserve(context_tokens);
    using clock = std::chrono::steady_clock;
    for (std::size_t t = 1; t <= context_tokens; ++t) {
        const auto start = clock::now();
        for (std::size_t b = 0; b < batch; ++b) {
            step(t, b);
        }
        times.push_back(std::chrono::duration<double>(clock::now() - start).count());
    }
    return times;
}

} // namespace

BenchResult run_bench(const BenchConfig& cfg) {
    cfg.block.validate();
    if (cfg.context_tokens < 3 || cfg.batch_size == 0) {
        throw validation_error("bench: needs at least 3 context tokens and a positive batch");
    }

    AnisotropicEnsemble ensemble(cfg.seed * 7919u + 21, cfg.block.d);
    Rng wrng(cfg.seed * 6151u + 22);
    const BlockWeights weights = random_block_weights(wrng, cfg.block);

    CalibrationAccumulator acc;
    capture_calibration(cfg.block, weights, ensemble.sample_sequences(4, 48), acc);
    LayerQuantPlan plan = LayerQuantPlan::default_plan(cfg.block, cfg.bits, cfg.group_size);
    plan.seed = cfg.seed;
    const QuantizedBlock qb = quantize_model(cfg.block, weights, acc, plan);

    // One full prefix per batch lane; each decode step re-runs the forward
    // over the prefix (no KV cache at desk scale).
    std::vector<DenseMatrix> prefixes;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        prefixes.push_back(ensemble.sample(cfg.context_tokens));
    }
    auto prefix_view = [&](std::size_t b, std::size_t t) {
        DenseMatrix z(t, cfg.block.d);
        std::copy(prefixes[b].data.begin(), prefixes[b].data.begin() + t * cfg.block.d,
                  z.data.begin());
        return z;
    };

    double sink = 0.0;
    const std::vector<double> dense_times =
        decode_loop(cfg.context_tokens, cfg.batch_size, [&](std::size_t t, std::size_t b) {
            const DenseMatrix out = block_forward(cfg.block, weights, prefix_view(b, t));
            sink += out.data.back();
        });
    const std::vector<double> quant_times =
        decode_loop(cfg.context_tokens, cfg.batch_size, [&](std::size_t t, std::size_t b) {
            const DenseMatrix out = quantized_block_forward(qb, prefix_view(b, t));
            sink += out.data.back();
        });

    BenchResult r;
    r.batch_size = cfg.batch_size;
    r.median_time_per_token = median(dense_times);
    r.decode_speed = 1.0 / r.median_time_per_token;
    r.throughput = r.decode_speed * static_cast<double>(cfg.batch_size);
    r.quant_median_time_per_token = median(quant_times);
    r.quant_decode_speed = 1.0 / r.quant_median_time_per_token;
    r.quant_throughput = r.quant_decode_speed * static_cast<double>(cfg.batch_size);

    const double resolution = timer_resolution_seconds();
    r.timer_too_coarse = std::min(r.median_time_per_token, r.quant_median_time_per_token) <
                         100.0 * resolution;

    nlohmann::json report;
    report["config"] = cfg.to_json();
    report["dense"] = {{"median_time_per_token", r.median_time_per_token},
                       {"decode_speed", r.decode_speed},
                       {"throughput", r.throughput},
                       {"step_times", dense_times}};
    report["quantized"] = {{"median_time_per_token", r.quant_median_time_per_token},
                           {"decode_speed", r.quant_decode_speed},
                           {"throughput", r.quant_throughput},
                           {"step_times", quant_times}};
    report["batch_size"] = cfg.batch_size;
    report["timer_resolution_seconds"] = resolution;
    report["timer_too_coarse"] = r.timer_too_coarse;
    report["checksum"] = sink;

    nlohmann::json storage;
    storage["toy_plan"] =
        plan_storage_breakdown(cfg.block.d, cfg.block.d_ff, cfg.block.heads, cfg.bits,
                               cfg.group_size)
            .to_json();
    storage["reference_plan"] =
        plan_storage_breakdown(cfg.storage_d, cfg.storage_d_ff, cfg.storage_heads, cfg.bits,
                               cfg.group_size)
            .to_json();
    storage["reference_single_matrix"] =
        storage_breakdown(cfg.storage_d, cfg.storage_d, default_salient_budget(cfg.storage_d),
                          cfg.bits, cfg.group_size)
            .to_json();
    report["storage"] = storage;

    r.report = std::move(report);
    return r;
}

} // namespace rosaq
