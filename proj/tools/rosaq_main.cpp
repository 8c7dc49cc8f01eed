// rosaq: desk-scale rotation-based saliency-aware weight quantization.
//
// Subcommands: gen, calibrate, quantize, infer, ablate, bench, inspect.
// Exit codes: 0 success, 1 usage, 2 validation/format, 3 numerical failure.

#include "rosaq/ablate.hpp"
#include "rosaq/bench.hpp"
#include "rosaq/errors.hpp"
#include "rosaq/io.hpp"
#include "rosaq/metrics.hpp"
#include "rosaq/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace rosaq;

std::uint64_t env_seed_or(std::uint64_t fallback) {
    if (const char* s = std::getenv("ROSAQ_SEED")) {
        return static_cast<std::uint64_t>(std::strtoull(s, nullptr, 10));
    }
    return fallback;
}

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open \"" + path + "\"");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("json parse error in \"") + path + "\": " + e.what());
    }
    return j;
}

// Calibration data files are 2-D [T,d] (one sequence) or 3-D [S,T,d].
std::vector<DenseMatrix> sequences_from_tensor(const TensorFile& t) {
    std::vector<DenseMatrix> out;
    if (t.dims.size() == 2) {
        out.push_back(t.to_matrix());
    } else if (t.dims.size() == 3) {
        const std::size_t s = static_cast<std::size_t>(t.dims[0]);
        const std::size_t rows = static_cast<std::size_t>(t.dims[1]);
        const std::size_t cols = static_cast<std::size_t>(t.dims[2]);
        for (std::size_t i = 0; i < s; ++i) {
            std::vector<double> chunk(t.values.begin() + i * rows * cols,
                                      t.values.begin() + (i + 1) * rows * cols);
            out.emplace_back(rows, cols, std::move(chunk));
        }
    } else {
        throw format_error("data tensor must be 2-D or 3-D");
    }
    return out;
}

int cmd_gen(const std::string& model_out, const std::string& data_out, std::uint64_t seed,
            std::size_t d, std::size_t heads, std::size_t d_ff, std::size_t sequences,
            std::size_t tokens) {
    BlockConfig cfg;
    cfg.d = d;
    cfg.heads = heads;
    cfg.d_ff = d_ff;
    cfg.validate();
    Rng rng(seed * 6151u + 2);
    const BlockWeights w = random_block_weights(rng, cfg);
    write_model_file(model_out, cfg, w);

    AnisotropicEnsemble ensemble(seed * 7919u + 1, cfg.d);
    TensorFile data;
    data.dtype = 1;
    data.dims = {sequences, tokens, cfg.d};
    data.values.reserve(sequences * tokens * cfg.d);
    for (std::size_t s = 0; s < sequences; ++s) {
        const DenseMatrix m = ensemble.sample(tokens);
        data.values.insert(data.values.end(), m.data.begin(), m.data.end());
    }
    write_tensor_file(data_out, data);
    std::cout << "wrote " << model_out << " and " << data_out << "\n";
    return 0;
}

int cmd_calibrate(const std::string& model_path, const std::string& data_path,
                  const std::string& out_path) {
    auto [cfg, weights] = read_model_file(model_path);
    const auto sequences = sequences_from_tensor(read_tensor_file(data_path));
    CalibrationAccumulator acc;
    capture_calibration(cfg, weights, sequences, acc);
    write_accumulator(out_path, acc);
    std::size_t rows = 0;
    for (const auto& s : sequences) rows += s.rows;
    std::cout << "calibrated " << sequences.size() << " sequences (" << rows << " rows) across "
              << acc.site_ids().size() << " sites -> " << out_path << "\n";
    return 0;
}

// Per-layer reconstruction metrics: weight-space relative error plus the
// calibration-weighted output error tr(D^T G D) / tr(W^T G W).
nlohmann::json layer_report(const DenseMatrix& original, const DenseMatrix& reference_rotated,
                            const DenseMatrix& reconstructed, const DenseMatrix* gram_acc) {
    nlohmann::json j;
    j["weight_space_error"] = reconstruction_error(reference_rotated, reconstructed);
    if (gram_acc != nullptr) {
        const DenseMatrix delta = subtract(reconstructed, reference_rotated);
        const DenseMatrix gd = matmul(*gram_acc, delta);
        double num = 0.0;
        for (std::size_t i = 0; i < delta.data.size(); ++i) num += delta.data[i] * gd.data[i];
        const DenseMatrix gw = matmul(*gram_acc, original);
        double den = 0.0;
        for (std::size_t i = 0; i < original.data.size(); ++i) den += original.data[i] * gw.data[i];
        j["calibration_output_error"] = den > 0.0 ? std::sqrt(std::max(num, 0.0) / den) : 0.0;
    }
    return j;
}

int cmd_quantize(const std::string& model_path, const std::string& acc_path,
                 const std::string& plan_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_flag) {
    auto [cfg, weights] = read_model_file(model_path);
    CalibrationAccumulator acc = read_accumulator(acc_path);

    LayerQuantPlan plan;
    if (plan_path == "default") {
        plan = LayerQuantPlan::default_plan(cfg);
    } else {
        plan = LayerQuantPlan::from_json(load_json(plan_path));
    }
    plan.seed = seed_flag ? *seed_flag : env_seed_or(plan.seed);

    const QuantizedBlock qb = quantize_model(cfg, weights, acc, plan);
    save_quantized_model(out_dir, qb);

    nlohmann::json report;
    report["plan"] = plan.to_json();
    report["config"] = {{"d", cfg.d}, {"heads", cfg.heads}, {"d_ff", cfg.d_ff}, {"eps", cfg.eps}};
    report["seed"] = plan.seed;

    nlohmann::json layers;
    auto add_mixed = [&](const std::string& name, const QuantizedLinear& lin,
                         const DenseMatrix& original, const EigenDecomposition* rot,
                         const DenseMatrix* gram_acc) {
        if (lin.passthrough) {
            layers[name] = {{"kind", "dense"}};
            return;
        }
        const DenseMatrix rotated =
            rot ? matmul(transpose(rot->eigenvectors), original) : original;
        layers[name] = layer_report(original, rotated, reconstruct(lin.mixed), gram_acc);
        layers[name]["kind"] = "mixed";
        layers[name]["salient"] = lin.mixed.salient_k;
    };

    const bool has_mhsa = acc.has_site(sites::mhsa_input) && acc.site(sites::mhsa_input).count > 0;
    const EigenDecomposition* r_mhsa =
        qb.r_mhsa && has_mhsa ? &acc.rotation(sites::mhsa_input) : nullptr;
    const DenseMatrix* g_mhsa = has_mhsa ? &acc.site(sites::mhsa_input).gram_acc : nullptr;
    add_mixed("wq", qb.wq, weights.wq, r_mhsa, g_mhsa);
    add_mixed("wk", qb.wk, weights.wk, r_mhsa, g_mhsa);
    // wv is reported against the head-absorbed matrix inside the block, so
    // compare in weight space only.
    if (!qb.wv.passthrough) {
        layers["wv"] = {{"kind", "mixed"}, {"salient", qb.wv.mixed.salient_k}};
    } else {
        layers["wv"] = {{"kind", "dense"}};
    }
    if (qb.wo_mode == RotationMode::HeadWisePCA) {
        for (std::size_t h = 0; h < qb.wo_heads.size(); ++h) {
            const std::size_t dh = cfg.head_dim();
            const DenseMatrix who = row_block(weights.wo, h * dh, (h + 1) * dh);
            const auto& rot = acc.rotation(sites::head(h));
            add_mixed("wo_head_" + std::to_string(h), qb.wo_heads[h], who, &rot,
                      &acc.site(sites::head(h)).gram_acc);
        }
    } else if (!qb.wo_single.passthrough) {
        const EigenDecomposition* rot =
            qb.r_wo_global ? &acc.rotation(sites::head_concat) : nullptr;
        add_mixed("wo", qb.wo_single, weights.wo, rot,
                  acc.has_site(sites::head_concat) ? &acc.site(sites::head_concat).gram_acc
                                                   : nullptr);
    } else {
        layers["wo"] = {{"kind", "dense"}};
    }
    const bool has_ffn = acc.has_site(sites::ffn_input) && acc.site(sites::ffn_input).count > 0;
    const EigenDecomposition* r_ffn = qb.r_ffn && has_ffn ? &acc.rotation(sites::ffn_input) : nullptr;
    const DenseMatrix* g_ffn = has_ffn ? &acc.site(sites::ffn_input).gram_acc : nullptr;
    add_mixed("wu", qb.wu, weights.wu, r_ffn, g_ffn);
    add_mixed("wg", qb.wg, weights.wg, r_ffn, g_ffn);
    if (!qb.wd.passthrough) {
        // Report against the scaled matrix actually quantized.
        DenseMatrix wd_eff = weights.wd;
        if (!qb.wd_scale.empty()) wd_eff = scale_rows(weights.wd, qb.wd_scale);
        const DenseMatrix* g_wd = acc.has_site(sites::wd_input) && acc.site(sites::wd_input).count > 0
                                      ? &acc.site(sites::wd_input).gram_acc
                                      : nullptr;
        // The gram applies to unscaled inputs; report weight-space error only
        // when scaling is active.
        layers["wd"] = layer_report(wd_eff, wd_eff, reconstruct(qb.wd.mixed),
                                    qb.wd_scale.empty() ? g_wd : nullptr);
        layers["wd"]["kind"] = "mixed";
        layers["wd"]["awq_scaled"] = !qb.wd_scale.empty();
    } else {
        layers["wd"] = {{"kind", "dense"}};
    }
    report["layers"] = std::move(layers);

    // Top-ranked channel magnitudes at the attention input, original space
    // against the rotated space with matching eigenvalues.
    if (has_mhsa) {
        auto rows_to_json = [](const MagnitudeStats& stats, bool rotated) {
            nlohmann::json rows = nlohmann::json::array();
            const std::size_t top = std::min<std::size_t>(10, stats.ranked.size());
            for (std::size_t i = 0; i < top; ++i) {
                nlohmann::json row;
                row["magnitude"] = stats.ranked[i].magnitude;
                row["channel"] = stats.ranked[i].channel;
                if (rotated) row["eigenvalue"] = stats.ranked[i].eigenvalue;
                rows.push_back(row);
            }
            return rows;
        };
        nlohmann::json stats;
        stats["original"] = rows_to_json(magnitude_stats(acc, sites::mhsa_input), false);
        const EigenDecomposition& rot = acc.rotation(sites::mhsa_input);
        stats["rotated"] = rows_to_json(magnitude_stats(acc, sites::mhsa_input, &rot), true);
        report["magnitude_stats"] = std::move(stats);
    }

    atomic_write_text(std::filesystem::path(out_dir) / "report.json", report.dump(2) + "\n");
    std::cout << "quantized model -> " << out_dir << "\n";
    return 0;
}

int cmd_infer(const std::string& model_dir, const std::string& input_path,
              const std::string& out_path) {
    const QuantizedBlock qb = load_quantized_model(model_dir);
    const TensorFile input = read_tensor_file(input_path);
    const auto sequences = sequences_from_tensor(input);
    TensorFile out;
    out.dtype = 1;
    out.dims = input.dims;
    for (const DenseMatrix& z : sequences) {
        const DenseMatrix y = quantized_block_forward(qb, z);
        out.values.insert(out.values.end(), y.data.begin(), y.data.end());
    }
    write_tensor_file(out_path, out);
    std::cout << "inferred " << sequences.size() << " sequences -> " << out_path << "\n";
    return 0;
}

int cmd_ablate(const std::string& which, const std::string& config_path,
               const std::string& out_path) {
    nlohmann::json config = config_path.empty() ? nlohmann::json::object() : load_json(config_path);
    if (!config.contains("seed")) config["seed"] = env_seed_or(1);
    nlohmann::json report;
    if (which == "salient") {
        report = run_ablation_salient(SalientAblationConfig::from_json(config)).report;
    } else if (which == "headwise") {
        report = run_ablation_headwise(HeadwiseAblationConfig::from_json(config)).report;
    } else {
        throw CLI::ValidationError("--which must be salient or headwise");
    }
    atomic_write_text(out_path, report.dump(2) + "\n");
    std::cout << "ablation \"" << which << "\" -> " << out_path << "\n";
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& out_path) {
    nlohmann::json config = config_path.empty() ? nlohmann::json::object() : load_json(config_path);
    if (!config.contains("seed")) config["seed"] = env_seed_or(1);
    const BenchResult r = run_bench(BenchConfig::from_json(config));
    atomic_write_text(out_path, r.report.dump(2) + "\n");
    std::cout << "dense decode speed " << r.decode_speed << " tok/s, quantized "
              << r.quant_decode_speed << " tok/s, throughput " << r.quant_throughput
              << " tok/s at batch " << r.batch_size << " -> " << out_path << "\n";
    if (r.timer_too_coarse) {
        std::cout << "note: timer resolution is coarse relative to step time\n";
    }
    return 0;
}

int cmd_inspect(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::is_directory(path)) {
        const QuantizedBlock qb = load_quantized_model(path);
        std::cout << "quantized model dir: d=" << qb.cfg.d << " heads=" << qb.cfg.heads
                  << " d_ff=" << qb.cfg.d_ff << " wo_mode=" << rotation_mode_name(qb.wo_mode)
                  << "\n";
        return 0;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open \"" + path + "\"");
    char magic[4] = {};
    in.read(magic, 4);
    if (!in) throw format_error("file too short for a magic header");
    const std::string m(magic, 4);
    if (m == "RQTF") {
        const TensorFile t = read_tensor_file(path);
        std::cout << "tensor file: dtype=" << (t.dtype == 0 ? "binary32" : "binary64") << " dims=[";
        for (std::size_t i = 0; i < t.dims.size(); ++i) {
            std::cout << (i ? "," : "") << t.dims[i];
        }
        double lo = 0.0, hi = 0.0;
        if (!t.values.empty()) {
            lo = hi = t.values[0];
            for (double v : t.values) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        std::cout << "] elements=" << t.element_count() << " min=" << lo << " max=" << hi << "\n";
    } else if (m == "RQQF") {
        const MixedPrecisionWeight w = read_quant_file(path);
        std::cout << "quant file: " << w.input_dim << "x" << w.output_dim << " bits=" << w.cfg.bits
                  << " group=" << w.cfg.group_size << " salient=" << w.salient_k
                  << " groups=" << w.groups.size() << "\n";
    } else if (m == "RQMF") {
        auto [cfg, weights] = read_model_file(path);
        std::cout << "model file: d=" << cfg.d << " heads=" << cfg.heads << " d_ff=" << cfg.d_ff
                  << " eps=" << cfg.eps << "\n";
    } else if (m == "RQAF") {
        const CalibrationAccumulator acc = read_accumulator(path);
        std::cout << "accumulator file: sites=";
        bool first = true;
        for (const auto& id : acc.site_ids()) {
            const auto& s = acc.site(id);
            std::cout << (first ? "" : ", ") << id << "(dim=" << s.dim << ",rows=" << s.count << ")";
            first = false;
        }
        std::cout << "\n";
    } else {
        throw format_error("unrecognised magic \"" + m + "\"");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rotation-based saliency-aware weight quantization toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic model and calibration data");
    std::string gen_model = "model.rqmf", gen_data = "data.rqtf";
    std::uint64_t gen_seed = env_seed_or(1);
    std::size_t gen_d = 256, gen_heads = 4, gen_dff = 704, gen_seqs = 6, gen_tokens = 64;
    gen->add_option("--model-out", gen_model);
    gen->add_option("--data-out", gen_data);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--d", gen_d);
    gen->add_option("--heads", gen_heads);
    gen->add_option("--d-ff", gen_dff);
    gen->add_option("--sequences", gen_seqs);
    gen->add_option("--tokens", gen_tokens);

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "record activation statistics");
    std::string cal_model, cal_data, cal_out;
    calibrate->add_option("--model", cal_model)->required();
    calibrate->add_option("--data", cal_data)->required();
    calibrate->add_option("--out", cal_out)->required();

    // quantize
    auto* quantize = app.add_subcommand("quantize", "quantize a model per plan");
    std::string q_model, q_acc, q_plan = "default", q_out;
    std::uint64_t q_seed = 0;
    bool q_seed_set = false;
    quantize->add_option("--model", q_model)->required();
    quantize->add_option("--acc", q_acc)->required();
    quantize->add_option("--plan", q_plan);
    quantize->add_option("--out", q_out)->required();
    quantize->add_option("--seed", q_seed)->each([&](const std::string&) { q_seed_set = true; });

    // infer
    auto* infer = app.add_subcommand("infer", "run the quantized block forward");
    std::string i_dir, i_input, i_out;
    infer->add_option("--model-dir", i_dir)->required();
    infer->add_option("--input", i_input)->required();
    infer->add_option("--out", i_out)->required();

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run a paired ablation study");
    std::string a_which, a_config, a_out;
    ablate->add_option("--which", a_which)->required()->check(CLI::IsMember({"salient", "headwise"}));
    ablate->add_option("--config", a_config);
    ablate->add_option("--out", a_out)->required();

    // bench
    auto* bench = app.add_subcommand("bench", "decode-loop micro-benchmark and storage table");
    std::string b_config, b_out;
    bench->add_option("--config", b_config);
    bench->add_option("--out", b_out)->required();

    // inspect
    auto* inspect = app.add_subcommand("inspect", "print header/shape/stats of an artifact");
    std::string s_path;
    inspect->add_option("path", s_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // usage errors collapse to 1, --help stays 0
    }

    try {
        if (gen->parsed()) {
            return cmd_gen(gen_model, gen_data, gen_seed, gen_d, gen_heads, gen_dff, gen_seqs,
                           gen_tokens);
        }
        if (calibrate->parsed()) return cmd_calibrate(cal_model, cal_data, cal_out);
        if (quantize->parsed()) {
            return cmd_quantize(q_model, q_acc, q_plan, q_out,
                                q_seed_set ? std::optional<std::uint64_t>(q_seed) : std::nullopt);
        }
        if (infer->parsed()) return cmd_infer(i_dir, i_input, i_out);
        if (ablate->parsed()) return cmd_ablate(a_which, a_config, a_out);
        if (bench->parsed()) return cmd_bench(b_config, b_out);
        if (inspect->parsed()) return cmd_inspect(s_path);
    } catch (const validation_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const convergence_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const CLI::Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
