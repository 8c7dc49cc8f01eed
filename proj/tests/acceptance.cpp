// Acceptance suite: one check per release criterion, each printed as a
// single pass/fail line with its runtime. Exit code is the failure count.

#include "rosaq/ablate.hpp"
#include "rosaq/bench.hpp"
#include "rosaq/io.hpp"
#include "rosaq/metrics.hpp"
#include "rosaq/model.hpp"
#include "rosaq/reference.hpp"
#include "rosaq/synthetic.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace rosaq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
    void note(const std::string& what) {
        detail += (detail.empty() ? "" : "; ") + what;
    }
};

double rel_frobenius(const DenseMatrix& want, const DenseMatrix& got) {
    return reconstruction_error(want, got);
}

// --- 1. rotational invariance -------------------------------------------

Outcome criterion_rotational_invariance() {
    Outcome out;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(100 + trial);
        const std::size_t d = 2 + rng() % 511; // up to 512
        const std::size_t dp = 1 + rng() % 128;
        const DenseMatrix x = random_matrix(rng, 64, d);
        const DenseMatrix w = random_matrix(rng, d, dp);
        const DenseMatrix r = random_orthogonal(rng, d);
        const DenseMatrix want = matmul(x, w);
        const DenseMatrix got = matmul(matmul(x, r), matmul(transpose(r), w));
        worst = std::max(worst, rel_frobenius(want, got));
    }
    out.require(worst < 1e-10, "worst relative error " + std::to_string(worst));
    std::ostringstream s;
    s << "worst rel err " << worst;
    out.note(s.str());
    return out;
}

// --- 2. eigensolver soundness ---------------------------------------------

Outcome criterion_eigensolver() {
    Outcome out;
    double worst_resid = 0.0, worst_orth = 0.0, worst_trace = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(200 + trial);
        const std::size_t n = 2 + rng() % 255; // up to 256
        const DenseMatrix g = random_matrix(rng, n + 8, n);
        const DenseMatrix a = gram(g);
        const EigenDecomposition d = eig_sym(a, 1e-10);
        const double scale = 1.0 + max_abs(a);

        const DenseMatrix ar = matmul(a, d.eigenvectors);
        double resid = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                resid = std::max(resid,
                                 std::abs(ar(i, j) - d.eigenvectors(i, j) * d.eigenvalues[j]));
            }
        }
        worst_resid = std::max(worst_resid, resid / scale);

        const DenseMatrix rtr = matmul(transpose(d.eigenvectors), d.eigenvectors);
        worst_orth = std::max(worst_orth, max_abs(subtract(rtr, identity(n))));

        for (std::size_t j = 0; j + 1 < n; ++j) {
            out.require(d.eigenvalues[j] >= d.eigenvalues[j + 1], "eigenvalues not descending");
        }
        double sum = 0.0;
        for (double v : d.eigenvalues) sum += v;
        worst_trace = std::max(worst_trace, std::abs(sum - trace(a)) / std::abs(trace(a)));
    }
    out.require(worst_resid <= 1e-10, "residual " + std::to_string(worst_resid));
    out.require(worst_orth <= 1e-10, "orthonormality " + std::to_string(worst_orth));
    out.require(worst_trace <= 1e-8, "trace drift " + std::to_string(worst_trace));
    std::ostringstream s;
    s << "resid " << worst_resid << ", orth " << worst_orth << ", trace " << worst_trace;
    out.note(s.str());
    return out;
}

// --- 3. quantizer oracle equivalence ---------------------------------------

Outcome criterion_quantizer_oracle() {
    Outcome out;
    Rng rng(300);
    std::normal_distribution<double> dist(0.0, 3.0);
    std::size_t checked = 0;
    double worst = 0.0;
    for (int bits : {3, 4}) {
        const QuantConfig cfg(bits, 128);
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<double> v(128);
            for (double& x : v) x = dist(rng);
            const QuantizedGroup g = quantize_group(v, cfg);
            const ref::RtnResult oracle = ref::rtn(v, bits);
            const auto codes = unpack_codes(g.codes, bits, g.count);
            out.require(codes == oracle.codes, "codes differ from oracle");
            const auto back = dequantize_group(g);
            for (std::size_t i = 0; i < v.size(); ++i) {
                worst = std::max(worst, std::abs(back[i] - oracle.dequantized[i]));
            }
            out.require(pack_codes(codes, bits) == g.codes, "pack/unpack round trip failed");
            ++checked;
            if (!out.pass) break;
        }
    }
    out.require(worst <= 1e-12, "dequantized drift " + std::to_string(worst));
    out.note(std::to_string(checked) + " groups, worst dequant drift " + std::to_string(worst));
    return out;
}

// --- 4. head-wise identity-Q MHSA exactness --------------------------------

Outcome criterion_headwise_identity() {
    Outcome out;
    double worst = 0.0;
    for (std::size_t heads : {1ul, 2ul, 4ul}) {
        BlockConfig cfg;
        cfg.d = 128;
        cfg.heads = heads;
        cfg.d_ff = 128;
        Rng rng(400 + heads);
        const BlockWeights w = random_block_weights(rng, cfg);
        CalibrationAccumulator acc;
        capture_calibration(cfg, w, {random_matrix(rng, 64, cfg.d)}, acc);

        LayerQuantPlan plan = LayerQuantPlan::passthrough();
        plan[WeightClass::WO] = {RotationMode::HeadWisePCA, SelectionMode::Top, cfg.head_dim(), 4,
                                 128};
        const QuantizedBlock qb = quantize_model(cfg, w, acc, plan);
        const DenseMatrix x = random_matrix(rng, 16, cfg.d);
        worst = std::max(worst, rel_frobenius(mhsa_forward(cfg, w, x),
                                              quantized_mhsa_forward(qb, x)));
    }
    out.require(worst < 1e-10, "relative error " + std::to_string(worst));
    std::ostringstream s;
    s << "worst rel err " << worst;
    out.note(s.str());
    return out;
}

// --- 5. scaling invariance ----------------------------------------------

Outcome criterion_scaling_invariance() {
    Outcome out;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(500 + trial);
        const std::size_t d = 8 + rng() % 249;
        const std::size_t dp = 1 + rng() % 64;
        const DenseMatrix x = random_matrix(rng, 48, d);
        const DenseMatrix w = random_matrix(rng, d, dp);
        std::uniform_real_distribution<double> mag(-3.0, 3.0);
        std::vector<double> scale(d), inv(d);
        for (std::size_t j = 0; j < d; ++j) {
            scale[j] = std::pow(10.0, mag(rng));
            inv[j] = 1.0 / scale[j];
        }
        const DenseMatrix want = matmul(x, w);
        const DenseMatrix got = matmul(scale_columns(x, inv), scale_rows(w, scale));
        worst = std::max(worst, rel_frobenius(want, got));
    }
    out.require(worst < 1e-10, "worst relative error " + std::to_string(worst));
    std::ostringstream s;
    s << "worst rel err " << worst;
    out.note(s.str());
    return out;
}

// --- 6. salient-selection ordering ------------------------------------------

Outcome criterion_salient_ordering() {
    Outcome out;
    SalientAblationConfig cfg; // toy block, INT4 g128, K=32, 100 trials
    cfg.seed = 600;
    cfg.trials = 100;
    const SalientAblationResult r = run_ablation_salient(cfg);

    const double top = r.mean(SelectionMode::Top);
    const double bottom = r.mean(SelectionMode::Bottom);
    const double rnd = r.mean(SelectionMode::Random);
    const double tb = r.mean(SelectionMode::TopAndBottom);
    out.require(top < rnd && rnd < bottom, "mean ordering violated");
    out.require(r.win_rate(SelectionMode::Top, SelectionMode::Bottom) >= 0.95,
                "top-vs-bottom win rate " +
                    std::to_string(r.win_rate(SelectionMode::Top, SelectionMode::Bottom)));
    out.require(r.win_rate(SelectionMode::Top, SelectionMode::Random) >= 0.80,
                "top-vs-random win rate " +
                    std::to_string(r.win_rate(SelectionMode::Top, SelectionMode::Random)));
    out.require(std::abs(tb - top) / top <= 0.10,
                "top&bottom gap " + std::to_string(std::abs(tb - top) / top));
    std::ostringstream s;
    s << "means top " << top << " / random " << rnd << " / bottom " << bottom << " / t&b " << tb
      << "; win t-vs-b " << r.win_rate(SelectionMode::Top, SelectionMode::Bottom) << ", t-vs-r "
      << r.win_rate(SelectionMode::Top, SelectionMode::Random);
    out.note(s.str());
    return out;
}

// --- 7. head-wise vs global PCA ----------------------------------------------

Outcome criterion_headwise_vs_global() {
    Outcome out;
    HeadwiseAblationConfig cfg; // distinct per-head covariances
    cfg.seed = 700;
    cfg.trials = 100;
    const HeadwiseAblationResult r = run_ablation_headwise(cfg);
    out.require(r.headwise_win_rate() >= 0.90,
                "headwise win rate " + std::to_string(r.headwise_win_rate()));
    std::ostringstream s;
    s << "win rate " << r.headwise_win_rate() << ", means " << r.mean_headwise() << " vs "
      << r.mean_global();
    out.note(s.str());
    return out;
}

// --- 8. magnitude dominance ---------------------------------------------------

Outcome criterion_magnitude_dominance() {
    Outcome out;
    const std::size_t d = 64;
    int dominated = 0;
    double rho_sum = 0.0, rho_min = 1.0;
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
        CalibrationAccumulator acc;
        acc.register_site("s", d);
        AnisotropicEnsemble ens(800 + trial, d);
        acc.accumulate("s", ens.sample(2048));
        const MagnitudeStats orig = magnitude_stats(acc, "s");
        const EigenDecomposition rot = acc.rotation("s");
        const MagnitudeStats rotated = magnitude_stats(acc, "s", &rot);
        if (rotated.top_ratio() > orig.top_ratio()) ++dominated;
        const double rho = magnitude_eigenvalue_rank_correlation(acc, "s", rot);
        rho_sum += rho;
        rho_min = std::min(rho_min, rho);
    }
    out.require(dominated >= 95, "dominance in " + std::to_string(dominated) + "/100 seeds");
    out.require(rho_sum / trials > 0.9, "mean spearman " + std::to_string(rho_sum / trials));
    std::ostringstream s;
    s << "dominance " << dominated << "/100, spearman mean " << rho_sum / trials << " min "
      << rho_min;
    out.note(s.str());
    return out;
}

// --- 9. storage compression ---------------------------------------------------

Outcome criterion_storage() {
    Outcome out;
    const StorageBreakdown single = storage_breakdown(4096, 4096, 128, 4, 128);
    const double f_single = single.quantized_block_compression();
    out.require(f_single >= 3.5 && f_single <= 4.0,
                "single-matrix factor " + std::to_string(f_single));
    const StorageBreakdown plan = plan_storage_breakdown(4096, 11008, 32, 4, 128);
    const double f_plan = plan.quantized_block_compression();
    out.require(f_plan >= 3.5 && f_plan <= 4.0, "plan factor " + std::to_string(f_plan));
    std::ostringstream s;
    s << "single matrix " << f_single << "x, default plan " << f_plan
      << "x (quantized channels, 16-bit baseline)";
    out.note(s.str());
    return out;
}

// --- 10. end-to-end degeneracies ------------------------------------------------

Outcome criterion_degeneracies() {
    Outcome out;
    BlockConfig cfg;
    cfg.d = 128;
    cfg.heads = 2;
    cfg.d_ff = 160;
    Rng rng(1000);
    AnisotropicEnsemble ens(1001, cfg.d);
    const BlockWeights w = random_block_weights(rng, cfg);
    CalibrationAccumulator acc;
    capture_calibration(cfg, w, ens.sample_sequences(3, 48), acc);
    const DenseMatrix z = ens.sample(16);
    const DenseMatrix want = block_forward(cfg, w, z);

    // (a) all-salient, no rotation: bit-identical to the dense path.
    {
        const QuantizedBlock qb =
            quantize_model(cfg, w, acc, LayerQuantPlan::all_salient_no_rotation(cfg));
        const DenseMatrix got = quantized_block_forward(qb, z);
        bool exact = want.data.size() == got.data.size();
        for (std::size_t i = 0; exact && i < want.data.size(); ++i) {
            exact = want.data[i] == got.data[i];
        }
        out.require(exact, "all-salient plan not bit-identical");
    }

    // (b) K=0, identity rotation: every layer equals plain per-group RTN.
    {
        const LayerQuantPlan plan = LayerQuantPlan::rtn_only(cfg, 4, 128);
        const QuantizedBlock qb = quantize_model(cfg, w, acc, plan);
        auto check_rtn = [&](const MixedPrecisionWeight& m, const DenseMatrix& raw,
                             const char* name) {
            const QuantConfig qcfg(4, 128);
            const std::size_t ng = m.group_count();
            for (std::size_t g = 0; g < ng; ++g) {
                const std::size_t begin = g * qcfg.group_size;
                const std::size_t channels = m.group_channels(g);
                for (std::size_t c = 0; c < raw.cols; ++c) {
                    std::vector<double> slice(channels);
                    for (std::size_t i = 0; i < channels; ++i) slice[i] = raw(begin + i, c);
                    const QuantizedGroup direct = quantize_group(slice, qcfg);
                    const QuantizedGroup& stored = m.groups[g * raw.cols + c];
                    if (direct.codes != stored.codes || direct.scale != stored.scale ||
                        direct.offset != stored.offset) {
                        out.require(false, std::string(name) + " differs from plain RTN");
                        return;
                    }
                }
            }
        };
        check_rtn(qb.wq.mixed, w.wq, "wq");
        check_rtn(qb.wu.mixed, w.wu, "wu");
        check_rtn(qb.wo_single.mixed, w.wo, "wo");
        check_rtn(qb.wd.mixed, w.wd, "wd");
    }

    // (c) zero-weight block: residual passthrough.
    {
        BlockWeights zero;
        zero.wq = DenseMatrix(cfg.d, cfg.d);
        zero.wk = DenseMatrix(cfg.d, cfg.d);
        zero.wv = DenseMatrix(cfg.d, cfg.d);
        zero.wo = DenseMatrix(cfg.d, cfg.d);
        zero.wu = DenseMatrix(cfg.d, cfg.d_ff);
        zero.wg = DenseMatrix(cfg.d, cfg.d_ff);
        zero.wd = DenseMatrix(cfg.d_ff, cfg.d);
        zero.attn_gain.assign(cfg.d, 1.0);
        zero.ffn_gain.assign(cfg.d, 1.0);
        const DenseMatrix got = block_forward(cfg, zero, z);
        bool exact = true;
        for (std::size_t i = 0; i < z.data.size(); ++i) exact = exact && got.data[i] == z.data[i];
        out.require(exact, "zero-weight block is not a passthrough");
    }
    return out;
}

// --- 11. CLI/API equivalence and file round-trips --------------------------------

Outcome criterion_cli() {
    Outcome out;
    const fs::path tmp =
        fs::temp_directory_path() / ("rosaq_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(tmp);
    const std::string cli = ROSAQ_CLI_PATH;
    auto run = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
        return WEXITSTATUS(std::system(cmd.c_str()));
    };

    // Build inputs through the API.
    BlockConfig cfg;
    cfg.d = 64;
    cfg.heads = 2;
    cfg.d_ff = 96;
    Rng rng(1100);
    AnisotropicEnsemble ens(1101, cfg.d);
    const BlockWeights weights = random_block_weights(rng, cfg);
    write_model_file(tmp / "model.rqmf", cfg, weights);
    TensorFile data;
    data.dtype = 1;
    data.dims = {2, 24, cfg.d};
    for (int s = 0; s < 2; ++s) {
        const DenseMatrix m = ens.sample(24);
        data.values.insert(data.values.end(), m.data.begin(), m.data.end());
    }
    write_tensor_file(tmp / "data.rqtf", data);

    out.require(run("calibrate --model " + (tmp / "model.rqmf").string() + " --data " +
                    (tmp / "data.rqtf").string() + " --out " + (tmp / "acc.rqaf").string()) == 0,
                "calibrate failed");
    out.require(run("quantize --model " + (tmp / "model.rqmf").string() + " --acc " +
                    (tmp / "acc.rqaf").string() + " --plan default --seed 9 --out " +
                    (tmp / "q").string()) == 0,
                "quantize failed");
    out.require(run("infer --model-dir " + (tmp / "q").string() + " --input " +
                    (tmp / "data.rqtf").string() + " --out " + (tmp / "out.rqtf").string()) == 0,
                "infer failed");

    if (out.pass) {
        // API over the same files must agree to 1e-12.
        CalibrationAccumulator acc = read_accumulator(tmp / "acc.rqaf");
        LayerQuantPlan plan = LayerQuantPlan::default_plan(cfg);
        plan.seed = 9;
        const QuantizedBlock qb_api = quantize_model(cfg, weights, acc, plan);
        // Compare against the CLI-written artifacts after their storage
        // round-trip (binary32 salient is the format's storage precision).
        const QuantizedBlock qb_cli = load_quantized_model(tmp / "q");
        const TensorFile got = read_tensor_file(tmp / "out.rqtf");
        std::size_t offset = 0;
        double worst = 0.0;
        for (int s = 0; s < 2; ++s) {
            std::vector<double> chunk(data.values.begin() + offset,
                                      data.values.begin() + offset + 24 * cfg.d);
            const DenseMatrix z(24, cfg.d, std::move(chunk));
            const DenseMatrix want = quantized_block_forward(qb_cli, z);
            for (std::size_t i = 0; i < want.data.size(); ++i) {
                worst = std::max(worst, std::abs(got.values[offset + i] - want.data[i]));
            }
            offset += want.data.size();
        }
        out.require(worst <= 1e-12, "CLI infer deviates from API by " + std::to_string(worst));

        // In-memory quantization agrees with the CLI pipeline up to the
        // documented binary32 storage boundary.
        const DenseMatrix api_recon = reconstruct(qb_api.wq.mixed);
        const DenseMatrix cli_recon = reconstruct(qb_cli.wq.mixed);
        double drift = 0.0;
        for (std::size_t i = 0; i < api_recon.data.size(); ++i) {
            const double f32 = static_cast<double>(static_cast<float>(api_recon.data[i]));
            drift = std::max(drift, std::abs(f32 - cli_recon.data[i]));
        }
        out.require(drift <= 1e-6, "stored weights drift from API quantization");
    }

    // Ablate subcommand reproduces the in-process report exactly.
    {
        std::ofstream cfgf(tmp / "ab.json");
        cfgf << R"({"seed": 4, "trials": 3, "calib_sequences": 3, "calib_tokens": 32,)"
             << R"( "eval_tokens": 32, "block": {"d": 64, "heads": 2, "d_ff": 96}})";
        cfgf.close();
        out.require(run("ablate --which salient --config " + (tmp / "ab.json").string() +
                        " --out " + (tmp / "ab_out.json").string()) == 0,
                    "ablate failed");
        std::ifstream cli_report(tmp / "ab_out.json");
        nlohmann::json cli_json;
        cli_report >> cli_json;
        std::ifstream cfg_in(tmp / "ab.json");
        nlohmann::json cfg_json;
        cfg_in >> cfg_json;
        const nlohmann::json api_json =
            run_ablation_salient(SalientAblationConfig::from_json(cfg_json)).report;
        out.require(cli_json == api_json, "ablate CLI report differs from API");
    }

    // File round-trips: write(read(file)) is bitwise identical.
    {
        auto slurp = [](const fs::path& p) {
            std::ifstream in(p, std::ios::binary);
            return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
        };
        const TensorFile t = read_tensor_file(tmp / "data.rqtf");
        write_tensor_file(tmp / "data2.rqtf", t);
        out.require(slurp(tmp / "data.rqtf") == slurp(tmp / "data2.rqtf"),
                    "tensor file round-trip not bitwise");

        fs::path qfile;
        for (const auto& entry : fs::directory_iterator(tmp / "q")) {
            if (entry.path().extension() == ".rqqf") {
                qfile = entry.path();
                break;
            }
        }
        out.require(!qfile.empty(), "no quant file written");
        if (!qfile.empty()) {
            const MixedPrecisionWeight m = read_quant_file(qfile);
            write_quant_file(tmp / "q2.rqqf", m);
            out.require(slurp(qfile) == slurp(tmp / "q2.rqqf"),
                        "quant file round-trip not bitwise");
        }
    }

    std::error_code ec;
    fs::remove_all(tmp, ec);
    return out;
}

struct Criterion {
    int id;
    const char* label;
    double budget_seconds;
    std::function<Outcome()> fn;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "rotational invariance (100 triples, d <= 512, rel < 1e-10)", 30.0,
         criterion_rotational_invariance},
        {2, "eigensolver soundness (100 PSD up to 256x256)", 120.0, criterion_eigensolver},
        {3, "quantizer oracle equivalence (1000 groups, bits 3/4)", 30.0,
         criterion_quantizer_oracle},
        {4, "head-wise identity-Q MHSA exactness (H in {1,2,4})", 30.0,
         criterion_headwise_identity},
        {5, "scaling invariance (100 random positive diagonals)", 30.0,
         criterion_scaling_invariance},
        {6, "salient-selection ordering (100 seeds, toy block)", 300.0,
         criterion_salient_ordering},
        {7, "head-wise vs global PCA (100 seeds, distinct heads)", 300.0,
         criterion_headwise_vs_global},
        {8, "magnitude dominance and eigenvalue rank agreement", 120.0,
         criterion_magnitude_dominance},
        {9, "storage compression in [3.5x, 4.0x] vs 16-bit", 1.0, criterion_storage},
        {10, "end-to-end degeneracies (all-salient / RTN / zero weights)", 30.0,
         criterion_degeneracies},
        {11, "CLI/API equivalence and bitwise file round-trips", 60.0, criterion_cli},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.fn();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double elapsed = std::chrono::duration<double>(
                                   std::chrono::steady_clock::now() - start)
                                   .count();
        if (elapsed > c.budget_seconds) {
            out.pass = false;
            out.detail += (out.detail.empty() ? "" : "; ") + std::string("over time budget");
        }
        std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", out.pass ? "PASS" : "FAIL", c.id,
                    c.label, elapsed, out.detail.empty() ? "" : " -- ", out.detail.c_str());
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    if (failures == 0) {
        std::printf("all %zu criteria passed\n", criteria.size());
    } else {
        std::printf("%d criteria FAILED\n", failures);
    }
    return failures;
}
