#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rosaq/io.hpp"
#include "rosaq/metrics.hpp"
#include "rosaq/synthetic.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace rosaq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("rosaq_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

int run(const std::string& args) {
    const std::string cmd = std::string(ROSAQ_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

nlohmann::json load_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in);
    nlohmann::json j;
    in >> j;
    return j;
}

} // namespace

TEST_CASE("gen -> calibrate -> quantize -> infer pipeline") {
    TempDir tmp;
    const std::string model = (tmp.path / "model.rqmf").string();
    const std::string data = (tmp.path / "data.rqtf").string();
    const std::string acc = (tmp.path / "acc.rqaf").string();
    const std::string qdir = (tmp.path / "qmodel").string();
    const std::string out = (tmp.path / "out.rqtf").string();

    CHECK(run("gen --seed 5 --d 64 --heads 2 --d-ff 96 --sequences 3 --tokens 32 --model-out " +
              model + " --data-out " + data) == 0);
    CHECK(run("calibrate --model " + model + " --data " + data + " --out " + acc) == 0);
    CHECK(run("quantize --model " + model + " --acc " + acc + " --plan default --seed 5 --out " +
              qdir) == 0);
    CHECK(run("infer --model-dir " + qdir + " --input " + data + " --out " + out) == 0);

    // CLI result equals the in-process path over the same files.
    const QuantizedBlock qb = load_quantized_model(qdir);
    const TensorFile input = read_tensor_file(data);
    const TensorFile got = read_tensor_file(out);
    REQUIRE(got.dims == input.dims);
    const std::size_t rows = static_cast<std::size_t>(input.dims[1]);
    const std::size_t cols = static_cast<std::size_t>(input.dims[2]);
    std::size_t offset = 0;
    for (std::size_t s = 0; s < input.dims[0]; ++s) {
        std::vector<double> chunk(input.values.begin() + offset,
                                  input.values.begin() + offset + rows * cols);
        const DenseMatrix z(rows, cols, std::move(chunk));
        const DenseMatrix want = quantized_block_forward(qb, z);
        for (std::size_t i = 0; i < want.data.size(); ++i) {
            CHECK(std::abs(got.values[offset + i] - want.data[i]) <= 1e-12);
        }
        offset += rows * cols;
    }

    // Reported per-layer errors match the in-process API over the same
    // input files (the report is computed before the binary32 storage
    // boundary, so the comparison re-quantizes from the dense model).
    const nlohmann::json report = load_json(fs::path(qdir) / "report.json");
    auto [cfg, weights] = read_model_file(model);
    const CalibrationAccumulator acc_in = read_accumulator(acc);
    LayerQuantPlan plan = LayerQuantPlan::default_plan(cfg);
    plan.seed = 5;
    const QuantizedBlock qb_api = quantize_model(cfg, weights, acc_in, plan);
    const EigenDecomposition rot = acc_in.rotation(sites::mhsa_input);
    const DenseMatrix rotated = matmul(transpose(rot.eigenvectors), weights.wq);
    const double want_err = reconstruction_error(rotated, reconstruct(qb_api.wq.mixed));
    const double got_err = report.at("layers").at("wq").at("weight_space_error").get<double>();
    CHECK(std::abs(got_err - want_err) <= 1e-12);
}

TEST_CASE("inspect prints and round-trips exit codes") {
    TempDir tmp;
    const std::string model = (tmp.path / "m.rqmf").string();
    const std::string data = (tmp.path / "d.rqtf").string();
    CHECK(run("gen --seed 2 --d 64 --heads 2 --d-ff 96 --sequences 2 --tokens 16 --model-out " +
              model + " --data-out " + data) == 0);
    CHECK(run("inspect " + data) == 0);
    CHECK(run("inspect " + model) == 0);

    // Bad magic: exit code 2 with a format diagnostic.
    const fs::path bad = tmp.path / "bad.rqtf";
    std::ofstream(bad) << "XXXXGARBAGE";
    CHECK(run("inspect " + bad.string()) == 2);

    // Usage errors: exit code 1.
    CHECK(run("calibrate --model missing.rqmf") == 1);
    CHECK(run("nonsense") == 1);

    // Missing files: exit code 2.
    CHECK(run("calibrate --model missing.rqmf --data missing.rqtf --out x.rqaf") == 2);
}

TEST_CASE("ablate and bench write reproducible reports") {
    TempDir tmp;
    const fs::path cfg_path = tmp.path / "ablate.json";
    std::ofstream(cfg_path) << R"({"seed": 3, "trials": 4, "calib_sequences": 3,
        "calib_tokens": 32, "eval_tokens": 32,
        "block": {"d": 64, "heads": 2, "d_ff": 96}})";
    const std::string r1 = (tmp.path / "r1.json").string();
    const std::string r2 = (tmp.path / "r2.json").string();
    CHECK(run("ablate --which salient --config " + cfg_path.string() + " --out " + r1) == 0);
    CHECK(run("ablate --which salient --config " + cfg_path.string() + " --out " + r2) == 0);
    CHECK(load_json(r1) == load_json(r2)); // no wall-clock fields in ablation reports

    const std::string h1 = (tmp.path / "h1.json").string();
    CHECK(run("ablate --which headwise --config " + cfg_path.string() + " --out " + h1) == 0);
    CHECK(load_json(h1).contains("headwise_win_rate"));

    const fs::path bench_cfg = tmp.path / "bench.json";
    std::ofstream(bench_cfg) << R"({"seed": 3, "context_tokens": 4, "batch_size": 2,
        "block": {"d": 64, "heads": 2, "d_ff": 96}})";
    const std::string b1 = (tmp.path / "b1.json").string();
    const std::string b2 = (tmp.path / "b2.json").string();
    CHECK(run("bench --config " + bench_cfg.string() + " --out " + b1) == 0);
    CHECK(run("bench --config " + bench_cfg.string() + " --out " + b2) == 0);
    // Identical after stripping wall-clock dependent fields.
    auto strip = [](nlohmann::json j) {
        j.erase("dense");
        j.erase("quantized");
        j.erase("timer_resolution_seconds");
        j.erase("timer_too_coarse");
        j.erase("checksum");
        return j;
    };
    CHECK(strip(load_json(b1)) == strip(load_json(b2)));
    const auto bj = load_json(b1);
    CHECK(bj.at("storage").at("reference_single_matrix").at("quantized_block_compression")
              .get<double>() > 3.5);
}

TEST_CASE("ROSAQ_SEED env var sets the default seed") {
    TempDir tmp;
    const std::string model = (tmp.path / "m.rqmf").string();
    const std::string data = (tmp.path / "d.rqtf").string();
    CHECK(run("gen --seed 7 --d 64 --heads 2 --d-ff 96 --sequences 2 --tokens 16 --model-out " +
              model + " --data-out " + data) == 0);
    const std::string acc = (tmp.path / "a.rqaf").string();
    CHECK(run("calibrate --model " + model + " --data " + data + " --out " + acc) == 0);

    const std::string q_env = (tmp.path / "q_env").string();
    const std::string q_flag = (tmp.path / "q_flag").string();
    setenv("ROSAQ_SEED", "99", 1);
    CHECK(run("quantize --model " + model + " --acc " + acc + " --out " + q_env) == 0);
    unsetenv("ROSAQ_SEED");
    CHECK(run("quantize --model " + model + " --acc " + acc + " --seed 99 --out " + q_flag) == 0);
    CHECK(load_json(fs::path(q_env) / "report.json").at("seed").get<std::uint64_t>() == 99);
    CHECK(load_json(fs::path(q_env) / "report.json") == load_json(fs::path(q_flag) / "report.json"));
}
