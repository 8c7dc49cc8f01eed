#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rosaq/errors.hpp"
#include "rosaq/metrics.hpp"
#include "rosaq/model.hpp"
#include "rosaq/synthetic.hpp"

#include <cmath>

using namespace rosaq;

namespace {

BlockConfig small_cfg(std::size_t heads = 2) {
    BlockConfig cfg;
    cfg.d = 64;
    cfg.heads = heads;
    cfg.d_ff = 96;
    return cfg;
}

} // namespace

TEST_CASE("config validation") {
    BlockConfig bad;
    bad.d = 100; // head width 25, not a multiple of 32
    CHECK_THROWS_AS(bad.validate(), validation_error);
    CHECK_NOTHROW(small_cfg().validate());
}

TEST_CASE("softmax rows sum to one: all-ones values pass through attention") {
    Rng rng(1);
    const DenseMatrix q = random_matrix(rng, 12, 8);
    const DenseMatrix k = random_matrix(rng, 12, 8);
    DenseMatrix ones(12, 4);
    for (double& v : ones.data) v = 1.0;
    const DenseMatrix out = causal_attention(q, k, ones);
    for (double v : out.data) CHECK(std::abs(v - 1.0) <= 1e-12);
}

TEST_CASE("causality: future positions cannot influence the past") {
    const BlockConfig cfg = small_cfg();
    Rng rng(3);
    const BlockWeights w = random_block_weights(rng, cfg);
    DenseMatrix z = random_matrix(rng, 10, cfg.d);
    const DenseMatrix base = block_forward(cfg, w, z);

    DenseMatrix perturbed = z;
    for (std::size_t j = 0; j < cfg.d; ++j) perturbed(9, j) += 3.0;
    const DenseMatrix out = block_forward(cfg, w, perturbed);
    for (std::size_t t = 0; t < 9; ++t) {
        for (std::size_t j = 0; j < cfg.d; ++j) {
            CHECK(out(t, j) == base(t, j));
        }
    }
}

TEST_CASE("single token: attention reduces to the value path") {
    const BlockConfig cfg = small_cfg();
    Rng rng(5);
    const BlockWeights w = random_block_weights(rng, cfg);
    const DenseMatrix x = random_matrix(rng, 1, cfg.d);
    const DenseMatrix got = mhsa_forward(cfg, w, x);
    const DenseMatrix want = matmul(matmul(x, w.wv), w.wo);
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("zero weights give residual passthrough; zero input gives zero ffn") {
    const BlockConfig cfg = small_cfg();
    BlockWeights w;
    w.wq = DenseMatrix(cfg.d, cfg.d);
    w.wk = DenseMatrix(cfg.d, cfg.d);
    w.wv = DenseMatrix(cfg.d, cfg.d);
    w.wo = DenseMatrix(cfg.d, cfg.d);
    w.wu = DenseMatrix(cfg.d, cfg.d_ff);
    w.wg = DenseMatrix(cfg.d, cfg.d_ff);
    w.wd = DenseMatrix(cfg.d_ff, cfg.d);
    w.attn_gain.assign(cfg.d, 1.0);
    w.ffn_gain.assign(cfg.d, 1.0);

    Rng rng(7);
    const DenseMatrix z = random_matrix(rng, 6, cfg.d);
    const DenseMatrix out = block_forward(cfg, w, z);
    for (std::size_t i = 0; i < z.data.size(); ++i) CHECK(out.data[i] == z.data[i]);

    Rng rng2(8);
    const BlockWeights wr = random_block_weights(rng2, cfg);
    const DenseMatrix zero_out = ffn_forward(cfg, wr, DenseMatrix(4, cfg.d));
    for (double v : zero_out.data) CHECK(v == 0.0);
}

TEST_CASE("forward passes are deterministic") {
    const BlockConfig cfg = small_cfg(2);
    Rng rng(9);
    const BlockWeights w = random_block_weights(rng, cfg);
    const DenseMatrix z = random_matrix(rng, 16, cfg.d);
    const DenseMatrix a = block_forward(cfg, w, z);
    const DenseMatrix b = block_forward(cfg, w, z);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("calibration sites have the documented dimensions and counts") {
    const BlockConfig cfg = small_cfg();
    Rng rng(11);
    const BlockWeights w = random_block_weights(rng, cfg);
    CalibrationAccumulator acc;
    capture_calibration(cfg, w, {random_matrix(rng, 20, cfg.d)}, acc);

    CHECK(acc.site(sites::mhsa_input).dim == cfg.d);
    CHECK(acc.site(sites::ffn_input).dim == cfg.d);
    CHECK(acc.site(sites::wd_input).dim == cfg.d_ff);
    CHECK(acc.site(sites::head_concat).dim == cfg.d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        CHECK(acc.site(sites::head(h)).dim == cfg.head_dim());
        CHECK(acc.site(sites::head(h)).count == 20);
    }
    CHECK(acc.site(sites::mhsa_input).count == 20);
}

TEST_CASE("two calibration shards merge to the single-pass accumulator") {
    const BlockConfig cfg = small_cfg();
    Rng rng(13);
    const BlockWeights w = random_block_weights(rng, cfg);
    const DenseMatrix s1 = random_matrix(rng, 12, cfg.d);
    const DenseMatrix s2 = random_matrix(rng, 18, cfg.d);

    CalibrationAccumulator merged, single;
    CalibrationAccumulator shard2;
    capture_calibration(cfg, w, {s1}, merged);
    capture_calibration(cfg, w, {s2}, shard2);
    merged.merge(shard2);
    capture_calibration(cfg, w, {s1, s2}, single);

    for (const auto& id : single.site_ids()) {
        const auto& a = merged.site(id);
        const auto& b = single.site(id);
        REQUIRE(a.count == b.count);
        for (std::size_t i = 0; i < a.gram_acc.data.size(); ++i) {
            CHECK(std::abs(a.gram_acc.data[i] - b.gram_acc.data[i]) <= 1e-10);
        }
    }
}

TEST_CASE("identity-Q plan matches the dense path to 1e-10 (rotations active)") {
    for (std::size_t heads : {1ul, 2ul}) {
        const BlockConfig cfg = small_cfg(heads);
        Rng rng(15 + heads);
        const BlockWeights w = random_block_weights(rng, cfg);
        CalibrationAccumulator acc;
        capture_calibration(cfg, w, {random_matrix(rng, 48, cfg.d)}, acc);

        const QuantizedBlock qb =
            quantize_model(cfg, w, acc, LayerQuantPlan::identity_q_plan(cfg));
        const DenseMatrix z = random_matrix(rng, 10, cfg.d);
        const DenseMatrix want = block_forward(cfg, w, z);
        const DenseMatrix got = quantized_block_forward(qb, z);
        CHECK(reconstruction_error(want, got) < 1e-10);
    }
}

TEST_CASE("all-salient no-rotation plan is bit-identical to the dense path") {
    const BlockConfig cfg = small_cfg();
    Rng rng(19);
    const BlockWeights w = random_block_weights(rng, cfg);
    CalibrationAccumulator acc;
    capture_calibration(cfg, w, {random_matrix(rng, 32, cfg.d)}, acc);

    const QuantizedBlock qb =
        quantize_model(cfg, w, acc, LayerQuantPlan::all_salient_no_rotation(cfg));
    const DenseMatrix z = random_matrix(rng, 8, cfg.d);
    const DenseMatrix want = block_forward(cfg, w, z);
    const DenseMatrix got = quantized_block_forward(qb, z);
    for (std::size_t i = 0; i < want.data.size(); ++i) {
        CHECK(got.data[i] == want.data[i]);
    }
}

TEST_CASE("passthrough plan is bit-identical too") {
    const BlockConfig cfg = small_cfg();
    Rng rng(21);
    const BlockWeights w = random_block_weights(rng, cfg);
    CalibrationAccumulator acc; // untouched: passthrough needs no calibration
    const QuantizedBlock qb = quantize_model(cfg, w, acc, LayerQuantPlan::passthrough());
    const DenseMatrix z = random_matrix(rng, 5, cfg.d);
    const DenseMatrix want = block_forward(cfg, w, z);
    const DenseMatrix got = quantized_block_forward(qb, z);
    for (std::size_t i = 0; i < want.data.size(); ++i) {
        CHECK(got.data[i] == want.data[i]);
    }
}

TEST_CASE("head-wise path with identity Q matches dense MHSA for H in {1,2,4}") {
    for (std::size_t heads : {1ul, 2ul, 4ul}) {
        BlockConfig cfg;
        cfg.d = 128;
        cfg.heads = heads;
        cfg.d_ff = 128;
        Rng rng(23 + heads);
        const BlockWeights w = random_block_weights(rng, cfg);
        CalibrationAccumulator acc;
        capture_calibration(cfg, w, {random_matrix(rng, 64, cfg.d)}, acc);

        LayerQuantPlan plan = LayerQuantPlan::passthrough();
        plan[WeightClass::WO] = {RotationMode::HeadWisePCA, SelectionMode::Top, cfg.head_dim(), 4,
                                 128};
        const QuantizedBlock qb = quantize_model(cfg, w, acc, plan);

        const DenseMatrix x = random_matrix(rng, 12, cfg.d);
        const DenseMatrix want = mhsa_forward(cfg, w, x);
        const DenseMatrix got = quantized_mhsa_forward(qb, x);
        CHECK(reconstruction_error(want, got) < 1e-10);
    }
}

TEST_CASE("default INT4 plan keeps the block output within a few percent") {
    BlockConfig cfg; // the full toy dimensions
    Rng rng(29);
    AnisotropicEnsemble ens(31, cfg.d);
    const BlockWeights w = random_block_weights(rng, cfg);
    CalibrationAccumulator acc;
    capture_calibration(cfg, w, ens.sample_sequences(4, 64), acc);

    LayerQuantPlan plan = LayerQuantPlan::default_plan(cfg);
    const QuantizedBlock qb = quantize_model(cfg, w, acc, plan);
    const DenseMatrix z = ens.sample(48);
    const double err =
        reconstruction_error(block_forward(cfg, w, z), quantized_block_forward(qb, z));
    CHECK(err < 0.05);
    CHECK(err > 0.0);
}

TEST_CASE("plan/model mismatch errors name the weight class") {
    const BlockConfig cfg = small_cfg();
    Rng rng(33);
    const BlockWeights w = random_block_weights(rng, cfg);
    CalibrationAccumulator acc; // empty: rotations unavailable
    LayerQuantPlan plan = LayerQuantPlan::passthrough();
    plan[WeightClass::WU] = {RotationMode::PerLayerPCA, SelectionMode::Top, 32, 4, 128};
    try {
        quantize_model(cfg, w, acc, plan);
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("wu") != std::string::npos);
    }
}

TEST_CASE("awq grid search picks the error-minimising exponent") {
    const BlockConfig cfg = small_cfg();
    Rng rng(35);
    AnisotropicEnsemble ens(36, cfg.d);
    const BlockWeights w = random_block_weights(rng, cfg);
    CalibrationAccumulator acc;
    capture_calibration(cfg, w, ens.sample_sequences(3, 32), acc);

    auto error_with = [&](double alpha, bool grid) {
        LayerQuantPlan plan = LayerQuantPlan::passthrough();
        plan[WeightClass::WD] = {RotationMode::AwqScale, SelectionMode::Top, 0, 4, 128, alpha,
                                 grid};
        const QuantizedBlock qb = quantize_model(cfg, w, acc, plan);
        CHECK(!qb.wd_scale.empty());
        const DenseMatrix& g = acc.site(sites::wd_input).gram_acc;
        std::vector<double> inv(qb.wd_scale.size());
        for (std::size_t j = 0; j < inv.size(); ++j) inv[j] = 1.0 / qb.wd_scale[j];
        const DenseMatrix w_hat = scale_rows(reconstruct(qb.wd.mixed), inv);
        const DenseMatrix delta = subtract(w_hat, w.wd);
        const DenseMatrix gd = matmul(g, delta);
        double e = 0.0;
        for (std::size_t i = 0; i < delta.data.size(); ++i) e += delta.data[i] * gd.data[i];
        return e;
    };
    const double grid_err = error_with(0.5, true);
    for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        CHECK(grid_err <= error_with(alpha, false) + 1e-12);
    }
}

TEST_CASE("stack runner smoke: two blocks, fp vs bit-exact quantized path") {
    const BlockConfig cfg = small_cfg();
    Rng rng(37);
    std::vector<BlockWeights> blocks{random_block_weights(rng, cfg),
                                     random_block_weights(rng, cfg)};
    const DenseMatrix z = random_matrix(rng, 6, cfg.d);
    const DenseMatrix fp = stack_forward(cfg, blocks, z);
    CHECK(fp.rows == 6);

    std::vector<QuantizedBlock> qblocks;
    CalibrationAccumulator acc;
    for (const auto& w : blocks) {
        qblocks.push_back(quantize_model(cfg, w, acc, LayerQuantPlan::all_salient_no_rotation(cfg)));
    }
    const DenseMatrix q = quantized_stack_forward(qblocks, z);
    for (std::size_t i = 0; i < fp.data.size(); ++i) CHECK(q.data[i] == fp.data[i]);
}

TEST_CASE("plan json round-trip") {
    BlockConfig cfg;
    LayerQuantPlan plan = LayerQuantPlan::default_plan(cfg, 3, 64);
    plan.seed = 42;
    plan[WeightClass::WD].awq_grid = true;
    const LayerQuantPlan back = LayerQuantPlan::from_json(plan.to_json());
    CHECK(back.seed == 42);
    for (std::size_t i = 0; i < kWeightClassCount; ++i) {
        CHECK(back.entries[i].rotation == plan.entries[i].rotation);
        CHECK(back.entries[i].selection == plan.entries[i].selection);
        CHECK(back.entries[i].salient == plan.entries[i].salient);
        CHECK(back.entries[i].bits == plan.entries[i].bits);
        CHECK(back.entries[i].group_size == plan.entries[i].group_size);
    }
    CHECK(back[WeightClass::WD].awq_grid);
}
