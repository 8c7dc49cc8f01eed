#include "rosaq/errors.hpp"
#include "rosaq/model.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace rosaq {

namespace {

std::uint64_t class_seed(std::uint64_t plan_seed, WeightClass wc, std::size_t head) {
    return plan_seed * 1000003ull + static_cast<std::uint64_t>(static_cast<int>(wc)) * 131ull +
           head;
}

// Quantization error of a candidate for W_D measured through the site Gram:
// || X (W_hat - W) ||_F^2 = tr((W_hat - W)^T G (W_hat - W)).
double gram_weighted_error(const DenseMatrix& gram_acc, const DenseMatrix& w,
                           const DenseMatrix& w_hat) {
    const DenseMatrix delta = subtract(w_hat, w);
    const DenseMatrix gd = matmul(gram_acc, delta);
    double acc = 0.0;
    for (std::size_t i = 0; i < delta.data.size(); ++i) {
        acc += delta.data[i] * gd.data[i];
    }
    return acc;
}

QuantizedLinear make_mixed(const DenseMatrix& w, const EigenDecomposition* rot,
                           const PlanEntry& e, std::size_t salient,
                           std::uint64_t seed) {
    QuantizedLinear lin;
    lin.passthrough = false;
    lin.rotated_input = rot != nullptr;
    SalientSelection sel{e.selection, salient, seed};
    lin.mixed = transform_weight(w, rot, sel, QuantConfig(e.bits, e.group_size));
    return lin;
}

} // namespace

QuantizedBlock quantize_model(const BlockConfig& cfg, const BlockWeights& w,
                              const CalibrationAccumulator& acc, const LayerQuantPlan& plan) {
    w.validate(cfg);
    plan.validate(cfg);
    const std::size_t dh = cfg.head_dim();

    QuantizedBlock qb;
    qb.cfg = cfg;
    qb.plan = plan;
    qb.attn_gain = w.attn_gain;
    qb.ffn_gain = w.ffn_gain;
    qb.wo_mode = plan[WeightClass::WO].rotation;

    auto site_rotation = [&](const std::string& id, WeightClass wc) -> const EigenDecomposition& {
        if (!acc.has_site(id) || acc.site(id).count == 0) {
            throw validation_error(std::string("quantize_model: no calibration recorded at site \"") +
                                   id + "\" needed by " + weight_class_name(wc));
        }
        return acc.rotation(id);
    };

    // Head-wise W_O rotations, absorbed into W_V below.
    std::vector<EigenDecomposition> head_rots;
    if (qb.wo_mode == RotationMode::HeadWisePCA) {
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            head_rots.push_back(site_rotation(sites::head(h), WeightClass::WO));
        }
    }

    // W_V with head rotations folded into its output blocks: the attended
    // value stream then arrives already rotated, H_h R_h, at zero cost.
    DenseMatrix wv_eff = w.wv;
    if (qb.wo_mode == RotationMode::HeadWisePCA) {
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const DenseMatrix block = column_block(w.wv, h * dh, (h + 1) * dh);
            const DenseMatrix rotated = matmul(block, head_rots[h].eigenvectors);
            for (std::size_t r = 0; r < cfg.d; ++r) {
                for (std::size_t c = 0; c < dh; ++c) {
                    wv_eff(r, h * dh + c) = rotated(r, c);
                }
            }
        }
    }

    auto build_attention_input_layer = [&](WeightClass wc, const DenseMatrix& mat) {
        const PlanEntry& e = plan[wc];
        QuantizedLinear lin;
        switch (e.rotation) {
            case RotationMode::Passthrough:
                lin.fp = mat;
                break;
            case RotationMode::None:
                lin = make_mixed(mat, nullptr, e, e.salient, class_seed(plan.seed, wc, 0));
                break;
            case RotationMode::PerLayerPCA: {
                const EigenDecomposition& rot = site_rotation(sites::mhsa_input, wc);
                if (!qb.r_mhsa) qb.r_mhsa = rot.eigenvectors;
                lin = make_mixed(mat, &rot, e, e.salient, class_seed(plan.seed, wc, 0));
                break;
            }
            default:
                throw validation_error(std::string("quantize_model: unsupported rotation mode for ") +
                                       weight_class_name(wc));
        }
        return lin;
    };

    qb.wq = build_attention_input_layer(WeightClass::WQ, w.wq);
    qb.wk = build_attention_input_layer(WeightClass::WK, w.wk);
    qb.wv = build_attention_input_layer(WeightClass::WV, wv_eff);

    // W_O.
    {
        const PlanEntry& e = plan[WeightClass::WO];
        switch (e.rotation) {
            case RotationMode::HeadWisePCA: {
                qb.wo_heads.resize(cfg.heads);
                for (std::size_t h = 0; h < cfg.heads; ++h) {
                    const DenseMatrix who = row_block(w.wo, h * dh, (h + 1) * dh);
                    qb.wo_heads[h] = make_mixed(who, &head_rots[h], e, e.salient,
                                                class_seed(plan.seed, WeightClass::WO, h));
                    qb.wo_heads[h].rotated_input = true; // input arrives pre-rotated via W_V
                }
                break;
            }
            case RotationMode::GlobalPCA: {
                const EigenDecomposition& rot = site_rotation(sites::head_concat, WeightClass::WO);
                qb.r_wo_global = rot.eigenvectors;
                qb.wo_single = make_mixed(w.wo, &rot, e, e.salient * cfg.heads,
                                          class_seed(plan.seed, WeightClass::WO, 0));
                break;
            }
            case RotationMode::None:
                // Unrotated W_O is one matrix over the concatenated heads;
                // salient counts the total budget here.
                qb.wo_single = make_mixed(w.wo, nullptr, e, e.salient,
                                          class_seed(plan.seed, WeightClass::WO, 0));
                break;
            case RotationMode::Passthrough:
                qb.wo_single.fp = w.wo;
                break;
            default:
                throw validation_error("quantize_model: unsupported rotation mode for wo");
        }
    }

    auto build_ffn_input_layer = [&](WeightClass wc, const DenseMatrix& mat) {
        const PlanEntry& e = plan[wc];
        QuantizedLinear lin;
        switch (e.rotation) {
            case RotationMode::Passthrough:
                lin.fp = mat;
                break;
            case RotationMode::None:
                lin = make_mixed(mat, nullptr, e, e.salient, class_seed(plan.seed, wc, 0));
                break;
            case RotationMode::PerLayerPCA: {
                const EigenDecomposition& rot = site_rotation(sites::ffn_input, wc);
                if (!qb.r_ffn) qb.r_ffn = rot.eigenvectors;
                lin = make_mixed(mat, &rot, e, e.salient, class_seed(plan.seed, wc, 0));
                break;
            }
            default:
                throw validation_error(std::string("quantize_model: unsupported rotation mode for ") +
                                       weight_class_name(wc));
        }
        return lin;
    };

    qb.wu = build_ffn_input_layer(WeightClass::WU, w.wu);
    qb.wg = build_ffn_input_layer(WeightClass::WG, w.wg);

    // W_D: the rotation cannot be absorbed around the gating nonlinearity,
    // so protect salient channels by per-channel scaling instead.
    {
        const PlanEntry& e = plan[WeightClass::WD];
        switch (e.rotation) {
            case RotationMode::Passthrough:
                qb.wd.fp = w.wd;
                break;
            case RotationMode::None:
                qb.wd = make_mixed(w.wd, nullptr, e, e.salient,
                                   class_seed(plan.seed, WeightClass::WD, 0));
                break;
            case RotationMode::AwqScale: {
                if (!acc.has_site(sites::wd_input) || acc.site(sites::wd_input).count == 0) {
                    throw validation_error(
                        "quantize_model: no calibration recorded at site \"wd_input\" needed by wd");
                }
                const auto& site = acc.site(sites::wd_input);
                const std::vector<double> mean_abs = site.mean_abs();
                std::vector<double> alphas{e.awq_alpha};
                if (e.awq_grid) alphas = {0.0, 0.25, 0.5, 0.75, 1.0};

                double best_err = std::numeric_limits<double>::infinity();
                for (double alpha : alphas) {
                    const ScalingVector s = awq_scales_from_magnitudes(mean_abs, alpha);
                    const DenseMatrix scaled = scale_rows(w.wd, s.per_channel_scale);
                    QuantizedLinear cand = make_mixed(scaled, nullptr, e, e.salient,
                                                      class_seed(plan.seed, WeightClass::WD, 0));
                    if (alphas.size() == 1) {
                        qb.wd = std::move(cand);
                        qb.wd_scale = s.per_channel_scale;
                        break;
                    }
                    DenseMatrix w_hat = reconstruct(cand.mixed);
                    std::vector<double> inv(s.per_channel_scale.size());
                    for (std::size_t j = 0; j < inv.size(); ++j) inv[j] = 1.0 / s.per_channel_scale[j];
                    w_hat = scale_rows(w_hat, inv);
                    const double err = gram_weighted_error(site.gram_acc, w.wd, w_hat);
                    if (err < best_err) {
                        best_err = err;
                        qb.wd = std::move(cand);
                        qb.wd_scale = s.per_channel_scale;
                    }
                }
                break;
            }
            default:
                throw validation_error("quantize_model: unsupported rotation mode for wd");
        }
    }

    return qb;
}

} // namespace rosaq
