#include "rosaq/model.hpp"

#include "rosaq/errors.hpp"

#include <cmath>
#include <cstdint>
#include <limits>

namespace rosaq {

namespace sites {

std::string head(std::size_t h) { return "head_" + std::to_string(h); }

std::vector<std::string> heads(std::size_t count) {
    std::vector<std::string> ids;
    ids.reserve(count);
    for (std::size_t h = 0; h < count; ++h) ids.push_back(head(h));
    return ids;
}

} // namespace sites

void BlockWeights::validate(const BlockConfig& cfg) const {
    cfg.validate();
    auto expect = [](const DenseMatrix& m, std::size_t r, std::size_t c, const char* name) {
        if (m.rows != r || m.cols != c) {
            throw validation_error(std::string("block weights: bad shape for ") + name);
        }
    };
    expect(wq, cfg.d, cfg.d, "wq");
    expect(wk, cfg.d, cfg.d, "wk");
    expect(wv, cfg.d, cfg.d, "wv");
    expect(wo, cfg.d, cfg.d, "wo");
    expect(wu, cfg.d, cfg.d_ff, "wu");
    expect(wg, cfg.d, cfg.d_ff, "wg");
    expect(wd, cfg.d_ff, cfg.d, "wd");
    if (attn_gain.size() != cfg.d || ffn_gain.size() != cfg.d) {
        throw validation_error("block weights: norm gain length mismatch");
    }
}

DenseMatrix rms_norm(const DenseMatrix& z, std::span<const double> gain, double eps) {
    if (gain.size() != z.cols) throw validation_error("rms_norm: gain length mismatch");
    DenseMatrix out(z.rows, z.cols);
    for (std::size_t t = 0; t < z.rows; ++t) {
        double ms = 0.0;
        for (std::size_t j = 0; j < z.cols; ++j) {
            const double v = z(t, j);
            ms += v * v;
        }
        const double inv = 1.0 / std::sqrt(ms / static_cast<double>(z.cols) + eps);
        for (std::size_t j = 0; j < z.cols; ++j) {
            out(t, j) = z(t, j) * inv * gain[j];
        }
    }
    return out;
}

DenseMatrix silu(const DenseMatrix& x) {
    DenseMatrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double v = x.data[i];
        out.data[i] = v / (1.0 + std::exp(-v));
    }
    return out;
}

DenseMatrix causal_attention(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& v) {
    if (q.rows != k.rows || q.rows != v.rows || q.cols != k.cols) {
        throw validation_error("attention: shape mismatch");
    }
    const std::size_t t_rows = q.rows;
    const std::size_t dh = q.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    DenseMatrix out(t_rows, v.cols);
#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t tt = 0; tt < static_cast<std::int64_t>(t_rows); ++tt) {
        const std::size_t t = static_cast<std::size_t>(tt);
        std::vector<double> logits(t + 1);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u <= t; ++u) {
            double dot = 0.0;
            for (std::size_t c = 0; c < dh; ++c) dot += q(t, c) * k(u, c);
            logits[u] = dot * scale;
            max_logit = std::max(max_logit, logits[u]);
        }
        double denom = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
            logits[u] = std::exp(logits[u] - max_logit);
            denom += logits[u];
        }
        const double inv = 1.0 / denom;
        for (std::size_t u = 0; u <= t; ++u) {
            const double p = logits[u] * inv;
            for (std::size_t c = 0; c < v.cols; ++c) {
                out(t, c) += p * v(u, c);
            }
        }
    }
    return out;
}

namespace {

// Per-head attention over full-width q/k/v (T x d); writes each head's
// attentive representation into the matching column block of the result.
DenseMatrix attend_heads(const BlockConfig& cfg, const DenseMatrix& q, const DenseMatrix& k,
                         const DenseMatrix& v) {
    const std::size_t dh = cfg.head_dim();
    DenseMatrix concat(q.rows, cfg.d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const DenseMatrix qh = column_block(q, h * dh, (h + 1) * dh);
        const DenseMatrix kh = column_block(k, h * dh, (h + 1) * dh);
        const DenseMatrix vh = column_block(v, h * dh, (h + 1) * dh);
        const DenseMatrix ah = causal_attention(qh, kh, vh);
        for (std::size_t t = 0; t < concat.rows; ++t) {
            for (std::size_t c = 0; c < dh; ++c) {
                concat(t, h * dh + c) = ah(t, c);
            }
        }
    }
    return concat;
}

} // namespace

DenseMatrix mhsa_forward(const BlockConfig& cfg, const BlockWeights& w, const DenseMatrix& x) {
    if (x.cols != cfg.d) throw validation_error("mhsa_forward: input width mismatch");
    const DenseMatrix q = matmul(x, w.wq);
    const DenseMatrix k = matmul(x, w.wk);
    const DenseMatrix v = matmul(x, w.wv);
    const DenseMatrix concat = attend_heads(cfg, q, k, v);
    return matmul(concat, w.wo);
}

DenseMatrix ffn_forward(const BlockConfig& cfg, const BlockWeights& w, const DenseMatrix& x) {
    if (x.cols != cfg.d) throw validation_error("ffn_forward: input width mismatch");
    const DenseMatrix gate = silu(matmul(x, w.wg));
    const DenseMatrix up = matmul(x, w.wu);
    DenseMatrix hidden(x.rows, cfg.d_ff);
    for (std::size_t i = 0; i < hidden.data.size(); ++i) {
        hidden.data[i] = gate.data[i] * up.data[i];
    }
    return matmul(hidden, w.wd);
}

DenseMatrix block_forward(const BlockConfig& cfg, const BlockWeights& w, const DenseMatrix& z) {
    const DenseMatrix attn = mhsa_forward(cfg, w, rms_norm(z, w.attn_gain, cfg.eps));
    const DenseMatrix z2 = add(z, attn);
    const DenseMatrix ffn = ffn_forward(cfg, w, rms_norm(z2, w.ffn_gain, cfg.eps));
    return add(z2, ffn);
}

void capture_calibration(const BlockConfig& cfg, const BlockWeights& w,
                         const std::vector<DenseMatrix>& sequences, CalibrationAccumulator& acc) {
    if (sequences.empty()) throw validation_error("capture_calibration: no sequences");
    w.validate(cfg);
    const std::size_t dh = cfg.head_dim();
    if (!acc.has_site(sites::mhsa_input)) {
        acc.register_site(sites::mhsa_input, cfg.d);
        for (std::size_t h = 0; h < cfg.heads; ++h) acc.register_site(sites::head(h), dh);
        acc.register_site(sites::head_concat, cfg.d);
        acc.register_site(sites::ffn_input, cfg.d);
        acc.register_site(sites::wd_input, cfg.d_ff);
    }

    for (const DenseMatrix& z : sequences) {
        const DenseMatrix x1 = rms_norm(z, w.attn_gain, cfg.eps);
        acc.accumulate(sites::mhsa_input, x1);

        const DenseMatrix q = matmul(x1, w.wq);
        const DenseMatrix k = matmul(x1, w.wk);
        const DenseMatrix v = matmul(x1, w.wv);
        const DenseMatrix concat = attend_heads(cfg, q, k, v);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            acc.accumulate(sites::head(h), column_block(concat, h * dh, (h + 1) * dh));
        }
        acc.accumulate(sites::head_concat, concat);

        const DenseMatrix z2 = add(z, matmul(concat, w.wo));
        const DenseMatrix x2 = rms_norm(z2, w.ffn_gain, cfg.eps);
        acc.accumulate(sites::ffn_input, x2);

        const DenseMatrix gate = silu(matmul(x2, w.wg));
        const DenseMatrix up = matmul(x2, w.wu);
        DenseMatrix hidden(x2.rows, cfg.d_ff);
        for (std::size_t i = 0; i < hidden.data.size(); ++i) {
            hidden.data[i] = gate.data[i] * up.data[i];
        }
        acc.accumulate(sites::wd_input, hidden);
    }
}

DenseMatrix QuantizedLinear::forward(const DenseMatrix& x_plain,
                                     const DenseMatrix& x_rotated) const {
    const DenseMatrix& x = rotated_input ? x_rotated : x_plain;
    if (passthrough) return matmul(x, fp);
    return mixed_matmul(x, mixed);
}

DenseMatrix quantized_mhsa_forward(const QuantizedBlock& qb, const DenseMatrix& x) {
    const std::size_t dh = qb.cfg.head_dim();
    DenseMatrix x_rot;
    if (qb.r_mhsa) x_rot = matmul(x, *qb.r_mhsa);

    const DenseMatrix q = qb.wq.forward(x, x_rot);
    const DenseMatrix k = qb.wk.forward(x, x_rot);
    const DenseMatrix v = qb.wv.forward(x, x_rot); // head-wise rotations already absorbed
    const DenseMatrix concat = attend_heads(qb.cfg, q, k, v);

    switch (qb.wo_mode) {
        case RotationMode::HeadWisePCA: {
            // Sum over heads of (H_h R_h) Q(R_h^T W_h^O); the rotated H_h is
            // what the absorbed W_V already produced.
            DenseMatrix y(x.rows, qb.cfg.d);
            for (std::size_t h = 0; h < qb.cfg.heads; ++h) {
                const DenseMatrix hh = column_block(concat, h * dh, (h + 1) * dh);
                const DenseMatrix part = qb.wo_heads[h].forward(hh, hh);
                for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += part.data[i];
            }
            return y;
        }
        case RotationMode::GlobalPCA: {
            const DenseMatrix rot = matmul(concat, *qb.r_wo_global);
            return qb.wo_single.forward(concat, rot);
        }
        default:
            return qb.wo_single.forward(concat, concat);
    }
}

DenseMatrix quantized_ffn_forward(const QuantizedBlock& qb, const DenseMatrix& x) {
    DenseMatrix x_rot;
    if (qb.r_ffn) x_rot = matmul(x, *qb.r_ffn);
    const DenseMatrix gate = silu(qb.wg.forward(x, x_rot));
    const DenseMatrix up = qb.wu.forward(x, x_rot);
    DenseMatrix hidden(x.rows, qb.cfg.d_ff);
    for (std::size_t i = 0; i < hidden.data.size(); ++i) {
        hidden.data[i] = gate.data[i] * up.data[i];
    }
    if (!qb.wd_scale.empty()) {
        for (std::size_t t = 0; t < hidden.rows; ++t) {
            for (std::size_t j = 0; j < hidden.cols; ++j) {
                hidden(t, j) /= qb.wd_scale[j];
            }
        }
    }
    return qb.wd.forward(hidden, hidden);
}

DenseMatrix quantized_block_forward(const QuantizedBlock& qb, const DenseMatrix& z) {
    const DenseMatrix attn = quantized_mhsa_forward(qb, rms_norm(z, qb.attn_gain, qb.cfg.eps));
    const DenseMatrix z2 = add(z, attn);
    const DenseMatrix ffn = quantized_ffn_forward(qb, rms_norm(z2, qb.ffn_gain, qb.cfg.eps));
    return add(z2, ffn);
}

DenseMatrix stack_forward(const BlockConfig& cfg, const std::vector<BlockWeights>& blocks,
                          const DenseMatrix& z) {
    DenseMatrix h = z;
    for (const BlockWeights& w : blocks) h = block_forward(cfg, w, h);
    return h;
}

DenseMatrix quantized_stack_forward(const std::vector<QuantizedBlock>& blocks,
                                    const DenseMatrix& z) {
    DenseMatrix h = z;
    for (const QuantizedBlock& qb : blocks) h = quantized_block_forward(qb, h);
    return h;
}

} // namespace rosaq
