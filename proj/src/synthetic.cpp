#include "rosaq/synthetic.hpp"

#include "rosaq/errors.hpp"

#include <cmath>

namespace rosaq {

DenseMatrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    DenseMatrix m(rows, cols);
    for (double& v : m.data) v = dist(rng);
    return m;
}

DenseMatrix random_orthogonal(Rng& rng, std::size_t n) {
    for (int attempt = 0; attempt < 4; ++attempt) {
        DenseMatrix g = random_matrix(rng, n, n);
        // Modified Gram-Schmidt on columns.
        bool ok = true;
        for (std::size_t j = 0; j < n && ok; ++j) {
            for (std::size_t p = 0; p < j; ++p) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += g(i, p) * g(i, j);
                for (std::size_t i = 0; i < n; ++i) g(i, j) -= dot * g(i, p);
            }
            double norm = 0.0;
            for (std::size_t i = 0; i < n; ++i) norm += g(i, j) * g(i, j);
            norm = std::sqrt(norm);
            if (norm < 1e-10) {
                ok = false;
                break;
            }
            for (std::size_t i = 0; i < n; ++i) g(i, j) /= norm;
        }
        if (ok) return g;
    }
    throw convergence_error("random_orthogonal: degenerate draw");
}

std::vector<double> power_law_spectrum(std::size_t d, double exponent, double mean_variance) {
    std::vector<double> s(d);
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        s[i] = std::pow(static_cast<double>(i + 1), -exponent);
        total += s[i];
    }
    const double norm = mean_variance * static_cast<double>(d) / total;
    for (double& v : s) v *= norm;
    return s;
}

DenseMatrix anisotropic_gaussian(Rng& rng, std::size_t rows, const std::vector<double>& spectrum,
                                 const DenseMatrix& basis) {
    const std::size_t d = spectrum.size();
    if (basis.rows != d || basis.cols != d) {
        throw validation_error("anisotropic_gaussian: basis shape mismatch");
    }
    std::normal_distribution<double> dist(0.0, 1.0);
    DenseMatrix g(rows, d);
    for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
            g(t, i) = dist(rng) * std::sqrt(spectrum[i]);
        }
    }
    // x = g * basis^T so that cov(x) = basis diag(spectrum) basis^T.
    return matmul(g, transpose(basis));
}

AnisotropicEnsemble::AnisotropicEnsemble(std::uint64_t seed, std::size_t d, double exponent)
    : rng(seed) {
    spectrum = power_law_spectrum(d, exponent);
    basis = random_orthogonal(rng, d);
}

DenseMatrix AnisotropicEnsemble::sample(std::size_t rows) {
    return anisotropic_gaussian(rng, rows, spectrum, basis);
}

std::vector<DenseMatrix> AnisotropicEnsemble::sample_sequences(std::size_t count,
                                                               std::size_t rows) {
    std::vector<DenseMatrix> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample(rows));
    return out;
}

BlockWeights random_block_weights(Rng& rng, const BlockConfig& cfg,
                                  const BlockWeightOptions& opt) {
    const double sd = opt.weight_scale > 0.0 ? opt.weight_scale
                                             : 1.0 / std::sqrt(static_cast<double>(cfg.d));
    const double sd_ff = opt.weight_scale > 0.0 ? opt.weight_scale
                                                : 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));
    BlockWeights w;
    w.wq = random_matrix(rng, cfg.d, cfg.d, sd);
    w.wk = random_matrix(rng, cfg.d, cfg.d, sd);
    w.wv = random_matrix(rng, cfg.d, cfg.d, sd);
    w.wo = random_matrix(rng, cfg.d, cfg.d, sd);
    w.wu = random_matrix(rng, cfg.d, cfg.d_ff, sd);
    w.wg = random_matrix(rng, cfg.d, cfg.d_ff, sd);
    w.wd = random_matrix(rng, cfg.d_ff, cfg.d, sd_ff);
    w.attn_gain.assign(cfg.d, 1.0);
    w.ffn_gain.assign(cfg.d, 1.0);

    const std::size_t dh = cfg.head_dim();
    if (opt.distinct_head_values || opt.identical_head_values) {
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const double exponent =
                opt.identical_head_values ? 1.5 : 1.0 + 0.5 * static_cast<double>(h);
            // Distinct heads: geometric magnitude ladder on the value path,
            // compensated on the output path so head contributions match.
            const double head_scale =
                opt.distinct_head_values ? std::pow(2.0, -static_cast<double>(h)) : 1.0;
            const std::vector<double> spec = power_law_spectrum(dh, exponent, 1.0);
            const DenseMatrix basis = random_orthogonal(rng, dh);
            DenseMatrix block = column_block(w.wv, h * dh, (h + 1) * dh);
            std::vector<double> sqrt_spec(dh);
            for (std::size_t i = 0; i < dh; ++i) {
                sqrt_spec[i] = std::sqrt(spec[i]) * head_scale;
            }
            block = matmul(block, basis);
            block = scale_columns(block, sqrt_spec);
            block = matmul(block, transpose(basis));
            for (std::size_t r = 0; r < cfg.d; ++r) {
                for (std::size_t c = 0; c < dh; ++c) {
                    w.wv(r, h * dh + c) = block(r, c);
                }
            }
            for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) {
                for (std::size_t c = 0; c < cfg.d; ++c) {
                    w.wo(r, c) /= head_scale;
                }
            }
        }
    }
    return w;
}

} // namespace rosaq
