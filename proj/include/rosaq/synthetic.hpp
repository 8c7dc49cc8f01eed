#pragma once

#include "rosaq/matrix.hpp"
#include "rosaq/model.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace rosaq {

using Rng = std::mt19937_64;

DenseMatrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 1.0);

// Random orthogonal matrix: modified Gram-Schmidt over a Gaussian draw,
// retried on (vanishingly unlikely) rank deficiency.
DenseMatrix random_orthogonal(Rng& rng, std::size_t n);

// Power-law eigenvalue spectrum lambda_i proportional to (i+1)^-exponent,
// normalised so the mean per-channel variance is `mean_variance`.
std::vector<double> power_law_spectrum(std::size_t d, double exponent = 2.0,
                                       double mean_variance = 1.0);

// Gaussian rows with covariance basis * diag(spectrum) * basis^T.
DenseMatrix anisotropic_gaussian(Rng& rng, std::size_t rows, const std::vector<double>& spectrum,
                                 const DenseMatrix& basis);

// The default calibration ensemble: power-law spectrum under a seeded random
// orthogonal basis. Returns `count` sequences of `rows` tokens each, all
// sharing one covariance per seed.
struct AnisotropicEnsemble {
    std::vector<double> spectrum;
    DenseMatrix basis;
    Rng rng;

    AnisotropicEnsemble(std::uint64_t seed, std::size_t d, double exponent = 2.0);
    DenseMatrix sample(std::size_t rows);
    std::vector<DenseMatrix> sample_sequences(std::size_t count, std::size_t rows);
};

struct BlockWeightOptions {
    double weight_scale = 0.0; // 0 means 1/sqrt(fan_in)
    // Shape per-head attentive representations. "Distinct" heads get their
    // own spectral decay and their own magnitude, with the output rows
    // scaled inversely so every head contributes comparably (the usual
    // trained-network compensation). "Identical" heads share one decay and
    // differ only by an independent random orientation.
    bool distinct_head_values = false;
    bool identical_head_values = false;
};

BlockWeights random_block_weights(Rng& rng, const BlockConfig& cfg,
                                  const BlockWeightOptions& opt = {});

} // namespace rosaq
