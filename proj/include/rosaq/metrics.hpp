#pragma once

#include "rosaq/eigen.hpp"
#include "rosaq/matrix.hpp"
#include "rosaq/pipeline.hpp"

#include <optional>
#include <string>
#include <vector>

namespace rosaq {

// Relative Frobenius distance ||ref - cand||_F / ||ref||_F. Returns 0 only
// for bitwise-equal inputs; an all-zero reference against a nonzero
// candidate reports +infinity.
double reconstruction_error(const DenseMatrix& reference, const DenseMatrix& candidate);

// Spearman rank correlation between two equally-long value sequences
// (average ranks on ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct MagnitudeRow {
    double magnitude = 0.0;    // mean |activation| of the channel
    std::size_t channel = 0;   // channel index in its own space
    double eigenvalue = 0.0;   // rotated space only
};

// Channels ranked by mean absolute activation, in the original space or,
// when a rotation is supplied, in the rotated space with the matching
// eigenvalue per channel.
struct MagnitudeStats {
    std::vector<MagnitudeRow> ranked;

    double top_ratio() const; // magnitude of rank 1 over rank 2
};

MagnitudeStats magnitude_stats(const CalibrationAccumulator& acc, const std::string& site_id,
                               const EigenDecomposition* rotation = nullptr);

// Spearman correlation between rotated-space magnitude ranking and the
// eigenvalue ranking for a site.
double magnitude_eigenvalue_rank_correlation(const CalibrationAccumulator& acc,
                                             const std::string& site_id,
                                             const EigenDecomposition& rotation);

} // namespace rosaq
