#include "rosaq/metrics.hpp"

#include "rosaq/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rosaq {

double reconstruction_error(const DenseMatrix& reference, const DenseMatrix& candidate) {
    if (!reference.same_shape(candidate)) {
        throw validation_error("reconstruction_error: shape mismatch");
    }
    double diff2 = 0.0;
    double ref2 = 0.0;
    for (std::size_t i = 0; i < reference.data.size(); ++i) {
        const double d = reference.data[i] - candidate.data[i];
        diff2 += d * d;
        ref2 += reference.data[i] * reference.data[i];
    }
    if (ref2 == 0.0) {
        return diff2 == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return std::sqrt(diff2) / std::sqrt(ref2);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw validation_error("spearman: length mismatch or empty input");
    }
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

double MagnitudeStats::top_ratio() const {
    if (ranked.size() < 2 || ranked[1].magnitude == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return ranked[0].magnitude / ranked[1].magnitude;
}

MagnitudeStats magnitude_stats(const CalibrationAccumulator& acc, const std::string& site_id,
                               const EigenDecomposition* rotation) {
    const auto& site = acc.site(site_id);
    if (site.count == 0) throw validation_error("magnitude_stats: empty site");

    std::vector<double> mean_abs;
    std::vector<double> eigenvalues;
    if (rotation == nullptr) {
        mean_abs = site.mean_abs();
    } else {
        if (rotation->dim() != site.dim) {
            throw validation_error("magnitude_stats: rotation dimension mismatch");
        }
        // Rotated-space magnitudes are measured on the retained rows, not
        // inferred from eigenvalues.
        const DenseMatrix rotated = matmul(site.raw_matrix(), rotation->eigenvectors);
        mean_abs.assign(site.dim, 0.0);
        for (std::size_t t = 0; t < rotated.rows; ++t) {
            for (std::size_t j = 0; j < site.dim; ++j) {
                mean_abs[j] += std::abs(rotated(t, j));
            }
        }
        for (double& m : mean_abs) m /= static_cast<double>(rotated.rows);
        eigenvalues = rotation->eigenvalues;
    }

    std::vector<std::size_t> order(site.dim);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return mean_abs[a] > mean_abs[b]; });

    MagnitudeStats stats;
    stats.ranked.reserve(site.dim);
    for (std::size_t idx : order) {
        MagnitudeRow row;
        row.magnitude = mean_abs[idx];
        row.channel = idx;
        row.eigenvalue = eigenvalues.empty() ? 0.0 : eigenvalues[idx];
        stats.ranked.push_back(row);
    }
    return stats;
}

double magnitude_eigenvalue_rank_correlation(const CalibrationAccumulator& acc,
                                             const std::string& site_id,
                                             const EigenDecomposition& rotation) {
    const MagnitudeStats stats = magnitude_stats(acc, site_id, &rotation);
    std::vector<double> mags(stats.ranked.size());
    std::vector<double> eigs(stats.ranked.size());
    for (const MagnitudeRow& row : stats.ranked) {
        mags[row.channel] = row.magnitude;
        eigs[row.channel] = row.eigenvalue;
    }
    return spearman(mags, eigs);
}

} // namespace rosaq
