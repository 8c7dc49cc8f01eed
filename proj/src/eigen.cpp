#include "rosaq/eigen.hpp"

#include "rosaq/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rosaq {

namespace {

// One Jacobi rotation zeroing a(p,q). Works on rows p and q of the full
// symmetric storage (contiguous), then mirrors them into the columns.
// vt holds the transposed eigenvector accumulator so its update is two
// contiguous rows as well.
void jacobi_rotate(DenseMatrix& a, DenseMatrix& vt, std::size_t p, std::size_t q) {
    const std::size_t n = a.rows;
    double* ap = a.data.data() + p * n;
    double* aq = a.data.data() + q * n;
    const double apq = ap[q];
    if (apq == 0.0) return;
    const double app = ap[p];
    const double aqq = aq[q];

    const double tau = (aqq - app) / (2.0 * apq);
    // Smaller-magnitude root of t^2 + 2*tau*t - 1 = 0 for stability.
    double t;
    if (tau >= 0.0) {
        t = 1.0 / (tau + std::sqrt(1.0 + tau * tau));
    } else {
        t = -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
    }
    const double c = 1.0 / std::sqrt(1.0 + t * t);
    const double s = t * c;

    for (std::size_t j = 0; j < n; ++j) {
        if (j == p || j == q) continue;
        const double ajp = ap[j];
        const double ajq = aq[j];
        ap[j] = c * ajp - s * ajq;
        aq[j] = s * ajp + c * ajq;
    }
    ap[p] = app - t * apq;
    aq[q] = aqq + t * apq;
    ap[q] = 0.0;
    aq[p] = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == p || j == q) continue;
        a(j, p) = ap[j];
        a(j, q) = aq[j];
    }

    double* vp = vt.data.data() + p * n;
    double* vq = vt.data.data() + q * n;
    for (std::size_t j = 0; j < n; ++j) {
        const double vjp = vp[j];
        const double vjq = vq[j];
        vp[j] = c * vjp - s * vjq;
        vq[j] = s * vjp + c * vjq;
    }
}

double max_offdiag(const DenseMatrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = i + 1; j < a.cols; ++j) {
            m = std::max(m, std::abs(a(i, j)));
        }
    }
    return m;
}

// Flip each column so its largest-magnitude entry is non-negative; first
// occurrence wins on magnitude ties.
void apply_sign_convention(DenseMatrix& v) {
    for (std::size_t j = 0; j < v.cols; ++j) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < v.rows; ++i) {
            const double m = std::abs(v(i, j));
            if (m > best) {
                best = m;
                arg = i;
            }
        }
        if (v(arg, j) < 0.0) {
            for (std::size_t i = 0; i < v.rows; ++i) v(i, j) = -v(i, j);
        }
    }
}

} // namespace

EigenDecomposition eig_sym(const DenseMatrix& a, double tol, int max_sweeps) {
    if (a.rows != a.cols || a.empty()) {
        throw validation_error("eig_sym: matrix must be square and non-empty");
    }
    if (!(tol > 0.0)) {
        throw validation_error("eig_sym: tol must be positive");
    }
    const double scale = 1.0 + max_abs(a);
    if (max_asymmetry(a) > 1e-9 * scale) {
        throw validation_error("eig_sym: input not symmetric");
    }

    const std::size_t n = a.rows;
    DenseMatrix work = a;
    // Enforce exact symmetry of the working copy before sweeping.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (work(i, j) + work(j, i));
            work(i, j) = v;
            work(j, i) = v;
        }
    }
    DenseMatrix vecs_t = identity(n); // rows accumulate the eigenvectors

    // Residual ~ sqrt(n) * max offdiag, so converge a bit below tol; the
    // floor keeps the target reachable in double precision.
    const double eps = std::numeric_limits<double>::epsilon();
    const double target =
        scale * std::max(tol / (2.0 * std::sqrt(static_cast<double>(n))), 8.0 * eps);

    bool converged = (n == 1) || max_offdiag(work) <= target;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                jacobi_rotate(work, vecs_t, p, q);
            }
        }
        converged = max_offdiag(work) <= target;
    }
    if (!converged) {
        throw convergence_error("eig_sym: no convergence within sweep limit");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return work(x, x) > work(y, y);
    });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = DenseMatrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = work(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) {
            out.eigenvectors(i, j) = vecs_t(order[j], i);
        }
    }
    apply_sign_convention(out.eigenvectors);
    return out;
}

EigenDecomposition pca_rotation(const DenseMatrix& gram_matrix, double tol) {
    EigenDecomposition d = eig_sym(gram_matrix, tol);
    const double lead = d.eigenvalues.empty() ? 0.0 : std::abs(d.eigenvalues.front());
    if (!d.eigenvalues.empty() && d.eigenvalues.back() < -1e-8 * (1.0 + lead)) {
        throw validation_error("pca_rotation: input is not positive semi-definite");
    }
    return d;
}

} // namespace rosaq
