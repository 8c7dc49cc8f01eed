#pragma once

#include "rosaq/matrix.hpp"

#include <vector>

namespace rosaq {

// Orthonormal eigenvectors (column j = j-th eigenvector) with eigenvalues
// sorted descending. Sign convention: the largest-magnitude entry of each
// eigenvector is non-negative, so repeated runs are bit-identical.
struct EigenDecomposition {
    DenseMatrix eigenvectors; // d x d
    std::vector<double> eigenvalues; // length d, descending

    std::size_t dim() const { return eigenvalues.size(); }
};

// Symmetric eigendecomposition by cyclic Jacobi with row-major sweep order
// and threshold-free full sweeps. Serial by design: the rotation sequence is
// part of the determinism contract.
//
// Postconditions: ||A R - R diag(lambda)||_max <= tol * (1 + ||A||_max),
// ||R^T R - I||_max <= tol, eigenvalues descending.
EigenDecomposition eig_sym(const DenseMatrix& a, double tol = 1e-10, int max_sweeps = 100);

// eig_sym specialised to Gram matrices: additionally checks positive
// semi-definiteness (within rounding slack). The eigenvector matrix is the
// rotation applied to activations; eigenvalue order puts salient channels
// in the leading columns.
EigenDecomposition pca_rotation(const DenseMatrix& gram_matrix, double tol = 1e-10);

} // namespace rosaq
