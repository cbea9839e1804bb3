#pragma once

#include "clusterbd/types.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace clusterbd::linalg {

/// Relative rank tolerance applied to the largest singular value.
inline constexpr double kRankTolerance = 1e3 * std::numeric_limits<double>::epsilon();

/// Rotates every column so its first non-negligible entry is real and positive.
inline void normalize_column_phases(CMatrix& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double scale = m.col(j).cwiseAbs().maxCoeff();
        if (scale == 0.0) continue;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            if (std::abs(m(i, j)) > 1e-12 * scale) {
                m.col(j) *= std::conj(m(i, j)) / std::abs(m(i, j));
                break;
            }
        }
    }
}

inline int numerical_rank(const RVector& singular_values, double tol = kRankTolerance) {
    if (singular_values.size() == 0) return 0;
    const double cutoff = tol * singular_values.maxCoeff();
    int r = 0;
    for (Eigen::Index i = 0; i < singular_values.size(); ++i)
        if (singular_values(i) > cutoff) ++r;
    return r;
}

/// Orthonormal basis of the null space of m (columns). A matrix with no rows
/// yields the identity on its column space.
inline CMatrix null_space_basis(const CMatrix& m, double tol = kRankTolerance) {
    const Eigen::Index n = m.cols();
    if (m.rows() == 0) return CMatrix::Identity(n, n);
    Eigen::JacobiSVD<CMatrix> svd(m, Eigen::ComputeFullV);
    const int rank = numerical_rank(svd.singularValues(), tol);
    if (rank >= n) throw SchedulingError("null space is empty: too many constraints for the available antennas");
    CMatrix basis = svd.matrixV().rightCols(n - rank);
    return basis;
}

/// Hermitian inverse square root R^{-1/2}; throws if R is not positive definite.
inline CMatrix hermitian_inverse_sqrt(const CMatrix& r) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(r);
    if (es.info() != Eigen::Success) throw NotPositiveDefinite("eigendecomposition failed", std::nan(""));
    const RVector& ev = es.eigenvalues();
    if (!(ev.minCoeff() > 0.0))
        throw NotPositiveDefinite("covariance is not positive definite (smallest eigenvalue " +
                                      std::to_string(ev.minCoeff()) + ")",
                                  ev.minCoeff());
    const RVector inv_sqrt = ev.array().rsqrt();
    return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().adjoint();
}

/// log2 det of a Hermitian positive definite matrix.
inline double log2_det_hpd(const CMatrix& a) {
    Eigen::LLT<CMatrix> llt(a);
    if (llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(a, Eigen::EigenvaluesOnly);
        double s = 0.0;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) s += std::log2(std::max(es.eigenvalues()(i), 1e-300));
        return s;
    }
    const CMatrix& l = llt.matrixLLT();
    double s = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) s += 2.0 * std::log2(l(i, i).real());
    return s;
}

} // namespace clusterbd::linalg
