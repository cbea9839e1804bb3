#pragma once

// Multi-cell block diagonalization over a cluster "super BTS", including the
// helper-cluster variant that also nulls toward protected edge users of a
// neighbouring cluster.

#include "clusterbd/linalg.hpp"
#include "clusterbd/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace clusterbd::precoding {

/// Users a B-BTS cluster can serve simultaneously: floor(B N_t / N_r).
inline int max_users(int cluster_size, int n_t, int n_r) {
    if (cluster_size < 1 || n_t < 1 || n_r < 1) throw std::invalid_argument("max_users: arguments must be positive");
    return cluster_size * n_t / n_r;
}

struct HelperCapacity {
    int users = 0;
    bool saturated = false; // the protected edge users consume every degree of freedom
};

/// Users a helper cluster can serve while protecting `edge_users` users of its neighbours.
inline HelperCapacity max_users_helper(int cluster_size, int n_t, int n_r, int edge_users) {
    if (edge_users < 0) throw std::invalid_argument("max_users_helper: edge user count must be non-negative");
    const int k = max_users(cluster_size, n_t, n_r) - edge_users;
    if (k <= 0) return {0, true};
    return {k, false};
}

/// Stack of every other scheduled user's whitened channel (ascending index,
/// skipping k) followed by the protected edge users' cross-cluster channels.
inline CMatrix interference_matrix(std::span<const CMatrix> scheduled, int k, std::span<const CMatrix> protected_channels) {
    if (scheduled.empty()) throw std::invalid_argument("interference_matrix: empty scheduled set");
    const Eigen::Index cols = scheduled.front().cols();
    const Eigen::Index n_r = scheduled[k].rows();
    Eigen::Index rows = 0;
    for (std::size_t i = 0; i < scheduled.size(); ++i)
        if (static_cast<int>(i) != k) rows += scheduled[i].rows();
    for (const auto& p : protected_channels) rows += p.rows();
    if (rows > cols - n_r)
        throw SchedulingError("interference matrix has " + std::to_string(rows) + " rows but only " +
                              std::to_string(cols - n_r) + " can be nulled");
    CMatrix m(rows, cols);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < scheduled.size(); ++i) {
        if (static_cast<int>(i) == k) continue;
        m.middleRows(at, scheduled[i].rows()) = scheduled[i];
        at += scheduled[i].rows();
    }
    for (const auto& p : protected_channels) {
        m.middleRows(at, p.rows()) = p;
        at += p.rows();
    }
    return m;
}

struct UserPrecoder {
    CMatrix precoder;        // (B N_t) x l_k with orthonormal columns
    RVector singular_values; // effective-channel singular values, descending
    CMatrix right_factor;    // effective-channel right singular vectors in null-space coordinates
    int null_dimension = 0;
    bool rank_reduced = false; // l_k < N_r because the effective channel is rank deficient
};

struct PrecodingSolution {
    int n_t = 0;
    int num_bts = 0;
    std::vector<UserPrecoder> users;

    int streams(int k) const { return static_cast<int>(users[k].precoder.cols()); }

    int total_streams() const {
        int s = 0;
        for (const auto& u : users) s += static_cast<int>(u.precoder.cols());
        return s;
    }

    /// Rows of T_k driven by BTS b.
    CMatrix bts_block(int k, int b) const { return users[k].precoder.middleRows(b * n_t, n_t); }

    /// lambda^2 for every stream, users in order.
    RVector stream_gains() const {
        RVector g(total_streams());
        Eigen::Index at = 0;
        for (const auto& u : users)
            for (Eigen::Index l = 0; l < u.singular_values.size(); ++l) g(at++) = u.singular_values(l) * u.singular_values(l);
        return g;
    }

    std::vector<int> stream_owner() const {
        std::vector<int> o;
        for (std::size_t k = 0; k < users.size(); ++k)
            for (Eigen::Index l = 0; l < users[k].precoder.cols(); ++l) o.push_back(static_cast<int>(k));
        return o;
    }

    /// ||t_{k,l}^{(b)}||^2: one row per BTS, one column per stream.
    RMatrix stream_bts_weights() const {
        RMatrix w(num_bts, total_streams());
        Eigen::Index col = 0;
        for (const auto& u : users)
            for (Eigen::Index l = 0; l < u.precoder.cols(); ++l, ++col)
                for (int b = 0; b < num_bts; ++b) w(b, col) = u.precoder.col(l).segment(b * n_t, n_t).squaredNorm();
        return w;
    }

    /// omega_k^{(b)} = ||T_k^{(b)}||_F^2: one row per BTS, one column per user.
    RMatrix user_bts_weights() const {
        RMatrix w(num_bts, static_cast<Eigen::Index>(users.size()));
        for (std::size_t k = 0; k < users.size(); ++k)
            for (int b = 0; b < num_bts; ++b)
                w(b, static_cast<Eigen::Index>(k)) = users[k].precoder.middleRows(b * n_t, n_t).squaredNorm();
        return w;
    }
};

/// BD precoders through the SVD of each user's interference matrix and of the
/// projected effective channel. `channels` are whitened aggregate channels
/// (N_r x B N_t) of the scheduled users; every precoder also nulls the rows of
/// `protected_channels`.
inline PrecodingSolution bd_precoders(std::span<const CMatrix> channels, std::span<const CMatrix> protected_channels,
                                      int n_t, double tol = linalg::kRankTolerance) {
    PrecodingSolution sol;
    if (channels.empty()) return sol;
    const Eigen::Index n = channels.front().cols();
    if (n % n_t != 0) throw std::invalid_argument("channel width is not a multiple of N_t");
    sol.n_t = n_t;
    sol.num_bts = static_cast<int>(n / n_t);
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const CMatrix interf = interference_matrix(channels, static_cast<int>(k), protected_channels);
        const CMatrix basis = linalg::null_space_basis(interf, tol);
        const CMatrix eff = channels[k] * basis;
        Eigen::JacobiSVD<CMatrix> svd(eff, Eigen::ComputeThinV);
        const RVector& s = svd.singularValues();
        const Eigen::Index n_r = channels[k].rows();
        const int rank = linalg::numerical_rank(s, tol);
        const Eigen::Index l = std::min<Eigen::Index>(n_r, rank);
        UserPrecoder u;
        u.null_dimension = static_cast<int>(basis.cols());
        u.rank_reduced = l < n_r;
        u.right_factor = svd.matrixV().leftCols(l);
        u.precoder = basis * u.right_factor;
        linalg::normalize_column_phases(u.precoder);
        u.singular_values = s.head(l);
        sol.users.push_back(std::move(u));
    }
    return sol;
}

inline PrecodingSolution bd_precoders(std::span<const CMatrix> channels, int n_t) {
    return bd_precoders(channels, std::span<const CMatrix>{}, n_t);
}

/// The same precoders from one inversion of the Gram matrix of all stacked rows.
/// With A the stacked channels and G = A A*, user k's effective Gram is the
/// inverse of the k-th diagonal block of G^-1 = U Lambda^2 U*, and T_k equals the
/// k-th column block of A* G^-1 times U Lambda. Returns nullopt when A lacks full
/// row rank, in which case the SVD route must be used.
inline constexpr double kGramPivotRatio = 1e-5;

inline std::optional<PrecodingSolution> bd_precoders_gram(std::span<const CMatrix> channels,
                                                          std::span<const CMatrix> protected_channels, int n_t) {
    PrecodingSolution sol;
    if (channels.empty()) return sol;
    const Eigen::Index n = channels.front().cols();
    Eigen::Index m = 0;
    for (const auto& c : channels) m += c.rows();
    Eigen::Index p = 0;
    for (const auto& c : protected_channels) p += c.rows();
    const Eigen::Index n_r_max = channels.front().rows();
    if (m + p - n_r_max > n - n_r_max) return std::nullopt;
    CMatrix a(m + p, n);
    Eigen::Index at = 0;
    for (const auto& c : channels) {
        a.middleRows(at, c.rows()) = c;
        at += c.rows();
    }
    for (const auto& c : protected_channels) {
        a.middleRows(at, c.rows()) = c;
        at += c.rows();
    }
    CMatrix gram = CMatrix::Zero(a.rows(), a.rows());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(a);
    Eigen::LLT<CMatrix, Eigen::Lower> llt(gram.selfadjointView<Eigen::Lower>());
    if (llt.info() != Eigen::Success) return std::nullopt;
    // the Gram squares the condition number; leave ill-conditioned stacks to the SVD route
    const RVector piv = llt.matrixLLT().diagonal().real();
    if (!(piv.minCoeff() > kGramPivotRatio * piv.maxCoeff())) return std::nullopt;
    const CMatrix ginv = llt.solve(CMatrix::Identity(a.rows(), a.rows()));
    const CMatrix pinv = a.adjoint() * ginv;
    sol.n_t = n_t;
    sol.num_bts = static_cast<int>(n / n_t);
    at = 0;
    for (const auto& c : channels) {
        const Eigen::Index nr = c.rows();
        const CMatrix block = ginv.block(at, at, nr, nr);
        Eigen::SelfAdjointEigenSolver<CMatrix> es(block);
        if (es.info() != Eigen::Success) return std::nullopt;
        const RVector& ev = es.eigenvalues(); // ascending eigenvalues of S_k^-1
        if (!(ev.minCoeff() > 0.0)) return std::nullopt;
        // S_k = U diag(1/ev) U*, so the largest lambda belongs to the smallest ev.
        UserPrecoder u;
        u.singular_values = ev.array().rsqrt();
        const CMatrix& vecs = es.eigenvectors();
        if (u.singular_values.maxCoeff() * linalg::kRankTolerance > u.singular_values.minCoeff()) return std::nullopt;
        u.precoder = pinv.middleCols(at, nr) * vecs * u.singular_values.asDiagonal();
        linalg::normalize_column_phases(u.precoder);
        u.null_dimension = static_cast<int>(n - (m + p - nr));
        sol.users.push_back(std::move(u));
        at += nr;
    }
    return sol;
}

/// Gram route when the stack has full row rank, SVD route otherwise.
inline PrecodingSolution bd_precoders_fast(std::span<const CMatrix> channels, std::span<const CMatrix> protected_channels,
                                           int n_t) {
    if (auto s = bd_precoders_gram(channels, protected_channels, n_t)) return *s;
    return bd_precoders(channels, protected_channels, n_t);
}

} // namespace clusterbd::precoding
