#pragma once

// Power allocation for block-diagonalized streams under per-BTS power
// constraints (optimal, user scaling, scaled water-filling), under a total
// power constraint (water-filling), and the dirty-paper-coding sum capacity
// baseline through broadcast/multiple-access duality.

#include "clusterbd/linalg.hpp"
#include "clusterbd/precoding.hpp"
#include "clusterbd/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

namespace clusterbd::power {

enum class Scheme { OPT, US, SWF, TPC };

inline std::string_view to_string(Scheme s) {
    switch (s) {
    case Scheme::OPT: return "OPT";
    case Scheme::US: return "US";
    case Scheme::SWF: return "SWF";
    case Scheme::TPC: return "TPC-WF";
    }
    return "?";
}

/// (1/B) sum log2(1 + lambda^2 gamma) in bits/s/Hz per cell; `gains` holds lambda^2.
inline double rate_of(const RVector& gains, const RVector& power, int cluster_size) {
    if (gains.size() != power.size()) throw std::invalid_argument("rate_of: size mismatch");
    double r = 0.0;
    for (Eigen::Index i = 0; i < gains.size(); ++i) r += std::log2(1.0 + gains(i) * power(i));
    return r / cluster_size;
}

struct WaterfillResult {
    RVector power;
    double level = 0.0;      // water level nu; gamma_i = (nu - 1/g_i)^+
    bool degenerate = false; // every gain was zero
};

/// Classic water-filling: maximizes sum log(1 + g_i p_i) subject to sum p_i = budget.
inline WaterfillResult waterfill(const RVector& gains, double budget) {
    WaterfillResult w;
    w.power = RVector::Zero(gains.size());
    if (!(budget > 0.0)) throw std::invalid_argument("waterfill: budget must be positive");
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < gains.size(); ++i)
        if (gains(i) > 0.0) idx.push_back(i);
    if (idx.empty()) {
        w.degenerate = true;
        return w;
    }
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return gains(a) > gains(b); });
    double inv_sum = 0.0;
    std::size_t active = 0;
    double level = 0.0;
    for (std::size_t m = 0; m < idx.size(); ++m) {
        const double candidate = (budget + inv_sum + 1.0 / gains(idx[m])) / static_cast<double>(m + 1);
        if (candidate <= 1.0 / gains(idx[m])) break;
        inv_sum += 1.0 / gains(idx[m]);
        active = m + 1;
        level = candidate;
    }
    for (std::size_t m = 0; m < active; ++m) w.power(idx[m]) = std::max(0.0, level - 1.0 / gains(idx[m]));
    w.level = level;
    return w;
}

/// Per-BTS transmit power sum_{streams} ||t^{(b)}||^2 gamma for each BTS.
inline RVector bts_power(const RMatrix& stream_weights, const RVector& power) { return stream_weights * power; }

struct ScaledAllocation {
    double mu = 0.0;
    RVector power;
};

/// Scales a total-power allocation by mu = P / max_b Tr_b so that the most loaded BTS transmits exactly P.
inline ScaledAllocation scale_to_pbpc(const RVector& tpc_power, const RMatrix& stream_weights, double bts_limit) {
    ScaledAllocation s;
    const RVector traces = bts_power(stream_weights, tpc_power);
    const double worst = traces.size() ? traces.maxCoeff() : 0.0;
    if (!(worst > 0.0)) {
        s.power = RVector::Zero(tpc_power.size());
        return s;
    }
    s.mu = bts_limit / worst;
    s.power = s.mu * tpc_power;
    return s;
}

struct PowerAllocation {
    Scheme scheme = Scheme::SWF;
    RVector power;     // gamma per stream
    RVector bts_power; // achieved Tr_b
    double rate = 0.0; // bits/s/Hz per cell
    double kkt_residual = 0.0;
    double scaling = 1.0; // mu for SWF
    int iterations = 0;
};

struct BarrierResult {
    RVector x;
    double kkt_residual = 0.0;
    int iterations = 0;
};

/// Log-barrier interior-point method for
///   maximize sum_j sum_{a in groups[j]} ln(1 + a x_j)
///   subject to A x <= limit (componentwise), x >= 0,
/// with A >= 0 and every column of A non-zero. The returned point is strictly
/// feasible with duality gap below `gap_tol` nats.
inline BarrierResult solve_separable_concave(const std::vector<std::vector<double>>& groups, const RMatrix& a,
                                             double limit, double gap_tol = 1e-10, int max_newton = 10000) {
    const Eigen::Index nvar = a.cols();
    const Eigen::Index ncon = a.rows();
    if (static_cast<Eigen::Index>(groups.size()) != nvar) throw std::invalid_argument("barrier: group count mismatch");
    if (!(limit > 0.0)) throw std::invalid_argument("barrier: power limit must be positive");
    BarrierResult out;
    out.x = RVector::Zero(nvar);
    if (nvar == 0) return out;

    // Variables whose gains are all zero never receive power.
    std::vector<Eigen::Index> live;
    for (Eigen::Index j = 0; j < nvar; ++j) {
        bool any = false;
        for (double g : groups[j]) any = any || g > 0.0;
        if (!any) continue;
        if (!(a.col(j).maxCoeff() > 0.0)) throw std::invalid_argument("barrier: stream without per-BTS weight");
        live.push_back(j);
    }
    const Eigen::Index n = static_cast<Eigen::Index>(live.size());
    if (n == 0) return out;
    RMatrix A(ncon, n);
    for (Eigen::Index j = 0; j < n; ++j) A.col(j) = a.col(live[j]);

    auto objective = [&](const RVector& x) {
        double f = 0.0;
        for (Eigen::Index j = 0; j < n; ++j)
            for (double g : groups[live[j]]) f += std::log1p(g * x(j));
        return f;
    };
    auto strictly_feasible = [&](const RVector& x) {
        return (x.array() > 0.0).all() && ((limit - (A * x).array()) > 0.0).all();
    };
    auto barrier = [&](const RVector& x, double t) {
        const RVector s = limit - (A * x).array();
        return t * objective(x) + s.array().log().sum() + x.array().log().sum();
    };

    RVector x = RVector::Constant(n, 0.5 * limit / A.rowwise().sum().maxCoeff());
    double t = 1.0;
    int newton = 0;
    RVector grad_f(n), hdiag(n);
    for (;;) {
        // Centering.
        for (;;) {
            if (++newton > max_newton) {
                RVector full = RVector::Zero(nvar);
                for (Eigen::Index j = 0; j < n; ++j) full(live[j]) = x(j);
                throw ConvergenceError("interior-point method hit its iteration cap", full, 1.0 / t);
            }
            const RVector s = limit - (A * x).array();
            for (Eigen::Index j = 0; j < n; ++j) {
                double d1 = 0.0, d2 = 0.0;
                for (double g : groups[live[j]]) {
                    const double den = 1.0 + g * x(j);
                    d1 += g / den;
                    d2 += g * g / (den * den);
                }
                grad_f(j) = d1;
                hdiag(j) = d2;
            }
            const RVector inv_s = s.cwiseInverse();
            const RVector grad = t * grad_f - A.transpose() * inv_s + x.cwiseInverse();
            // Negated Hessian (positive definite).
            RMatrix nh = A.transpose() * inv_s.cwiseAbs2().asDiagonal() * A;
            nh.diagonal() += t * hdiag + x.cwiseInverse().cwiseAbs2();
            Eigen::LLT<RMatrix> llt(nh);
            const RVector step = llt.solve(grad);
            const double decrement = grad.dot(step);
            if (!(decrement > 1e-9)) break;
            double tau = 1.0;
            while (!strictly_feasible(x + tau * step)) tau *= 0.5;
            const double phi0 = barrier(x, t);
            while (barrier(x + tau * step, t) < phi0 + 0.25 * tau * decrement && tau > 1e-12) tau *= 0.5;
            if (tau <= 1e-12 || tau * step.norm() <= 1e-14 * x.norm()) break; // rounding dominates
            x += tau * step;
        }
        if (static_cast<double>(n + ncon) / t < gap_tol) break;
        t *= 10.0;
    }

    // KKT certificate, independent of the barrier: fit the multipliers of the
    // tight constraints to stationarity on the powered variables, then check
    // stationarity, dual feasibility and complementary slackness.
    const RVector s = limit - (A * x).array();
    RVector d1 = RVector::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (double g : groups[live[j]]) d1(j) += g / (1.0 + g * x(j));
    std::vector<Eigen::Index> tight, powered;
    for (Eigen::Index b = 0; b < ncon; ++b)
        if (s(b) < 1e-4 * limit) tight.push_back(b);
    for (Eigen::Index j = 0; j < n; ++j)
        if (x(j) > 1e-6 * x.maxCoeff()) powered.push_back(j);
    RVector nu = RVector::Zero(ncon);
    if (!tight.empty()) {
        RMatrix m(powered.size(), tight.size());
        RVector rhs(powered.size());
        for (std::size_t r = 0; r < powered.size(); ++r) {
            rhs(r) = d1(powered[r]);
            for (std::size_t c = 0; c < tight.size(); ++c) m(r, c) = A(tight[c], powered[r]);
        }
        const RVector fit = m.colPivHouseholderQr().solve(rhs);
        for (std::size_t c = 0; c < tight.size(); ++c) nu(tight[c]) = fit(c);
    }
    double residual = 0.0;
    for (Eigen::Index b = 0; b < ncon; ++b) {
        residual = std::max(residual, std::max(0.0, -nu(b)) / (1.0 + std::abs(nu(b))));
        residual = std::max(residual, std::abs(nu(b)) * s(b) / limit);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const double price = A.col(j).dot(nu);
        const double sigma = price - d1(j); // multiplier of x_j >= 0
        const double scale = 1.0 + std::abs(d1(j));
        if (x(j) > 1e-6 * x.maxCoeff()) residual = std::max(residual, std::abs(sigma) / scale);
        else residual = std::max(residual, std::max(0.0, -sigma) / scale);
        residual = std::max(residual, std::abs(sigma) * x(j) / (scale * limit));
    }
    for (Eigen::Index j = 0; j < n; ++j) out.x(live[j]) = x(j);
    out.kkt_residual = residual;
    out.iterations = newton;
    return out;
}

/// Optimal per-stream powers under per-BTS constraints sum_s w_{b,s} gamma_s <= P.
inline PowerAllocation solve_pbpc_optimal(const RVector& gains, const RMatrix& stream_weights, double bts_limit,
                                          int cluster_size) {
    std::vector<std::vector<double>> groups(static_cast<std::size_t>(gains.size()));
    for (Eigen::Index i = 0; i < gains.size(); ++i) groups[i] = {gains(i)};
    const BarrierResult r = solve_separable_concave(groups, stream_weights, bts_limit);
    PowerAllocation p;
    p.scheme = Scheme::OPT;
    p.power = r.x;
    p.bts_power = bts_power(stream_weights, p.power);
    p.rate = rate_of(gains, p.power, cluster_size);
    p.kkt_residual = r.kkt_residual;
    p.iterations = r.iterations;
    return p;
}

/// One power level mu_k per user shared by all its streams, under sum_k omega_{b,k} mu_k <= P.
inline PowerAllocation solve_user_scaling(const RVector& gains, std::span<const int> stream_owner,
                                          const RMatrix& user_weights, double bts_limit, int cluster_size) {
    const Eigen::Index users = user_weights.cols();
    std::vector<std::vector<double>> groups(static_cast<std::size_t>(users));
    for (Eigen::Index i = 0; i < gains.size(); ++i) groups.at(stream_owner[i]).push_back(gains(i));
    const BarrierResult r = solve_separable_concave(groups, user_weights, bts_limit);
    PowerAllocation p;
    p.scheme = Scheme::US;
    p.power.resize(gains.size());
    for (Eigen::Index i = 0; i < gains.size(); ++i) p.power(i) = r.x(stream_owner[i]);
    p.bts_power = user_weights * r.x;
    p.rate = rate_of(gains, p.power, cluster_size);
    p.kkt_residual = r.kkt_residual;
    p.iterations = r.iterations;
    return p;
}

/// Runs one of the allocation schemes on a BD solution. The total power budget is B P.
inline PowerAllocation allocate(const precoding::PrecodingSolution& sol, Scheme scheme, double bts_limit) {
    const int b = sol.num_bts;
    const RVector gains = sol.stream_gains();
    PowerAllocation p;
    p.scheme = scheme;
    if (gains.size() == 0) {
        p.bts_power = RVector::Zero(b);
        return p;
    }
    switch (scheme) {
    case Scheme::OPT: return solve_pbpc_optimal(gains, sol.stream_bts_weights(), bts_limit, b);
    case Scheme::US: {
        const auto owner = sol.stream_owner();
        return solve_user_scaling(gains, owner, sol.user_bts_weights(), bts_limit, b);
    }
    case Scheme::TPC:
    case Scheme::SWF: {
        const RMatrix w = sol.stream_bts_weights();
        const WaterfillResult wf = waterfill(gains, b * bts_limit);
        p.power = wf.power;
        if (scheme == Scheme::SWF) {
            const ScaledAllocation s = scale_to_pbpc(wf.power, w, bts_limit);
            p.power = s.power;
            p.scaling = s.mu;
        }
        p.bts_power = bts_power(w, p.power);
        p.rate = rate_of(gains, p.power, b);
        return p;
    }
    }
    return p;
}

struct DpcResult {
    double rate = 0.0; // bits/s/Hz per cell
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace; // sum rate (bits/s/Hz, whole cluster) per iteration
};

/// Sum capacity of the broadcast channel with whitened channels H_k (N_r x n)
/// under total power `budget`, via sum-power iterative water-filling on the dual
/// multiple-access channel with the averaged covariance update.
inline DpcResult dpc_sum_capacity_tpc(std::span<const CMatrix> channels, double budget, int cluster_size,
                                      int max_iterations = 2000, double tol = 1e-6) {
    DpcResult out;
    const std::size_t k_users = channels.size();
    if (k_users == 0) {
        out.converged = true;
        return out;
    }
    const Eigen::Index n = channels.front().cols();
    std::vector<CMatrix> q(k_users);
    for (std::size_t k = 0; k < k_users; ++k) q[k] = CMatrix::Zero(channels[k].rows(), channels[k].rows());

    auto mac_matrix = [&](const std::vector<CMatrix>& cov) {
        CMatrix z = CMatrix::Identity(n, n);
        for (std::size_t k = 0; k < k_users; ++k) z.noalias() += channels[k].adjoint() * cov[k] * channels[k];
        return z;
    };
    double prev = 0.0;
    const double keep = (static_cast<double>(k_users) - 1.0) / static_cast<double>(k_users);
    for (int it = 1; it <= max_iterations; ++it) {
        const CMatrix z = mac_matrix(q);
        std::vector<CMatrix> vecs(k_users);
        std::vector<RVector> vals(k_users);
        Eigen::Index total = 0;
        for (std::size_t k = 0; k < k_users; ++k) {
            const CMatrix zk = z - channels[k].adjoint() * q[k] * channels[k];
            Eigen::LLT<CMatrix> llt(zk);
            const CMatrix m = channels[k] * llt.solve(channels[k].adjoint());
            Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (m + m.adjoint()));
            vecs[k] = es.eigenvectors();
            vals[k] = es.eigenvalues().cwiseMax(0.0);
            total += vals[k].size();
        }
        RVector all(total);
        Eigen::Index at = 0;
        for (const auto& v : vals) {
            all.segment(at, v.size()) = v;
            at += v.size();
        }
        const RVector p = waterfill(all, budget).power;
        at = 0;
        for (std::size_t k = 0; k < k_users; ++k) {
            const Eigen::Index d = vals[k].size();
            const CMatrix fresh = vecs[k] * p.segment(at, d).cast<cdouble>().asDiagonal() * vecs[k].adjoint();
            at += d;
            q[k] = keep * q[k] + (1.0 / static_cast<double>(k_users)) * fresh;
        }
        const double f = linalg::log2_det_hpd(mac_matrix(q));
        out.trace.push_back(f);
        out.iterations = it;
        if (it > 1 && std::abs(f - prev) < tol) {
            out.converged = true;
            prev = f;
            break;
        }
        prev = f;
    }
    out.rate = *std::max_element(out.trace.begin(), out.trace.end()) / cluster_size;
    return out;
}

} // namespace clusterbd::power
