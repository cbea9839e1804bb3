#pragma once

// Rate metrics and the comparison systems.

#include "clusterbd/linalg.hpp"
#include "clusterbd/power.hpp"
#include "clusterbd/precoding.hpp"
#include "clusterbd/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace clusterbd::evaluation {

/// Per-user rates (1/B) sum_l log2(1 + lambda^2 gamma) under a diagonal allocation.
inline std::vector<double> user_rates(const precoding::PrecodingSolution& sol, const RVector& power) {
    std::vector<double> out;
    Eigen::Index at = 0;
    for (const auto& u : sol.users) {
        double r = 0.0;
        for (Eigen::Index l = 0; l < u.singular_values.size(); ++l, ++at)
            r += std::log2(1.0 + u.singular_values(l) * u.singular_values(l) * power(at));
        out.push_back(r / sol.num_bts);
    }
    return out;
}

inline double per_cell_sum_rate(const precoding::PrecodingSolution& sol, const RVector& power) {
    const auto r = user_rates(sol, power);
    return std::accumulate(r.begin(), r.end(), 0.0);
}

/// Stream powers of user k as a diagonal transmit covariance.
inline CMatrix user_covariance(const precoding::PrecodingSolution& sol, const RVector& power, int k) {
    Eigen::Index at = 0;
    for (int j = 0; j < k; ++j) at += sol.streams(j);
    const CMatrix& t = sol.users[k].precoder;
    return t * power.segment(at, t.cols()).cast<cdouble>().asDiagonal() * t.adjoint();
}

/// (1/B) sum_k log2 |I + H_k T_k Q_k T_k* H_k*| computed directly from the channels.
inline double per_cell_sum_rate_det(std::span<const CMatrix> channels, const precoding::PrecodingSolution& sol,
                                    const RVector& power) {
    double s = 0.0;
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const CMatrix& h = channels[k];
        const CMatrix m = CMatrix::Identity(h.rows(), h.rows()) + h * user_covariance(sol, power, static_cast<int>(k)) * h.adjoint();
        s += linalg::log2_det_hpd(m);
    }
    return s / sol.num_bts;
}

/// Per-user rates on channels that may differ from the ones the precoders were
/// designed for: interference from the other users' streams, H_k T_i Q_i T_i* H_k*,
/// is treated as additional Gaussian noise.
inline std::vector<double> user_rates_residual(std::span<const CMatrix> channels, const precoding::PrecodingSolution& sol,
                                               const RVector& power) {
    const std::size_t n = channels.size();
    std::vector<CMatrix> cov(n);
    for (std::size_t i = 0; i < n; ++i) cov[i] = user_covariance(sol, power, static_cast<int>(i));
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const CMatrix& h = channels[k];
        CMatrix noise = CMatrix::Identity(h.rows(), h.rows());
        for (std::size_t i = 0; i < n; ++i)
            if (i != k) noise.noalias() += h * cov[i] * h.adjoint();
        const CMatrix total = noise + h * cov[k] * h.adjoint();
        out[k] = std::max(0.0, linalg::log2_det_hpd(total) - linalg::log2_det_hpd(noise)) / sol.num_bts;
    }
    return out;
}

/// sum_k R_k / N_{c,k}
inline double effective_sum_rate(std::span<const double> rates, std::span<const int> serving_clusters) {
    if (rates.size() != serving_clusters.size()) throw std::invalid_argument("effective_sum_rate: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < rates.size(); ++i) {
        if (serving_clusters[i] < 1) throw std::invalid_argument("serving-cluster count must be at least 1");
        s += rates[i] / serving_clusters[i];
    }
    return s;
}

inline double mean_min_rate(std::span<const double> minima) {
    if (minima.empty()) throw std::invalid_argument("mean_min_rate needs at least one trial");
    return std::accumulate(minima.begin(), minima.end(), 0.0) / static_cast<double>(minima.size());
}

struct UtilityCurve {
    std::vector<double> values;
    std::size_t argmax = 0;
};

/// U = alpha Rmin / max Rmin + (1 - alpha) Rsum / max Rsum, evaluated pointwise.
inline UtilityCurve utility(std::span<const double> min_rate, std::span<const double> sum_rate, double alpha) {
    if (min_rate.size() != sum_rate.size() || min_rate.empty()) throw std::invalid_argument("utility: curves must share a non-empty grid");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("utility: alpha must lie in [0, 1]");
    const double max_min = *std::max_element(min_rate.begin(), min_rate.end());
    const double max_sum = *std::max_element(sum_rate.begin(), sum_rate.end());
    if (!(max_min > 0.0) || !(max_sum > 0.0)) throw std::invalid_argument("utility: a curve has no positive maximum");
    UtilityCurve u;
    for (std::size_t i = 0; i < min_rate.size(); ++i) {
        u.values.push_back(alpha * min_rate[i] / max_min + (1.0 - alpha) * sum_rate[i] / max_sum);
        if (u.values[i] > u.values[u.argmax]) u.argmax = i;
    }
    return u;
}

/// Empirical CDF of rate samples.
class RateCdf {
public:
    explicit RateCdf(std::vector<double> samples) : sorted_(std::move(samples)) {
        if (sorted_.empty()) throw std::invalid_argument("rate CDF needs at least one sample");
        std::sort(sorted_.begin(), sorted_.end());
    }

    std::size_t size() const { return sorted_.size(); }
    const std::vector<double>& sorted() const { return sorted_; }

    /// Fraction of samples <= x.
    double operator()(double x) const {
        const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
        return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
    }

    /// Smallest sample r with CDF(r) >= p (the rate at outage level p).
    double quantile(double p) const {
        if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1]");
        const auto n = static_cast<double>(sorted_.size());
        auto idx = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
        idx = std::clamp<std::size_t>(idx, 1, sorted_.size());
        return sorted_[idx - 1];
    }

private:
    std::vector<double> sorted_;
};

/// Fraction of global-coordination CSI needed by clusters of B cells in an N-cell network.
inline double csi_reduction_ratio(int cluster_size, int num_cells) {
    if (cluster_size < 1 || num_cells < cluster_size) throw std::invalid_argument("csi_reduction_ratio needs 1 <= B <= N");
    return static_cast<double>(cluster_size) / static_cast<double>(num_cells);
}

struct Fraction {
    long numerator = 0;
    long denominator = 1;
    bool operator==(const Fraction&) const = default;
};

inline Fraction csi_reduction_fraction(int cluster_size, int num_cells) {
    (void)csi_reduction_ratio(cluster_size, num_cells);
    const long g = std::gcd(cluster_size, num_cells);
    return {cluster_size / g, num_cells / g};
}

/// Point-to-point rate log2|I + H Q H*| with Q water-filled over H's right singular vectors.
inline double waterfilled_link_rate(const CMatrix& h, double budget) {
    Eigen::JacobiSVD<CMatrix> svd(h);
    const RVector g = svd.singularValues().cwiseAbs2();
    const RVector p = power::waterfill(g, budget).power;
    double r = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) r += std::log2(1.0 + g(i) * p(i));
    return r;
}

/// Link rate on the true channel with the water-filled covariance designed for an estimate.
inline double mismatched_link_rate(const CMatrix& h_true, const CMatrix& h_est, double budget) {
    Eigen::JacobiSVD<CMatrix> svd(h_est, Eigen::ComputeThinV);
    const RVector g = svd.singularValues().cwiseAbs2();
    const RVector p = power::waterfill(g, budget).power;
    const CMatrix v = svd.matrixV();
    const CMatrix q = v * p.cast<cdouble>().asDiagonal() * v.adjoint();
    return linalg::log2_det_hpd(CMatrix::Identity(h_true.rows(), h_true.rows()) + h_true * q * h_true.adjoint());
}

/// TDMA with intercell scheduling: one BTS serves one user with power P for 1/B of the time.
inline double baseline_tdma_intercell(const CMatrix& link, double bts_limit, int cluster_size) {
    return waterfilled_link_rate(link, bts_limit) / cluster_size;
}

/// Intercell scheduling with BD: the active BTS serves up to floor(N_t/N_r) users
/// with single-cell BD and total-power water-filling, 1/B of the time. Returns per-user rates.
inline std::vector<double> intercell_bd_rates(std::span<const CMatrix> links, int n_t, double bts_limit, int cluster_size) {
    if (links.empty()) return {};
    const auto sol = precoding::bd_precoders_fast(links, {}, n_t);
    const RVector p = power::waterfill(sol.stream_gains(), bts_limit).power;
    auto r = user_rates(sol, p);
    for (double& x : r) x /= cluster_size;
    return r;
}

inline double baseline_intercell_bd(std::span<const CMatrix> links, int n_t, double bts_limit, int cluster_size) {
    const auto r = intercell_bd_rates(links, n_t, bts_limit, cluster_size);
    return std::accumulate(r.begin(), r.end(), 0.0);
}

/// Multi-cell BD with total-power water-filling over the aggregate channel (budget B P).
inline double baseline_bd_tpc(std::span<const CMatrix> channels, int n_t, double bts_limit) {
    const auto sol = precoding::bd_precoders_fast(channels, {}, n_t);
    return power::allocate(sol, power::Scheme::TPC, bts_limit).rate;
}

} // namespace clusterbd::evaluation
