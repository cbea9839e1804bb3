#pragma once

// Fading channels, aggregate cluster channels, interference-plus-noise
// covariances, whitening and CSI estimation error.

#include "clusterbd/geometry.hpp"
#include "clusterbd/linalg.hpp"
#include "clusterbd/random.hpp"
#include "clusterbd/types.hpp"

#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

namespace clusterbd::channel {

struct LinkBudget {
    double pathloss_exponent = 3.7;
    double shadowing_std_db = 8.0;
    double edge_snr_db = 18.0;
    int n_t = 4;
    int n_r = 2;
    double noise_var = 1.0;
    bool snr_per_antenna = false; // edge SNR refers to one antenna instead of the whole BTS

    void validate() const {
        if (!(pathloss_exponent > 2.0)) throw std::invalid_argument("path-loss exponent must exceed 2");
        if (shadowing_std_db < 0.0) throw std::invalid_argument("shadowing deviation must be non-negative");
        if (n_t < 1 || n_r < 1) throw std::invalid_argument("antenna counts must be positive");
        if (!(noise_var > 0.0)) throw std::invalid_argument("noise variance must be positive");
    }

    /// Per-BTS transmit power P so that P R^-eta / sigma^2 equals the edge SNR.
    double bts_power(double cell_radius) const {
        const double p = std::pow(10.0, edge_snr_db / 10.0) * std::pow(cell_radius, pathloss_exponent) * noise_var;
        return snr_per_antenna ? p * n_t : p;
    }
};

/// Path loss times shadowing for each (listed user, BTS) pair.
struct LargeScaleGains {
    std::vector<int> users;
    RMatrix gain; // users.size() x n_bts
};

/// Per-user channels to every BTS, H_k = [H_k^(1) ... H_k^(N_bts)], and the large-scale gains they were built from.
struct ChannelSet {
    int n_r = 0;
    int n_t = 0;
    int n_bts = 0;
    double noise_var = 1.0;
    std::vector<int> users;       // drop indices, ascending
    std::vector<int> row_of_user; // drop index -> row, -1 when not sampled
    RMatrix gain;                 // rows follow `users`
    std::vector<CMatrix> h;       // n_r x (n_bts n_t) per row

    int row(int user) const {
        if (user < 0 || user >= static_cast<int>(row_of_user.size()) || row_of_user[user] < 0)
            throw std::out_of_range("no channel sampled for user " + std::to_string(user));
        return row_of_user[user];
    }
    bool has(int user) const {
        return user >= 0 && user < static_cast<int>(row_of_user.size()) && row_of_user[user] >= 0;
    }

    CMatrix block(int user, int bts) const { return h[row(user)].middleCols(bts * n_t, n_t); }

    /// Aggregate channel from the B BTSs of a cluster, BTS index ascending.
    CMatrix aggregate(int user, const geometry::NetworkLayout& layout, int cluster) const {
        const int b = layout.cluster_size;
        return h[row(user)].middleCols(layout.first_cell(cluster) * n_t, b * n_t);
    }
};

namespace detail {

inline std::vector<int> row_map(std::span<const int> users, int drop_size) {
    std::vector<int> m(drop_size, -1);
    for (std::size_t i = 0; i < users.size(); ++i) m.at(users[i]) = static_cast<int>(i);
    return m;
}

inline std::vector<int> all_users(const geometry::UserDrop& drop) {
    std::vector<int> u(drop.size());
    for (int k = 0; k < drop.size(); ++k) u[k] = k;
    return u;
}

} // namespace detail

/// g = d^-eta 10^(X/10), X ~ N(0, sigma_sh^2), one independent draw per pair.
inline LargeScaleGains sample_large_scale(const geometry::NetworkLayout& layout, const geometry::UserDrop& drop,
                                          const LinkBudget& budget, std::span<const int> users, std::uint64_t seed) {
    budget.validate();
    LargeScaleGains g;
    g.users.assign(users.begin(), users.end());
    g.gain.resize(static_cast<Eigen::Index>(users.size()), layout.num_cells());
    for (std::size_t i = 0; i < users.size(); ++i) {
        const int k = users[i];
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(k)}));
        std::normal_distribution<double> shadow(0.0, budget.shadowing_std_db);
        for (int b = 0; b < layout.num_cells(); ++b) {
            const double d = distance(drop.positions[k], layout.bts_positions[b]);
            const double x_db = budget.shadowing_std_db > 0.0 ? shadow(rng) : 0.0;
            g.gain(static_cast<Eigen::Index>(i), b) = std::pow(d, -budget.pathloss_exponent) * std::pow(10.0, x_db / 10.0);
        }
    }
    return g;
}

/// Rayleigh small-scale fading on top of fixed large-scale gains.
inline ChannelSet sample_fading(const LargeScaleGains& large, int drop_size, const LinkBudget& budget,
                                std::uint64_t seed) {
    ChannelSet cs;
    cs.n_r = budget.n_r;
    cs.n_t = budget.n_t;
    cs.n_bts = static_cast<int>(large.gain.cols());
    cs.noise_var = budget.noise_var;
    cs.users = large.users;
    cs.row_of_user = detail::row_map(large.users, drop_size);
    cs.gain = large.gain;
    cs.h.reserve(large.users.size());
    for (std::size_t i = 0; i < large.users.size(); ++i) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(large.users[i])}));
        CMatrix h = complex_gaussian_matrix(rng, cs.n_r, static_cast<Eigen::Index>(cs.n_bts) * cs.n_t);
        for (int b = 0; b < cs.n_bts; ++b) h.middleCols(b * cs.n_t, cs.n_t) *= std::sqrt(large.gain(static_cast<Eigen::Index>(i), b));
        cs.h.push_back(std::move(h));
    }
    return cs;
}

/// Independent path loss, shadowing and Rayleigh fading for every user of the drop.
inline ChannelSet sample_channels(const geometry::NetworkLayout& layout, const geometry::UserDrop& drop,
                                  const LinkBudget& budget, std::uint64_t seed) {
    const auto users = detail::all_users(drop);
    const auto large = sample_large_scale(layout, drop, budget, users, derive_seed(seed, {0}));
    return sample_fading(large, drop.size(), budget, derive_seed(seed, {1}));
}

/// Deterministic channel whose blocks carry the mean energy N_r N_t g of the fading channel.
inline ChannelSet mean_channels(const LargeScaleGains& large, int drop_size, const LinkBudget& budget) {
    ChannelSet cs;
    cs.n_r = budget.n_r;
    cs.n_t = budget.n_t;
    cs.n_bts = static_cast<int>(large.gain.cols());
    cs.noise_var = budget.noise_var;
    cs.users = large.users;
    cs.row_of_user = detail::row_map(large.users, drop_size);
    cs.gain = large.gain;
    for (std::size_t i = 0; i < large.users.size(); ++i) {
        CMatrix h(cs.n_r, static_cast<Eigen::Index>(cs.n_bts) * cs.n_t);
        for (int b = 0; b < cs.n_bts; ++b)
            h.middleCols(b * cs.n_t, cs.n_t).setConstant(std::sqrt(large.gain(static_cast<Eigen::Index>(i), b)));
        cs.h.push_back(std::move(h));
    }
    return cs;
}

/// R_k = sigma^2 I + sum over BTSs outside `excluded` of (P/N_t) H H*. `excluded`
/// holds the serving cluster and, with coordination, the helpers that pre-cancel.
inline CMatrix interference_covariance(const ChannelSet& cs, const geometry::NetworkLayout& layout, int user,
                                       std::span<const int> excluded, double bts_power) {
    const CMatrix& h = cs.h[cs.row(user)];
    CMatrix r = CMatrix::Identity(cs.n_r, cs.n_r) * cs.noise_var;
    const double scale = bts_power / cs.n_t;
    const int b = layout.cluster_size;
    for (int c = 0; c < layout.num_clusters(); ++c) {
        if (std::find(excluded.begin(), excluded.end(), c) != excluded.end()) continue;
        const auto cols = h.middleCols(layout.first_cell(c) * cs.n_t, b * cs.n_t);
        r.noalias() += scale * cols * cols.adjoint();
    }
    return r;
}

/// Whitening filter W with W W* = R^-1 (Hermitian inverse square root).
inline CMatrix whiten(const CMatrix& r) { return linalg::hermitian_inverse_sqrt(r); }

/// Copy of the channel set with estimation error E added to every small-scale
/// block; entries of E have variance 10^(mse_db/10). mse_db = -inf disables it.
inline ChannelSet add_csi_error(const ChannelSet& cs, double mse_db, std::uint64_t seed) {
    ChannelSet out = cs;
    if (std::isinf(mse_db) && mse_db < 0.0) return out;
    if (!std::isfinite(mse_db)) throw std::invalid_argument("MSE must be finite or -inf");
    const double sigma = std::sqrt(std::pow(10.0, mse_db / 10.0));
    for (std::size_t i = 0; i < cs.users.size(); ++i) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(cs.users[i])}));
        CMatrix e = complex_gaussian_matrix(rng, cs.n_r, static_cast<Eigen::Index>(cs.n_bts) * cs.n_t);
        for (int b = 0; b < cs.n_bts; ++b)
            out.h[i].middleCols(b * cs.n_t, cs.n_t) += (sigma * std::sqrt(cs.gain(static_cast<Eigen::Index>(i), b))) * e.middleCols(b * cs.n_t, cs.n_t);
    }
    return out;
}

/// Candidate with the largest whitened aggregate channel energy; ties go to the lowest index.
inline int select_home_cluster(const ChannelSet& cs, const geometry::NetworkLayout& layout, int user,
                               const CMatrix& w, std::span<const int> candidates) {
    if (candidates.empty()) throw std::invalid_argument("no candidate clusters");
    int best = -1;
    double best_norm = -1.0;
    std::vector<int> sorted(candidates.begin(), candidates.end());
    std::sort(sorted.begin(), sorted.end());
    for (int c : sorted) {
        const double e = (w * cs.aggregate(user, layout, c)).squaredNorm();
        if (e > best_norm) {
            best_norm = e;
            best = c;
        }
    }
    return best;
}

/// Text dump: header "channels <users> <n_r> <n_t> <n_bts>", then per user
/// "user <index>" followed by n_r rows of (re, im) pairs, row-major.
inline void write_channels(std::ostream& os, const ChannelSet& cs) {
    os.precision(17);
    os << "channels " << cs.users.size() << ' ' << cs.n_r << ' ' << cs.n_t << ' ' << cs.n_bts << '\n';
    for (std::size_t i = 0; i < cs.users.size(); ++i) {
        os << "user " << cs.users[i] << '\n';
        for (Eigen::Index r = 0; r < cs.h[i].rows(); ++r) {
            for (Eigen::Index c = 0; c < cs.h[i].cols(); ++c)
                os << (c ? " " : "") << cs.h[i](r, c).real() << ' ' << cs.h[i](r, c).imag();
            os << '\n';
        }
    }
}

/// Reads the matrices written by write_channels (gains are not stored and come back as zero).
inline ChannelSet read_channels(std::istream& is) {
    std::string tag;
    std::size_t n_users = 0;
    ChannelSet cs;
    if (!(is >> tag >> n_users >> cs.n_r >> cs.n_t >> cs.n_bts) || tag != "channels")
        throw std::runtime_error("malformed channel dump header");
    int max_user = -1;
    for (std::size_t i = 0; i < n_users; ++i) {
        int u = 0;
        if (!(is >> tag >> u) || tag != "user") throw std::runtime_error("malformed channel dump record");
        CMatrix h(cs.n_r, static_cast<Eigen::Index>(cs.n_bts) * cs.n_t);
        for (Eigen::Index r = 0; r < h.rows(); ++r)
            for (Eigen::Index c = 0; c < h.cols(); ++c) {
                double re = 0.0, im = 0.0;
                if (!(is >> re >> im)) throw std::runtime_error("truncated channel dump");
                h(r, c) = {re, im};
            }
        cs.users.push_back(u);
        cs.h.push_back(std::move(h));
        max_user = std::max(max_user, u);
    }
    cs.row_of_user = detail::row_map(cs.users, max_user + 1);
    cs.gain = RMatrix::Zero(static_cast<Eigen::Index>(n_users), cs.n_bts);
    return cs;
}

} // namespace clusterbd::channel
