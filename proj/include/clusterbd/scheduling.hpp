#pragma once

// Greedy user selection (add the user with the largest metric gain until the
// metric stops increasing or the degrees of freedom run out) with
// maximum-sum-rate and proportional-fair metrics.

#include "clusterbd/power.hpp"
#include "clusterbd/precoding.hpp"
#include "clusterbd/types.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace clusterbd::scheduling {

enum class Metric { MSR, PF };

struct Selection {
    std::vector<int> users;    // in selection order
    double metric = 0.0;       // metric of the final set
    std::vector<double> trace; // metric after each round
    int skipped = 0;           // candidate evaluations that failed
};

namespace detail {

template <class TryAdd, class Commit>
Selection greedy(std::span<const int> candidates, int capacity, TryAdd&& try_add, Commit&& commit) {
    if (capacity < 1) throw std::invalid_argument("greedy selection needs capacity >= 1");
    Selection s;
    std::vector<int> open(candidates.begin(), candidates.end());
    std::sort(open.begin(), open.end());
    while (static_cast<int>(s.users.size()) < capacity && !open.empty()) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t pos = open.size();
        for (std::size_t i = 0; i < open.size(); ++i) {
            const std::optional<double> v = try_add(open[i]);
            if (!v) {
                ++s.skipped;
                continue;
            }
            if (*v > best) {
                best = *v;
                pos = i;
            }
        }
        if (pos == open.size() || !(best > s.metric)) break;
        commit(open[pos]);
        s.users.push_back(open[pos]);
        s.metric = best;
        s.trace.push_back(best);
        open.erase(open.begin() + static_cast<std::ptrdiff_t>(pos));
    }
    return s;
}

} // namespace detail

/// Set evaluator: metric of a candidate set, or nullopt when the set cannot be served.
using SetEvaluator = std::function<std::optional<double>(const std::vector<int>&)>;

/// Greedy selection driven by a full re-evaluation of every candidate set.
inline Selection greedy_select(std::span<const int> candidates, const SetEvaluator& f, int capacity) {
    std::vector<int> current;
    return detail::greedy(
        candidates, capacity,
        [&](int k) {
            std::vector<int> trial = current;
            trial.push_back(k);
            try {
                return f(trial);
            } catch (const SchedulingError&) {
                return std::optional<double>{};
            }
        },
        [&](int k) { current.push_back(k); });
}

inline double metric_msr(std::span<const double> rates) {
    double s = 0.0;
    for (double r : rates) s += r;
    return s;
}

/// sum_k R_k / Tbar_k
inline double metric_pf(std::span<const double> rates, std::span<const double> averages) {
    if (rates.size() != averages.size()) throw std::invalid_argument("metric_pf: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < rates.size(); ++i) s += rates[i] / averages[i];
    return s;
}

inline constexpr double kPfWindow = 100.0;
inline constexpr double kPfInitialAverage = 1e-3;

/// Tbar' = (1 - 1/t_c) Tbar + (1/t_c) R, with R = 0 for users not scheduled in the slot.
inline std::vector<double> update_pf_averages(std::span<const double> averages, std::span<const double> rates,
                                              double window = kPfWindow) {
    if (averages.size() != rates.size()) throw std::invalid_argument("update_pf_averages: size mismatch");
    if (!(window >= 1.0)) throw std::invalid_argument("PF window must be at least one slot");
    std::vector<double> out(averages.size());
    for (std::size_t i = 0; i < averages.size(); ++i) out[i] = (1.0 - 1.0 / window) * averages[i] + rates[i] / window;
    return out;
}

/// Per-user rates and the weighted metric of one BD + scaled water-filling evaluation.
struct SetRates {
    std::vector<double> rates;
    double metric = 0.0;
};

/// Incremental BD + SWF evaluator for greedy selection. It keeps the inverse
/// Gram matrix G^-1 = (A A*)^-1 and A* G^-1 of the selected stack A and extends
/// both with a Schur complement per candidate, so one candidate costs
/// O(n m N_r) instead of a fresh factorization.
class BdSwfEngine {
public:
    /// `channels[i]` is candidate i's whitened aggregate channel; the metric is
    /// sum_k weights[k] R_k (all ones for MSR, 1/Tbar for PF). Every precoder also
    /// nulls the rows of `protected_channels`.
    BdSwfEngine(std::span<const CMatrix> channels, std::span<const double> weights, int n_t, double bts_limit,
                std::span<const CMatrix> protected_channels = {})
        : channels_(channels), weights_(weights), n_t_(n_t), limit_(bts_limit) {
        if (channels.size() != weights.size()) throw std::invalid_argument("BdSwfEngine: size mismatch");
        if (!channels.empty()) n_ = channels.front().cols();
        else if (!protected_channels.empty()) n_ = protected_channels.front().cols();
        if (n_ % n_t != 0) throw std::invalid_argument("BdSwfEngine: channel width is not a multiple of N_t");
        for (const auto& p : protected_channels) {
            State next;
            if (!extend(state_, p, -1, next)) throw SchedulingError("protected channels are not linearly independent");
            state_ = std::move(next);
        }
    }

    /// Metric of the selected set plus candidate k. Only the diagonal blocks of the
    /// updated (A A*)^-1 and the matching columns of A* (A A*)^-1 are formed.
    std::optional<double> try_add(int k) const {
        const CMatrix& h = channels_[k];
        const Eigen::Index nr = h.rows();
        const Eigen::Index m = state_.a.rows();
        if (m + nr > n_) return std::nullopt;
        const CMatrix hh = h * h.adjoint();
        const double scale = hh.real().trace();
        if (!(scale > 0.0)) return std::nullopt;
        if (m == 0) {
            Eigen::LLT<CMatrix> llt(hh);
            if (llt.info() != Eigen::Success || !well_conditioned(hh, scale)) return std::nullopt;
            const CMatrix g = llt.solve(CMatrix::Identity(nr, nr));
            const CMatrix pc = h.adjoint() * g;
            const std::vector<int> members{k};
            auto r = evaluate_blocks(members, [&](std::size_t) { return std::pair<CMatrix, CMatrix>{g, pc}; });
            if (!r) return std::nullopt;
            return r->metric;
        }
        const CMatrix b = state_.a * h.adjoint();
        const CMatrix x = state_.ginv * b;
        CMatrix schur = hh - b.adjoint() * x;
        schur = 0.5 * (schur + schur.adjoint()).eval();
        if (!well_conditioned(schur, scale)) return std::nullopt;
        Eigen::LLT<CMatrix> llt(schur);
        if (llt.info() != Eigen::Success) return std::nullopt;
        const CMatrix sinv = llt.solve(CMatrix::Identity(nr, nr));
        const CMatrix xs = x * sinv;
        const CMatrix ys = (state_.pinv * b - h.adjoint()) * sinv;
        std::vector<int> members = state_.members;
        members.push_back(k);
        const std::size_t last = state_.members.size();
        auto r = evaluate_blocks(members, [&](std::size_t j) {
            if (j == last) return std::pair<CMatrix, CMatrix>{sinv, -ys};
            const Eigen::Index o = state_.offsets[j];
            const Eigen::Index r = channels_[state_.members[j]].rows();
            const auto xj = x.middleRows(o, r);
            return std::pair<CMatrix, CMatrix>{state_.ginv.block(o, o, r, r) + xs.middleRows(o, r) * xj.adjoint(),
                                               state_.pinv.middleCols(o, r) + ys * xj.adjoint()};
        });
        if (!r) return std::nullopt;
        return r->metric;
    }

    void commit(int k) {
        State next;
        if (!extend(state_, channels_[k], k, next)) throw SchedulingError("candidate cannot be added to the selected set");
        state_ = std::move(next);
    }

    const std::vector<int>& selected() const { return state_.members; }

    /// Rates of the currently selected set, in selection order.
    std::optional<SetRates> current() const { return evaluate(state_); }

private:
    struct State {
        CMatrix a;    // stacked channels, m x n
        CMatrix ginv; // (A A*)^-1
        CMatrix pinv; // A* (A A*)^-1
        std::vector<int> members;
        std::vector<Eigen::Index> offsets;
    };

    /// Appends the rows of h; `member` < 0 marks protected rows that carry no stream.
    bool extend(const State& s, const CMatrix& h, int member, State& out) const {
        const Eigen::Index nr = h.rows();
        const Eigen::Index m = s.a.rows();
        if (m + nr > n_) return false;
        const CMatrix hh = h * h.adjoint();
        const double scale = hh.real().trace();
        if (!(scale > 0.0)) return false;
        out.members = s.members;
        out.offsets = s.offsets;
        if (member >= 0) {
            out.members.push_back(member);
            out.offsets.push_back(m);
        }
        out.a.resize(m + nr, n_);
        if (m) out.a.topRows(m) = s.a;
        out.a.bottomRows(nr) = h;
        if (m == 0) {
            Eigen::LLT<CMatrix> llt(hh);
            if (llt.info() != Eigen::Success || !well_conditioned(hh, scale)) return false;
            out.ginv = llt.solve(CMatrix::Identity(nr, nr));
            out.pinv = h.adjoint() * out.ginv;
            return true;
        }
        const CMatrix b = s.a * h.adjoint(); // m x nr
        const CMatrix x = s.ginv * b;
        CMatrix schur = hh - b.adjoint() * x;
        schur = 0.5 * (schur + schur.adjoint()).eval();
        if (!well_conditioned(schur, scale)) return false;
        Eigen::LLT<CMatrix> llt(schur);
        if (llt.info() != Eigen::Success) return false;
        const CMatrix sinv = llt.solve(CMatrix::Identity(nr, nr));
        const CMatrix xs = x * sinv;
        out.ginv.resize(m + nr, m + nr);
        out.ginv.topLeftCorner(m, m) = s.ginv + xs * x.adjoint();
        out.ginv.topRightCorner(m, nr) = -xs;
        out.ginv.bottomLeftCorner(nr, m) = -xs.adjoint();
        out.ginv.bottomRightCorner(nr, nr) = sinv;
        const CMatrix y = s.pinv * b - h.adjoint(); // n x nr
        const CMatrix ys = y * sinv;
        out.pinv.resize(n_, m + nr);
        out.pinv.leftCols(m) = s.pinv + ys * x.adjoint();
        out.pinv.rightCols(nr) = -ys;
        return true;
    }

    static bool well_conditioned(const CMatrix& s, double scale) {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(s, Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff() > linalg::kRankTolerance * scale;
    }

    std::optional<SetRates> evaluate(const State& s) const {
        return evaluate_blocks(s.members, [&](std::size_t j) {
            const Eigen::Index o = s.offsets[j];
            const Eigen::Index nr = channels_[s.members[j]].rows();
            return std::pair<CMatrix, CMatrix>{s.ginv.block(o, o, nr, nr), s.pinv.middleCols(o, nr)};
        });
    }

    /// SWF rates from each member's block of (A A*)^-1 and columns of A* (A A*)^-1.
    template <class Blocks>
    std::optional<SetRates> evaluate_blocks(const std::vector<int>& members, Blocks&& blocks) const {
        SetRates out;
        if (members.empty()) return out;
        const int num_bts = static_cast<int>(n_ / n_t_);
        Eigen::Index streams = 0;
        for (int k : members) streams += channels_[k].rows();
        RVector gains(streams);
        RMatrix w(num_bts, streams);
        Eigen::Index col = 0;
        for (std::size_t j = 0; j < members.size(); ++j) {
            const Eigen::Index nr = channels_[members[j]].rows();
            const auto [g, pc] = blocks(j);
            Eigen::SelfAdjointEigenSolver<CMatrix> es(g);
            const RVector& ev = es.eigenvalues();
            if (!(ev.minCoeff() > 0.0)) return std::nullopt;
            const CMatrix t = pc * es.eigenvectors() * ev.array().rsqrt().matrix().asDiagonal();
            for (Eigen::Index l = 0; l < nr; ++l, ++col) {
                gains(col) = 1.0 / ev(l);
                for (int b = 0; b < num_bts; ++b) w(b, col) = t.col(l).segment(b * n_t_, n_t_).squaredNorm();
            }
        }
        const power::WaterfillResult wf = power::waterfill(gains, num_bts * limit_);
        const power::ScaledAllocation sc = power::scale_to_pbpc(wf.power, w, limit_);
        col = 0;
        for (std::size_t j = 0; j < members.size(); ++j) {
            const Eigen::Index nr = channels_[members[j]].rows();
            double r = 0.0;
            for (Eigen::Index l = 0; l < nr; ++l, ++col) r += std::log2(1.0 + gains(col) * sc.power(col));
            r /= num_bts;
            out.rates.push_back(r);
            out.metric += weights_[members[j]] * r;
        }
        return out;
    }

    std::span<const CMatrix> channels_;
    std::span<const double> weights_;
    int n_t_;
    double limit_;
    Eigen::Index n_ = 0;
    State state_;
};

/// Greedy BD + SWF scheduling over whitened channels. Returns positions into `channels`.
inline Selection schedule_bd_swf(std::span<const CMatrix> channels, std::span<const double> weights, int capacity,
                                 int n_t, double bts_limit, std::span<const CMatrix> protected_channels = {}) {
    BdSwfEngine engine(channels, weights, n_t, bts_limit, protected_channels);
    std::vector<int> cands(channels.size());
    for (std::size_t i = 0; i < cands.size(); ++i) cands[i] = static_cast<int>(i);
    return detail::greedy(
        cands, capacity, [&](int k) { return engine.try_add(k); }, [&](int k) { engine.commit(k); });
}

} // namespace clusterbd::scheduling
