#pragma once

// Monte-carlo engine: configuration, the per-drop simulator shared by every
// experiment, the five experiments and CSV output.

#include "clusterbd/channel.hpp"
#include "clusterbd/evaluation.hpp"
#include "clusterbd/geometry.hpp"
#include "clusterbd/power.hpp"
#include "clusterbd/precoding.hpp"
#include "clusterbd/random.hpp"
#include "clusterbd/scheduling.hpp"
#include "clusterbd/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace clusterbd::harness {

inline constexpr const char* kVersion = "1.0.0";

enum class System { DPC_TPC, BD_TPC, BD_OPT, BD_US, BD_SWF, TDMA, INTERCELL_BD };

inline std::string to_string(System s) {
    switch (s) {
    case System::DPC_TPC: return "DPC-TPC";
    case System::BD_TPC: return "BD-TPC";
    case System::BD_OPT: return "BD-OPT";
    case System::BD_US: return "BD-US";
    case System::BD_SWF: return "BD-SWF";
    case System::TDMA: return "TDMA";
    case System::INTERCELL_BD: return "Intercell-BD";
    }
    return "?";
}

inline System parse_system(const std::string& s) {
    for (System x : {System::DPC_TPC, System::BD_TPC, System::BD_OPT, System::BD_US, System::BD_SWF, System::TDMA,
                     System::INTERCELL_BD})
        if (to_string(x) == s) return x;
    throw std::invalid_argument("unknown system '" + s + "'");
}

inline bool is_bd(System s) {
    return s == System::BD_TPC || s == System::BD_OPT || s == System::BD_US || s == System::BD_SWF;
}

inline power::Scheme scheme_of(System s) {
    switch (s) {
    case System::BD_TPC: return power::Scheme::TPC;
    case System::BD_OPT: return power::Scheme::OPT;
    case System::BD_US: return power::Scheme::US;
    default: return power::Scheme::SWF;
    }
}

inline System bd_system(power::Scheme s) {
    switch (s) {
    case power::Scheme::OPT: return System::BD_OPT;
    case power::Scheme::US: return System::BD_US;
    case power::Scheme::TPC: return System::BD_TPC;
    default: return System::BD_SWF;
    }
}

struct SimConfig {
    // layout
    int cluster_size = 3;
    int tiers = 1;
    double cell_radius = 1.0;
    // link budget
    channel::LinkBudget budget;
    // users and coordination
    int users_per_cluster = 30;
    int users_per_cell = 10; // cluster-size sweep: K = users_per_cell * B
    double dc_ratio = 0.35;
    bool coordination = true;
    scheduling::Metric scheduler = scheduling::Metric::PF;
    power::Scheme scheme = power::Scheme::SWF;
    double pf_window = scheduling::kPfWindow;
    double pf_initial = scheduling::kPfInitialAverage;
    bool helper_load = true; // helping clusters spend degrees of freedom on neighbours' edge users
    std::vector<System> systems{System::BD_SWF};
    // trials
    int drops = 20;
    int fades = 100;
    std::uint64_t seed = 1;
    // sweeps
    double alpha = 0.5;
    double dc_step = 0.05;
    std::vector<int> cluster_sizes{1, 3, 7, 19};
    std::vector<int> users_sweep{2, 4, 6, 8, 10, 12};
    std::vector<double> mse_db{-std::numeric_limits<double>::infinity()};
    std::vector<double> cdf_levels;
    // execution
    bool deterministic = false;
    int threads = 0; // 0: hardware concurrency

    void validate() const {
        (void)geometry::cluster_shape(cluster_size);
        for (int b : cluster_sizes) (void)geometry::cluster_shape(b);
        budget.validate();
        if (tiers < 0) throw std::invalid_argument("tiers must be non-negative");
        if (!(cell_radius > 0.0)) throw std::invalid_argument("cell radius must be positive");
        if (users_per_cluster < 1 || users_per_cell < 1) throw std::invalid_argument("user counts must be at least 1");
        if (drops < 1 || fades < 1) throw std::invalid_argument("drops and fades must be at least 1");
        if (dc_ratio < 0.0 || dc_ratio >= 1.0) throw std::invalid_argument("dc_ratio must lie in [0, 1)");
        if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0, 1]");
        if (!(dc_step > 0.0 && dc_step < 1.0)) throw std::invalid_argument("dc_step must lie in (0, 1)");
        if (!(pf_window >= 1.0) || !(pf_initial > 0.0)) throw std::invalid_argument("invalid PF parameters");
        if (systems.empty()) throw std::invalid_argument("at least one system is required");
        for (int k : users_sweep)
            if (k < 1) throw std::invalid_argument("users_sweep entries must be at least 1");
        for (double m : mse_db)
            if (std::isnan(m) || m == std::numeric_limits<double>::infinity())
                throw std::invalid_argument("mse_db entries must be finite or -inf");
        for (double p : cdf_levels)
            if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("cdf levels must lie in (0, 1]");
        if (threads < 0) throw std::invalid_argument("threads must be non-negative");
    }
};

/// Defaults of each experiment (the paper's simulation settings at desk scale).
inline SimConfig preset(const std::string& experiment) {
    SimConfig c;
    if (experiment == "coord-distance") {
        c.users_per_cluster = 30;
        c.scheduler = scheduling::Metric::PF;
        c.systems = {System::BD_SWF};
    } else if (experiment == "cluster-size") {
        c.scheduler = scheduling::Metric::PF;
        c.systems = {System::BD_SWF};
    } else if (experiment == "sum-rates") {
        c.scheduler = scheduling::Metric::MSR;
        c.coordination = false;
        c.systems = {System::DPC_TPC, System::BD_TPC, System::BD_OPT, System::BD_US,
                     System::BD_SWF,  System::TDMA,   System::INTERCELL_BD};
    } else if (experiment == "user-cdf") {
        c.users_per_cluster = 30;
        c.scheduler = scheduling::Metric::PF;
        c.systems = {System::BD_SWF, System::TDMA, System::INTERCELL_BD};
        for (int i = 1; i <= 20; ++i) c.cdf_levels.push_back(0.05 * i);
    } else if (experiment == "csi-error") {
        c.users_per_cluster = 10;
        c.scheduler = scheduling::Metric::MSR;
        c.coordination = false;
        c.systems = {System::BD_TPC, System::BD_OPT, System::BD_US, System::BD_SWF, System::TDMA, System::INTERCELL_BD};
        c.mse_db = {-std::numeric_limits<double>::infinity(), -20.0, -15.0, -10.0, -5.0};
    } else {
        throw std::invalid_argument("unknown experiment '" + experiment + "'");
    }
    return c;
}

namespace detail {

inline double json_mse(const nlohmann::json& v) {
    if (v.is_null()) return -std::numeric_limits<double>::infinity();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "-inf" || s == "off" || s == "disabled") return -std::numeric_limits<double>::infinity();
        throw std::invalid_argument("mse_db entry '" + s + "' is not a number");
    }
    return v.get<double>();
}

} // namespace detail

/// Overrides fields from a JSON object; unknown keys are rejected.
inline void apply_json(SimConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "cluster_size") c.cluster_size = v.get<int>();
        else if (key == "tiers") c.tiers = v.get<int>();
        else if (key == "cell_radius") c.cell_radius = v.get<double>();
        else if (key == "pathloss_exponent") c.budget.pathloss_exponent = v.get<double>();
        else if (key == "shadowing_std_db") c.budget.shadowing_std_db = v.get<double>();
        else if (key == "edge_snr_db") c.budget.edge_snr_db = v.get<double>();
        else if (key == "n_t") c.budget.n_t = v.get<int>();
        else if (key == "n_r") c.budget.n_r = v.get<int>();
        else if (key == "snr_per_antenna") c.budget.snr_per_antenna = v.get<bool>();
        else if (key == "users_per_cluster") c.users_per_cluster = v.get<int>();
        else if (key == "users_per_cell") c.users_per_cell = v.get<int>();
        else if (key == "dc_ratio") c.dc_ratio = v.get<double>();
        else if (key == "coordination") c.coordination = v.get<bool>();
        else if (key == "scheduler") {
            const auto s = v.get<std::string>();
            if (s == "MSR") c.scheduler = scheduling::Metric::MSR;
            else if (s == "PF") c.scheduler = scheduling::Metric::PF;
            else throw std::invalid_argument("scheduler must be MSR or PF");
        } else if (key == "power_scheme") {
            const auto s = v.get<std::string>();
            if (s == "OPT") c.scheme = power::Scheme::OPT;
            else if (s == "US") c.scheme = power::Scheme::US;
            else if (s == "SWF") c.scheme = power::Scheme::SWF;
            else throw std::invalid_argument("power_scheme must be OPT, US or SWF");
        } else if (key == "pf_window") c.pf_window = v.get<double>();
        else if (key == "pf_initial") c.pf_initial = v.get<double>();
        else if (key == "helper_load") c.helper_load = v.get<bool>();
        else if (key == "systems") {
            c.systems.clear();
            for (const auto& s : v) c.systems.push_back(parse_system(s.get<std::string>()));
        } else if (key == "drops") c.drops = v.get<int>();
        else if (key == "fades") c.fades = v.get<int>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "alpha") c.alpha = v.get<double>();
        else if (key == "dc_step") c.dc_step = v.get<double>();
        else if (key == "cluster_sizes") c.cluster_sizes = v.get<std::vector<int>>();
        else if (key == "users_sweep") c.users_sweep = v.get<std::vector<int>>();
        else if (key == "mse_db") {
            c.mse_db.clear();
            for (const auto& m : v) c.mse_db.push_back(detail::json_mse(m));
        } else if (key == "cdf_levels") c.cdf_levels = v.get<std::vector<double>>();
        else if (key == "deterministic") c.deterministic = v.get<bool>();
        else if (key == "threads") c.threads = v.get<int>();
        else throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

inline void load_config_file(SimConfig& c, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("malformed config file '" + path + "': " + e.what());
    }
    try {
        apply_json(c, j);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config file '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Per-drop simulation

/// One output series: a system evaluated on one coordination-distance view.
struct Lane {
    std::string label;
    System system = System::BD_SWF;
    int view = 0;
};

struct DropPlan {
    int users_per_cluster = 30;
    std::vector<double> view_dc{0.0}; // coordination distance of each view (km)
    std::vector<Lane> lanes;
    std::vector<double> mse_db{-std::numeric_limits<double>::infinity()};
};

struct LaneStats {
    std::vector<int> users;             // drop indices served by the lane
    std::vector<int> serving;           // N_c per user
    std::vector<double> user_mean_rate; // mean over fades
    double sum_rate = 0.0;              // mean per-cell sum rate
    double effective_sum_rate = 0.0;    // mean of sum_k R_k / N_c,k
    double min_rate = 0.0;              // min over users of the mean rate
};

struct DropResult {
    std::uint64_t seed = 0;
    int attempts = 0;
    bool failed = false;
    std::string error;
    std::vector<std::vector<LaneStats>> stats; // [mse level][lane]
    std::vector<std::uint64_t> channel_hash;   // per fade
};

inline std::uint64_t hash_channels(const channel::ChannelSet& cs) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    for (std::size_t i = 0; i < cs.h.size(); ++i) {
        mix(&cs.users[i], sizeof(int));
        mix(cs.h[i].data(), sizeof(cdouble) * static_cast<std::size_t>(cs.h[i].size()));
    }
    return h;
}

namespace detail {

inline constexpr int kMeasured = 0; // the central cluster is the measured one

struct View {
    geometry::UserDrop drop;
    std::vector<int> pool;                  // users whose home is the measured cluster
    std::vector<std::vector<int>> excluded; // clusters whose BTSs do not interfere, per pool user
    std::vector<int> guests;                // neighbours' edge users the measured cluster helps
    std::vector<std::vector<int>> guest_excluded;
};

/// Users that can belong to the measured cluster's pool for coordination distances up to `max_dc`.
inline std::vector<int> relevant_users(const geometry::NetworkLayout& layout, const geometry::UserDrop& drop, double max_dc) {
    std::vector<int> out;
    for (int k = 0; k < drop.size(); ++k) {
        if (drop.cluster_of_user[k] == kMeasured ||
            (max_dc > 0.0 && geometry::boundary_distance(layout.cluster_boundaries[kMeasured], drop.positions[k]) <= max_dc))
            out.push_back(k);
    }
    return out;
}

inline View make_view(const geometry::NetworkLayout& layout, const geometry::UserDrop& raw, std::span<const int> relevant,
                      const channel::ChannelSet& mean, double bts_power, double dc) {
    View v;
    v.drop = geometry::classify_users(layout, raw, dc);
    for (int k : relevant) {
        auto cands = v.drop.candidates(k);
        if (v.drop.class_of_user[k] == geometry::UserClass::Edge && cands.size() > 1 &&
            std::binary_search(cands.begin(), cands.end(), kMeasured)) {
            const CMatrix w = channel::whiten(channel::interference_covariance(mean, layout, k, cands, bts_power));
            geometry::assign_home(v.drop, k, channel::select_home_cluster(mean, layout, k, w, cands));
        }
        if (v.drop.home_cluster[k] == kMeasured) {
            v.pool.push_back(k);
            v.excluded.push_back(v.drop.candidates(k));
        } else if (v.drop.class_of_user[k] == geometry::UserClass::Edge) {
            auto c = v.drop.candidates(k);
            if (std::binary_search(c.begin(), c.end(), kMeasured)) {
                v.guests.push_back(k);
                v.guest_excluded.push_back(std::move(c));
            }
        }
    }
    return v;
}

struct LaneState {
    std::vector<double> average;  // PF averages
    std::vector<double> rate_sum; // per user
    double sum = 0.0;
    double effective = 0.0;
    double scheduled = 0.0; // users served so far, summed over slots
    int slots = 0;
};

inline std::vector<CMatrix> pick(const std::vector<CMatrix>& all, std::span<const int> idx) {
    std::vector<CMatrix> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(all[i]);
    return out;
}

} // namespace detail

/// Simulates one user drop over the given fades for every lane and CSI-error level.
inline DropResult simulate_drop(const SimConfig& cfg, const geometry::NetworkLayout& layout, const DropPlan& plan,
                                std::uint64_t drop_seed, std::span<const std::uint64_t> fade_seeds) {
    const channel::LinkBudget& lb = cfg.budget;
    const int b = layout.cluster_size;
    const double p = lb.bts_power(layout.cell_radius);
    const int capacity = precoding::max_users(b, lb.n_t, lb.n_r);
    const int single_capacity = std::max(1, precoding::max_users(1, lb.n_t, lb.n_r));
    const bool pf = cfg.scheduler == scheduling::Metric::PF;

    for (const Lane& lane : plan.lanes) {
        if (lane.view < 0 || lane.view >= static_cast<int>(plan.view_dc.size())) throw std::invalid_argument("lane view out of range");
        if ((lane.system == System::TDMA || lane.system == System::INTERCELL_BD || lane.system == System::DPC_TPC) &&
            plan.view_dc[lane.view] != 0.0)
            throw std::invalid_argument(to_string(lane.system) + " runs without inter-cluster coordination");
    }

    const geometry::UserDrop raw = geometry::drop_users(layout, plan.users_per_cluster, derive_seed(drop_seed, {1}));
    const double max_dc = *std::max_element(plan.view_dc.begin(), plan.view_dc.end());
    const std::vector<int> relevant = detail::relevant_users(layout, raw, max_dc);
    const channel::LargeScaleGains large = channel::sample_large_scale(layout, raw, lb, relevant, derive_seed(drop_seed, {2}));
    const channel::ChannelSet mean = channel::mean_channels(large, raw.size(), lb);

    std::vector<detail::View> views;
    for (double dc : plan.view_dc) views.push_back(detail::make_view(layout, raw, relevant, mean, p, dc));

    const std::size_t n_mse = plan.mse_db.size();
    const std::size_t n_lanes = plan.lanes.size();
    std::vector<std::vector<detail::LaneState>> state(n_mse, std::vector<detail::LaneState>(n_lanes));
    for (auto& row : state)
        for (std::size_t l = 0; l < n_lanes; ++l) {
            const auto n = views[plan.lanes[l].view].pool.size();
            row[l].average.assign(n, cfg.pf_initial);
            row[l].rate_sum.assign(n, 0.0);
        }

    DropResult result;
    result.seed = drop_seed;
    const int measured_first = layout.first_cell(detail::kMeasured);

    for (std::size_t f = 0; f < fade_seeds.size(); ++f) {
        const channel::ChannelSet cs = channel::sample_fading(large, raw.size(), lb, fade_seeds[f]);
        result.channel_hash.push_back(hash_channels(cs));
        const int active_bts = measured_first + static_cast<int>(f % static_cast<std::size_t>(b));

        // Whitening filters and whitened true channels per view.
        std::vector<std::vector<CMatrix>> w(views.size()), h_true(views.size());
        for (std::size_t v = 0; v < views.size(); ++v)
            for (std::size_t i = 0; i < views[v].pool.size(); ++i) {
                const int k = views[v].pool[i];
                w[v].push_back(channel::whiten(channel::interference_covariance(cs, layout, k, views[v].excluded[i], p)));
                h_true[v].push_back(w[v][i] * cs.aggregate(k, layout, detail::kMeasured));
            }

        // Neighbours' edge users: whitened channels towards the measured cluster and
        // one activity draw per user, shared by every lane and CSI level of the fade.
        std::vector<std::vector<CMatrix>> wg(views.size()), g_true(views.size());
        std::vector<std::vector<double>> g_draw(views.size());
        if (cfg.helper_load)
            for (std::size_t v = 0; v < views.size(); ++v)
                for (std::size_t i = 0; i < views[v].guests.size(); ++i) {
                    const int k = views[v].guests[i];
                    wg[v].push_back(channel::whiten(channel::interference_covariance(cs, layout, k, views[v].guest_excluded[i], p)));
                    g_true[v].push_back(wg[v][i] * cs.aggregate(k, layout, detail::kMeasured));
                    Rng r(derive_seed(fade_seeds[f], {5, static_cast<std::uint64_t>(k)}));
                    g_draw[v].push_back(std::uniform_real_distribution<double>(0.0, 1.0)(r));
                }

        for (std::size_t e = 0; e < n_mse; ++e) {
            const bool perfect = std::isinf(plan.mse_db[e]) && plan.mse_db[e] < 0.0;
            channel::ChannelSet est_cs;
            if (!perfect) est_cs = channel::add_csi_error(cs, plan.mse_db[e], derive_seed(fade_seeds[f], {4}));
            const channel::ChannelSet& known = perfect ? cs : est_cs;

            std::vector<std::vector<CMatrix>> h_est(views.size()), g_est(views.size());
            for (std::size_t v = 0; v < views.size(); ++v) {
                if (perfect) {
                    h_est[v] = h_true[v];
                    g_est[v] = g_true[v];
                    continue;
                }
                for (std::size_t i = 0; i < views[v].pool.size(); ++i)
                    h_est[v].push_back(w[v][i] * known.aggregate(views[v].pool[i], layout, detail::kMeasured));
                for (std::size_t i = 0; i < wg[v].size(); ++i)
                    g_est[v].push_back(wg[v][i] * known.aggregate(views[v].guests[i], layout, detail::kMeasured));
            }

            // Under MSR every BD lane of a view shares one schedule and one set of precoders.
            struct Shared {
                std::vector<int> selected;
                precoding::PrecodingSolution sol;
            };
            std::map<int, Shared> msr_cache;

            for (std::size_t l = 0; l < n_lanes; ++l) {
                const Lane& lane = plan.lanes[l];
                const detail::View& view = views[lane.view];
                detail::LaneState& st = state[e][l];
                const std::size_t n = view.pool.size();
                std::vector<double> rates(n, 0.0);
                std::vector<double> weights(n, 1.0);
                if (pf)
                    for (std::size_t i = 0; i < n; ++i) weights[i] = 1.0 / st.average[i];

                if (n == 0) {
                    // nothing to serve
                } else if (is_bd(lane.system)) {
                    Shared local;
                    Shared* sh = nullptr;
                    if (!pf) {
                        auto it = msr_cache.find(lane.view);
                        if (it != msr_cache.end()) sh = &it->second;
                    }
                    if (!sh) {
                        // A neighbour schedules each of its users about as often as this
                        // cluster schedules its own; the active ones must be nulled here.
                        std::vector<CMatrix> guarded;
                        const double served = st.slots ? st.scheduled / st.slots : capacity;
                        const double q = std::min(1.0, served / static_cast<double>(n));
                        for (std::size_t i = 0; i < g_est[lane.view].size(); ++i)
                            if (g_draw[lane.view][i] < q) guarded.push_back(g_est[lane.view][i]);
                        const auto room = precoding::max_users_helper(b, lb.n_t, lb.n_r, static_cast<int>(guarded.size()));
                        if (!room.saturated) {
                            const auto sel =
                                scheduling::schedule_bd_swf(h_est[lane.view], weights, room.users, lb.n_t, p, guarded);
                            local.selected = sel.users;
                            std::sort(local.selected.begin(), local.selected.end());
                        }
                        const auto chans = detail::pick(h_est[lane.view], local.selected);
                        if (!chans.empty()) local.sol = precoding::bd_precoders_fast(chans, guarded, lb.n_t);
                        if (!pf) sh = &(msr_cache[lane.view] = std::move(local));
                        else sh = &local;
                    }
                    if (!sh->selected.empty()) {
                        const auto alloc = power::allocate(sh->sol, scheme_of(lane.system), p);
                        std::vector<double> r;
                        if (perfect) {
                            r = evaluation::user_rates(sh->sol, alloc.power);
                        } else {
                            const auto truth = detail::pick(h_true[lane.view], sh->selected);
                            r = evaluation::user_rates_residual(truth, sh->sol, alloc.power);
                        }
                        for (std::size_t j = 0; j < sh->selected.size(); ++j) rates[sh->selected[j]] = r[j];
                    }
                } else if (lane.system == System::DPC_TPC) {
                    const auto d = power::dpc_sum_capacity_tpc(h_true[lane.view], b * p, b);
                    st.sum += d.rate;
                    st.effective += d.rate;
                    continue;
                } else {
                    // One BTS of the cluster is active; its own users are the candidates.
                    std::vector<int> cands;
                    std::vector<CMatrix> link_true(n), link_est(n);
                    for (std::size_t i = 0; i < n; ++i) {
                        const int k = view.pool[i];
                        if (view.drop.cell_of_user[k] != active_bts) continue;
                        cands.push_back(static_cast<int>(i));
                        link_true[i] = w[lane.view][i] * cs.block(k, active_bts);
                        link_est[i] = perfect ? link_true[i] : CMatrix(w[lane.view][i] * known.block(k, active_bts));
                    }
                    if (lane.system == System::TDMA) {
                        const auto sel = scheduling::greedy_select(
                            cands,
                            [&](const std::vector<int>& s) -> std::optional<double> {
                                return weights[s[0]] * evaluation::baseline_tdma_intercell(link_est[s[0]], p, b);
                            },
                            1);
                        for (int i : sel.users)
                            rates[i] = (perfect ? evaluation::waterfilled_link_rate(link_true[i], p)
                                                : evaluation::mismatched_link_rate(link_true[i], link_est[i], p)) /
                                       b;
                    } else {
                        const auto sel = scheduling::greedy_select(
                            cands,
                            [&](const std::vector<int>& s) -> std::optional<double> {
                                const auto chans = detail::pick(link_est, s);
                                const auto r = evaluation::intercell_bd_rates(chans, lb.n_t, p, b);
                                double m = 0.0;
                                for (std::size_t j = 0; j < s.size(); ++j) m += weights[s[j]] * r[j];
                                return m;
                            },
                            single_capacity);
                        std::vector<int> chosen = sel.users;
                        std::sort(chosen.begin(), chosen.end());
                        if (!chosen.empty()) {
                            const auto est = detail::pick(link_est, chosen);
                            const auto sol = precoding::bd_precoders_fast(est, {}, lb.n_t);
                            const RVector pw = power::waterfill(sol.stream_gains(), p).power;
                            std::vector<double> r;
                            if (perfect) {
                                r = evaluation::user_rates(sol, pw);
                            } else {
                                const auto truth = detail::pick(link_true, chosen);
                                r = evaluation::user_rates_residual(truth, sol, pw);
                            }
                            for (std::size_t j = 0; j < chosen.size(); ++j) rates[chosen[j]] = r[j] / b;
                        }
                    }
                }

                ++st.slots;
                for (std::size_t i = 0; i < n; ++i) {
                    if (rates[i] > 0.0) st.scheduled += 1.0;
                    st.rate_sum[i] += rates[i];
                    st.sum += rates[i];
                    st.effective += rates[i] / view.drop.serving_clusters(view.pool[i]);
                }
                if (pf) st.average = scheduling::update_pf_averages(st.average, rates, cfg.pf_window);
            }
        }
    }

    const double nf = static_cast<double>(fade_seeds.size());
    result.stats.assign(n_mse, std::vector<LaneStats>(n_lanes));
    for (std::size_t e = 0; e < n_mse; ++e)
        for (std::size_t l = 0; l < n_lanes; ++l) {
            const detail::View& view = views[plan.lanes[l].view];
            const detail::LaneState& st = state[e][l];
            LaneStats& out = result.stats[e][l];
            out.users = view.pool;
            for (int k : view.pool) out.serving.push_back(view.drop.serving_clusters(k));
            out.sum_rate = st.sum / nf;
            out.effective_sum_rate = st.effective / nf;
            if (plan.lanes[l].system == System::DPC_TPC) continue;
            for (double s : st.rate_sum) out.user_mean_rate.push_back(s / nf);
            out.min_rate = out.user_mean_rate.empty() ? 0.0 : *std::min_element(out.user_mean_rate.begin(), out.user_mean_rate.end());
        }
    return result;
}

inline std::uint64_t drop_seed(std::uint64_t master, int drop) { return derive_seed(master, {static_cast<std::uint64_t>(drop)}); }

inline std::vector<std::uint64_t> fade_seeds(std::uint64_t drop, int fades) {
    std::vector<std::uint64_t> s(static_cast<std::size_t>(fades));
    for (int f = 0; f < fades; ++f) s[f] = derive_seed(drop, {3, static_cast<std::uint64_t>(f)});
    return s;
}

inline constexpr int kMaxRetries = 3;

/// Runs a drop; on a numerical or scheduling failure retries up to three times
/// with derived seeds, then reports the drop as failed.
inline DropResult simulate_drop_with_retry(const SimConfig& cfg, const geometry::NetworkLayout& layout,
                                           const DropPlan& plan, std::uint64_t seed, int fades) {
    std::string last;
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
        const std::uint64_t s = attempt == 0 ? seed : derive_seed(seed, {99, static_cast<std::uint64_t>(attempt)});
        try {
            const auto fs = fade_seeds(s, fades);
            DropResult r = simulate_drop(cfg, layout, plan, s, fs);
            r.attempts = attempt + 1;
            return r;
        } catch (const SchedulingError& e) {
            last = e.what();
        } catch (const ConvergenceError& e) {
            last = e.what();
        } catch (const NotPositiveDefinite& e) {
            last = e.what();
        }
    }
    DropResult r;
    r.seed = seed;
    r.attempts = kMaxRetries + 1;
    r.failed = true;
    r.error = last;
    return r;
}

// ---------------------------------------------------------------------------
// Single trial

struct RateReport {
    std::string system;
    std::vector<int> users;
    std::vector<double> user_rates;
    std::vector<int> serving;
    double per_cell_sum_rate = 0.0;
    double effective_sum_rate = 0.0;
    double min_rate = 0.0;
    std::uint64_t drop_seed = 0;
    std::uint64_t fade_seed = 0;
    std::uint64_t channel_hash = 0;
};

/// One drop and one fading realization through every configured system, all on the same channels.
inline std::vector<RateReport> run_trial(const SimConfig& cfg, std::uint64_t drop, std::uint64_t fade) {
    cfg.validate();
    const auto layout = geometry::build_layout(cfg.cluster_size, cfg.tiers, cfg.cell_radius);
    DropPlan plan;
    plan.users_per_cluster = cfg.users_per_cluster;
    const double dc = cfg.coordination ? cfg.dc_ratio * cfg.cell_radius : 0.0;
    plan.view_dc = {dc, 0.0};
    for (System s : cfg.systems) plan.lanes.push_back({to_string(s), s, is_bd(s) ? 0 : 1});
    std::string last;
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
        const std::uint64_t d = attempt == 0 ? drop : derive_seed(drop, {99, static_cast<std::uint64_t>(attempt)});
        const std::uint64_t f = attempt == 0 ? fade : derive_seed(fade, {99, static_cast<std::uint64_t>(attempt)});
        const std::uint64_t fs[] = {f};
        try {
            const DropResult r = simulate_drop(cfg, layout, plan, d, fs);
            std::vector<RateReport> out;
            for (std::size_t l = 0; l < plan.lanes.size(); ++l) {
                const LaneStats& s = r.stats[0][l];
                RateReport rep;
                rep.system = plan.lanes[l].label;
                rep.users = s.users;
                rep.user_rates = s.user_mean_rate;
                rep.serving = s.serving;
                rep.per_cell_sum_rate = s.sum_rate;
                rep.effective_sum_rate = s.effective_sum_rate;
                rep.min_rate = s.min_rate;
                rep.drop_seed = d;
                rep.fade_seed = f;
                rep.channel_hash = r.channel_hash.at(0);
                out.push_back(std::move(rep));
            }
            return out;
        } catch (const SchedulingError& e) {
            last = e.what();
        } catch (const ConvergenceError& e) {
            last = e.what();
        } catch (const NotPositiveDefinite& e) {
            last = e.what();
        }
    }
    throw std::runtime_error("trial failed after " + std::to_string(kMaxRetries) + " retries: " + last);
}

// ---------------------------------------------------------------------------
// Aggregation

struct Row {
    std::string experiment;
    std::string system;
    std::string param_name;
    double param_value = 0.0;
    std::string metric;
    double mean = 0.0;
    double stderr_ = 0.0;
    long n = 0;
    std::vector<double> samples; // per-drop values in drop order
};

struct ExperimentResult {
    std::string name;
    SimConfig config;
    std::vector<Row> rows;
    std::map<std::string, std::vector<double>> distributions; // pooled per-user samples
    int failed_drops = 0;
    double wall_seconds = 0.0;

    const Row& row(const std::string& system, const std::string& metric, double param) const {
        for (const auto& r : rows)
            if (r.system == system && r.metric == metric && (r.param_value == param || std::abs(r.param_value - param) < 1e-9))
                return r;
        throw std::out_of_range("no row " + system + "/" + metric + " at " + std::to_string(param));
    }
};

/// Mean and standard error, accumulated in the given order.
inline std::pair<double, double> mean_stderr(std::span<const double> values, std::span<const int> order) {
    double mean = 0.0, m2 = 0.0;
    long n = 0;
    for (int i : order) {
        const double x = values[i];
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    if (n == 0) return {std::nan(""), std::nan("")};
    const double se = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
    return {mean, se};
}

namespace detail {

/// Runs `work(i)` for i in [0, n) on a small thread pool and returns the
/// completion order (index order when `deterministic`).
template <class Work>
std::vector<int> parallel_for(int n, int threads, bool deterministic, Work&& work) {
    int t = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    t = std::min(t, std::max(1, n));
    std::vector<int> order;
    std::mutex mu;
    std::atomic<int> next{0};
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            work(i);
            std::lock_guard lock(mu);
            order.push_back(i);
        }
    };
    if (t == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < t; ++i) pool.emplace_back(worker);
    }
    if (deterministic) std::sort(order.begin(), order.end());
    return order;
}

struct DropTable {
    std::vector<DropResult> drops;
    std::vector<int> order; // reduction order over successful drops
    int failed = 0;
};

inline DropTable run_drops(const SimConfig& cfg, const geometry::NetworkLayout& layout, const DropPlan& plan, int drops,
                           int fades, std::uint64_t master) {
    DropTable t;
    t.drops.resize(static_cast<std::size_t>(drops));
    const auto order = parallel_for(drops, cfg.threads, cfg.deterministic, [&](int i) {
        t.drops[i] = simulate_drop_with_retry(cfg, layout, plan, drop_seed(master, i), fades);
    });
    for (int i : order) {
        if (t.drops[i].failed) ++t.failed;
        else t.order.push_back(i);
    }
    return t;
}

template <class Get>
Row make_row(const std::string& experiment, const std::string& system, const std::string& param_name, double param,
             const std::string& metric, const DropTable& t, Get&& get) {
    Row r{experiment, system, param_name, param, metric};
    std::vector<double> values(t.drops.size(), 0.0);
    for (int i : t.order) values[i] = get(t.drops[i]);
    const auto [m, se] = mean_stderr(values, t.order);
    r.mean = m;
    r.stderr_ = se;
    r.n = static_cast<long>(t.order.size());
    std::vector<int> sorted = t.order;
    std::sort(sorted.begin(), sorted.end());
    for (int i : sorted) r.samples.push_back(values[i]);
    return r;
}

inline geometry::NetworkLayout layout_for(const SimConfig& c, int cluster_size) {
    return geometry::build_layout(cluster_size, c.tiers, c.cell_radius);
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

} // namespace detail

// ---------------------------------------------------------------------------
// Experiments

/// Coordination-distance grid 0, step, 2 step, ... below R, as fractions of R.
inline std::vector<double> dc_grid(double step) {
    std::vector<double> g;
    for (int i = 0;; ++i) {
        const double x = i * step;
        if (x >= 1.0 - 1e-9) break;
        g.push_back(std::round(x * 1e9) / 1e9);
    }
    return g;
}

/// Mean minimum rate, effective sum rate and utility over the D_c grid, on common channels.
inline ExperimentResult experiment_coordination_distance(const SimConfig& c) {
    c.validate();
    detail::Stopwatch clock;
    ExperimentResult res{"coord-distance", c};
    const auto layout = detail::layout_for(c, c.cluster_size);
    const auto grid = dc_grid(c.dc_step);
    DropPlan plan;
    plan.users_per_cluster = c.users_per_cluster;
    const std::string label = to_string(bd_system(c.scheme));
    plan.view_dc.clear();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        plan.view_dc.push_back(grid[i] * c.cell_radius);
        plan.lanes.push_back({label, bd_system(c.scheme), static_cast<int>(i)});
    }
    const auto t = detail::run_drops(c, layout, plan, c.drops, c.fades, c.seed);
    res.failed_drops = t.failed;
    std::vector<double> rmin, rsum;
    std::vector<Row> rows;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        rows.push_back(detail::make_row(res.name, label, "dc_over_R", grid[i], "mean_min_rate", t,
                                        [&](const DropResult& d) { return d.stats[0][i].min_rate; }));
        rmin.push_back(rows.back().mean);
        rows.push_back(detail::make_row(res.name, label, "dc_over_R", grid[i], "effective_sum_rate", t,
                                        [&](const DropResult& d) { return d.stats[0][i].effective_sum_rate; }));
        rsum.push_back(rows.back().mean);
    }
    const auto u = evaluation::utility(rmin, rsum, c.alpha);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        res.rows.push_back(rows[2 * i]);
        res.rows.push_back(rows[2 * i + 1]);
        Row r{res.name, label, "dc_over_R", grid[i], "utility", u.values[i], 0.0, static_cast<long>(t.order.size())};
        res.rows.push_back(r);
    }
    res.wall_seconds = clock.seconds();
    return res;
}

/// Effective sum rate per cell for each cluster size at fixed D_c.
inline ExperimentResult experiment_cluster_size(const SimConfig& c) {
    c.validate();
    detail::Stopwatch clock;
    ExperimentResult res{"cluster-size", c};
    const std::string label = to_string(bd_system(c.scheme));
    for (int b : c.cluster_sizes) {
        const auto layout = detail::layout_for(c, b);
        DropPlan plan;
        plan.users_per_cluster = c.users_per_cell * b;
        plan.view_dc = {c.coordination ? c.dc_ratio * c.cell_radius : 0.0};
        plan.lanes = {{label, bd_system(c.scheme), 0}};
        const auto t = detail::run_drops(c, layout, plan, c.drops, c.fades, derive_seed(c.seed, {static_cast<std::uint64_t>(b)}));
        res.failed_drops += t.failed;
        res.rows.push_back(detail::make_row(res.name, label, "B", b, "effective_sum_rate", t,
                                            [](const DropResult& d) { return d.stats[0][0].effective_sum_rate; }));
        res.rows.push_back(detail::make_row(res.name, label, "B", b, "sum_rate", t,
                                            [](const DropResult& d) { return d.stats[0][0].sum_rate; }));
        res.rows.push_back(detail::make_row(res.name, label, "B", b, "mean_min_rate", t,
                                            [](const DropResult& d) { return d.stats[0][0].min_rate; }));
    }
    res.wall_seconds = clock.seconds();
    return res;
}

/// Per-cell sum rate of each system versus the number of users per cluster.
inline ExperimentResult experiment_sum_rates(const SimConfig& c) {
    c.validate();
    detail::Stopwatch clock;
    ExperimentResult res{"sum-rates", c};
    const auto layout = detail::layout_for(c, c.cluster_size);
    const double dc = c.coordination ? c.dc_ratio * c.cell_radius : 0.0;
    for (int k : c.users_sweep) {
        DropPlan plan;
        plan.users_per_cluster = k;
        plan.view_dc = {dc, 0.0};
        for (System s : c.systems) plan.lanes.push_back({to_string(s), s, is_bd(s) ? 0 : 1});
        const auto t = detail::run_drops(c, layout, plan, c.drops, c.fades, c.seed);
        res.failed_drops += t.failed;
        for (std::size_t l = 0; l < plan.lanes.size(); ++l)
            res.rows.push_back(detail::make_row(res.name, plan.lanes[l].label, "K", k, "sum_rate", t,
                                                [&](const DropResult& d) { return d.stats[0][l].sum_rate; }));
    }
    res.wall_seconds = clock.seconds();
    return res;
}

/// Distribution of per-user mean rates (BD with and without coordination and the intercell baselines).
inline ExperimentResult experiment_user_cdf(const SimConfig& c) {
    c.validate();
    detail::Stopwatch clock;
    ExperimentResult res{"user-cdf", c};
    const auto layout = detail::layout_for(c, c.cluster_size);
    DropPlan plan;
    plan.users_per_cluster = c.users_per_cluster;
    plan.view_dc = {c.dc_ratio * c.cell_radius, 0.0};
    for (System s : c.systems) {
        if (is_bd(s)) {
            plan.lanes.push_back({to_string(s) + " coordinated", s, 0});
            plan.lanes.push_back({to_string(s) + " uncoordinated", s, 1});
        } else {
            plan.lanes.push_back({to_string(s), s, 1});
        }
    }
    const auto t = detail::run_drops(c, layout, plan, c.drops, c.fades, c.seed);
    res.failed_drops = t.failed;
    std::vector<int> sorted = t.order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t l = 0; l < plan.lanes.size(); ++l) {
        if (plan.lanes[l].system == System::DPC_TPC) continue;
        std::vector<double> samples;
        for (int i : sorted)
            for (double r : t.drops[i].stats[0][l].user_mean_rate) samples.push_back(r);
        if (samples.empty()) continue;
        const evaluation::RateCdf cdf(samples);
        const long n = static_cast<long>(samples.size());
        for (double q : c.cdf_levels)
            res.rows.push_back({res.name, plan.lanes[l].label, "cdf", q, "rate_quantile", cdf.quantile(q), 0.0, n});
        res.rows.push_back({res.name, plan.lanes[l].label, "rate", 1.0, "fraction_above", 1.0 - cdf(1.0), 0.0, n});
        res.rows.push_back({res.name, plan.lanes[l].label, "rate", 2.0, "fraction_above", 1.0 - cdf(2.0), 0.0, n});
        res.distributions[plan.lanes[l].label] = std::move(samples);
    }
    res.wall_seconds = clock.seconds();
    return res;
}

/// Sum rates under channel estimation error, precoders from estimates, rates on true channels.
inline ExperimentResult experiment_csi_error(const SimConfig& c) {
    c.validate();
    detail::Stopwatch clock;
    ExperimentResult res{"csi-error", c};
    const auto layout = detail::layout_for(c, c.cluster_size);
    DropPlan plan;
    plan.users_per_cluster = c.users_per_cluster;
    plan.view_dc = {c.coordination ? c.dc_ratio * c.cell_radius : 0.0, 0.0};
    for (System s : c.systems) {
        if (s == System::DPC_TPC) throw std::invalid_argument("DPC-TPC is not evaluated under CSI error");
        plan.lanes.push_back({to_string(s), s, is_bd(s) ? 0 : 1});
    }
    plan.mse_db = c.mse_db;
    const auto t = detail::run_drops(c, layout, plan, c.drops, c.fades, c.seed);
    res.failed_drops = t.failed;
    for (std::size_t e = 0; e < plan.mse_db.size(); ++e)
        for (std::size_t l = 0; l < plan.lanes.size(); ++l)
            res.rows.push_back(detail::make_row(res.name, plan.lanes[l].label, "mse_db", plan.mse_db[e], "sum_rate", t,
                                                [&](const DropResult& d) { return d.stats[e][l].sum_rate; }));
    res.wall_seconds = clock.seconds();
    return res;
}

inline ExperimentResult run_experiment(const std::string& name, const SimConfig& c) {
    if (name == "coord-distance") return experiment_coordination_distance(c);
    if (name == "cluster-size") return experiment_cluster_size(c);
    if (name == "sum-rates") return experiment_sum_rates(c);
    if (name == "user-cdf") return experiment_user_cdf(c);
    if (name == "csi-error") return experiment_csi_error(c);
    throw std::invalid_argument("unknown experiment '" + name + "'");
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x < 0 ? "-inf" : "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

inline void write_csv(std::ostream& os, const ExperimentResult& r) {
    os << "experiment,system,param_name,param_value,metric,mean,stderr,n\n";
    for (const auto& row : r.rows)
        os << csv_field(row.experiment) << ',' << csv_field(row.system) << ',' << row.param_name << ','
           << format_number(row.param_value) << ',' << row.metric << ',' << format_number(row.mean) << ','
           << format_number(row.stderr_) << ',' << row.n << '\n';
}

} // namespace clusterbd::harness
