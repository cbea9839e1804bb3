#pragma once

// Hexagonal multi-cluster layout, user drops and interior/edge classification.
//
// Cells are flat-topped hexagons of vertex radius R addressed by axial
// coordinates (q, r); the cell centre is (1.5 R q, sqrt(3) R (r + q/2)).
// A cluster is a fixed shape of B cells translated over a lattice spanned by
// two vectors 60 degrees apart, so the clusters tile the plane.

#include "clusterbd/random.hpp"
#include "clusterbd/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <span>
#include <vector>

namespace clusterbd::geometry {

struct Axial {
    int q = 0;
    int r = 0;

    auto operator<=>(const Axial&) const = default;
    Axial operator+(Axial o) const { return {q + o.q, r + o.r}; }
    Axial operator*(int s) const { return {q * s, r * s}; }
};

/// Neighbour direction i lies across hexagon edge i (between vertices i and i+1).
inline constexpr std::array<Axial, 6> kEdgeNeighbors{{{1, 0}, {0, 1}, {-1, 1}, {-1, 0}, {0, -1}, {1, -1}}};

inline int hex_distance(Axial a) { return (std::abs(a.q) + std::abs(a.r) + std::abs(a.q + a.r)) / 2; }

inline Point cell_center(Axial a, double radius) {
    return {1.5 * radius * a.q, std::numbers::sqrt3 * radius * (a.r + 0.5 * a.q)};
}

inline Point hex_vertex(Point center, int i, double radius) {
    const double ang = std::numbers::pi / 3.0 * i;
    return {center.x + radius * std::cos(ang), center.y + radius * std::sin(ang)};
}

/// Axial coordinates of the hexagon containing p.
inline Axial axial_round(Point p, double radius) {
    const double fq = (2.0 / 3.0) * p.x / radius;
    const double fr = (-1.0 / 3.0 * p.x + std::numbers::sqrt3 / 3.0 * p.y) / radius;
    const double fs = -fq - fr;
    double q = std::round(fq), r = std::round(fr), s = std::round(fs);
    const double dq = std::abs(q - fq), dr = std::abs(r - fr), ds = std::abs(s - fs);
    if (dq > dr && dq > ds)
        q = -r - s;
    else if (dr > ds)
        r = -q - s;
    return {static_cast<int>(q), static_cast<int>(r)};
}

struct ClusterShape {
    std::vector<Axial> members;
    Axial t1, t2;
};

/// Member cells and tiling lattice for the supported cluster sizes.
inline ClusterShape cluster_shape(int cluster_size) {
    ClusterShape s;
    auto flower = [&](int rings) {
        for (int q = -rings; q <= rings; ++q)
            for (int r = -rings; r <= rings; ++r)
                if (hex_distance({q, r}) <= rings) s.members.push_back({q, r});
        std::sort(s.members.begin(), s.members.end(), [](Axial a, Axial b) {
            const int da = hex_distance(a), db = hex_distance(b);
            return da != db ? da < db : a < b;
        });
        // i + j steps along two adjacent directions, i = rings + 1, j = rings.
        s.t1 = {rings + 1, rings};
        s.t2 = {-rings, 2 * rings + 1};
    };
    switch (cluster_size) {
    case 1: flower(0); break;
    case 3:
        s.members = {{0, 0}, {1, 0}, {0, 1}};
        s.t1 = {1, 1};
        s.t2 = {-1, 2};
        break;
    case 7: flower(1); break;
    case 19: flower(2); break;
    default:
        throw std::invalid_argument("unsupported cluster size " + std::to_string(cluster_size) +
                                    "; expected one of 1, 3, 7, 19");
    }
    return s;
}

/// Cells, BTSs and clusters of a finite clustered network. BTS b sits at the
/// centre of cell b; the cells of cluster c are [c B, (c + 1) B). Cluster 0 is
/// the measured (central) cluster.
struct NetworkLayout {
    double cell_radius = 1.0;
    int cluster_size = 1;
    int interferer_tiers = 0;
    std::vector<Point> bts_positions;
    std::vector<Axial> cell_axial;
    std::vector<int> cell_of_bts;
    std::vector<int> cluster_of_cell;
    std::vector<std::vector<Point>> cluster_boundaries; // counter-clockwise, closed implicitly
    std::vector<std::vector<int>> cluster_adjacency;    // sorted neighbour lists
    std::map<Axial, int> cell_index;

    int num_cells() const { return static_cast<int>(cell_axial.size()); }
    int num_clusters() const { return static_cast<int>(cluster_boundaries.size()); }
    int first_cell(int cluster) const { return cluster * cluster_size; }

    bool adjacent(int a, int b) const {
        const auto& n = cluster_adjacency.at(a);
        return std::binary_search(n.begin(), n.end(), b);
    }

    std::optional<int> cell_at(Point p) const {
        auto it = cell_index.find(axial_round(p, cell_radius));
        if (it == cell_index.end()) return std::nullopt;
        return it->second;
    }

    std::optional<int> cluster_at(Point p) const {
        auto cell = cell_at(p);
        if (!cell) return std::nullopt;
        return cluster_of_cell[*cell];
    }
};

namespace detail {

struct VertexKey {
    long x, y;
    auto operator<=>(const VertexKey&) const = default;
};

// Hexagon vertices fall on a lattice of (R/2, sqrt(3) R/2).
inline VertexKey vertex_key(Point p, double radius) {
    return {std::lround(2.0 * p.x / radius), std::lround(2.0 * p.y / (std::numbers::sqrt3 * radius))};
}

inline Point vertex_point(VertexKey k, double radius) {
    return {0.5 * radius * k.x, 0.5 * std::numbers::sqrt3 * radius * k.y};
}

inline std::vector<Point> union_boundary(std::span<const Axial> cells, double radius) {
    std::set<Axial> in(cells.begin(), cells.end());
    std::map<VertexKey, VertexKey> next;
    for (Axial c : cells) {
        const Point ctr = cell_center(c, radius);
        for (int i = 0; i < 6; ++i) {
            if (in.count(c + kEdgeNeighbors[i])) continue;
            next[vertex_key(hex_vertex(ctr, i, radius), radius)] =
                vertex_key(hex_vertex(ctr, (i + 1) % 6, radius), radius);
        }
    }
    std::vector<Point> poly;
    if (next.empty()) return poly;
    const VertexKey start = next.begin()->first;
    VertexKey v = start;
    do {
        poly.push_back(vertex_point(v, radius));
        v = next.at(v);
    } while (!(v == start) && poly.size() <= next.size());
    if (poly.size() != next.size()) throw std::logic_error("cluster boundary is not a single loop");
    return poly;
}

inline double segment_distance(Point p, Point a, Point b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

} // namespace detail

/// Distance from p to the boundary of a polygon.
inline double boundary_distance(std::span<const Point> poly, Point p) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < poly.size(); ++i)
        best = std::min(best, detail::segment_distance(p, poly[i], poly[(i + 1) % poly.size()]));
    return best;
}

inline double polygon_area(std::span<const Point> poly) {
    double a = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point& p = poly[i];
        const Point& q = poly[(i + 1) % poly.size()];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * a;
}

inline double hexagon_area(double radius) { return 1.5 * std::numbers::sqrt3 * radius * radius; }

/// Central cluster surrounded by `tiers` complete rings of clusters, where a
/// ring is every cluster sharing an edge with the previous ring.
inline NetworkLayout build_layout(int cluster_size, int tiers, double cell_radius) {
    if (tiers < 0) throw std::invalid_argument("interferer tiers must be non-negative");
    if (!(cell_radius > 0.0)) throw std::invalid_argument("cell radius must be positive");
    const ClusterShape shape = cluster_shape(cluster_size);

    // Candidate clusters on a lattice patch large enough to hold every ring.
    const int span_ = 2 * tiers + 3;
    std::map<Axial, Axial> owner; // cell -> lattice coordinate of its cluster
    for (int a = -span_; a <= span_; ++a)
        for (int b = -span_; b <= span_; ++b) {
            const Axial origin = shape.t1 * a + shape.t2 * b;
            for (Axial m : shape.members) owner[origin + m] = {a, b};
        }
    auto lattice_neighbors = [&](Axial lat) {
        std::set<Axial> out;
        const Axial origin = shape.t1 * lat.q + shape.t2 * lat.r;
        for (Axial m : shape.members)
            for (Axial d : kEdgeNeighbors) {
                auto it = owner.find(origin + m + d);
                if (it != owner.end() && it->second != lat) out.insert(it->second);
            }
        return out;
    };

    std::vector<Axial> order{{0, 0}};
    std::map<Axial, int> depth{{{0, 0}, 0}};
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Axial cur = order[i];
        if (depth[cur] == tiers) continue;
        for (Axial n : lattice_neighbors(cur)) {
            if (depth.count(n)) continue;
            depth[n] = depth[cur] + 1;
            order.push_back(n);
        }
    }

    NetworkLayout L;
    L.cell_radius = cell_radius;
    L.cluster_size = cluster_size;
    L.interferer_tiers = tiers;
    std::map<Axial, int> cluster_id;
    for (std::size_t c = 0; c < order.size(); ++c) {
        cluster_id[order[c]] = static_cast<int>(c);
        const Axial origin = shape.t1 * order[c].q + shape.t2 * order[c].r;
        std::vector<Axial> cells;
        for (Axial m : shape.members) {
            const Axial cell = origin + m;
            cells.push_back(cell);
            L.cell_index[cell] = L.num_cells();
            L.cell_axial.push_back(cell);
            L.cell_of_bts.push_back(L.num_cells() - 1);
            L.cluster_of_cell.push_back(static_cast<int>(c));
            L.bts_positions.push_back(cell_center(cell, cell_radius));
        }
        L.cluster_boundaries.push_back(detail::union_boundary(cells, cell_radius));
    }
    L.cluster_adjacency.resize(order.size());
    for (std::size_t c = 0; c < order.size(); ++c) {
        for (Axial n : lattice_neighbors(order[c])) {
            auto it = cluster_id.find(n);
            if (it != cluster_id.end()) L.cluster_adjacency[c].push_back(it->second);
        }
        std::sort(L.cluster_adjacency[c].begin(), L.cluster_adjacency[c].end());
    }
    return L;
}

/// Distance from a point inside the network to the edge of the cluster containing it.
inline double distance_to_cluster_edge(const NetworkLayout& layout, Point p) {
    auto c = layout.cluster_at(p);
    if (!c) throw std::invalid_argument("point lies outside every cluster");
    return boundary_distance(layout.cluster_boundaries[*c], p);
}

/// Distance from p to the territory of `cluster` (zero inside it).
inline double distance_to_cluster(const NetworkLayout& layout, Point p, int cluster) {
    auto c = layout.cluster_at(p);
    if (c && *c == cluster) return 0.0;
    return boundary_distance(layout.cluster_boundaries.at(cluster), p);
}

enum class UserClass { Interior, Edge };

struct UserDrop {
    std::vector<Point> positions;
    std::vector<int> cluster_of_user; // containing cluster
    std::vector<int> cell_of_user;
    std::vector<UserClass> class_of_user;
    std::vector<int> home_cluster;
    std::vector<std::vector<int>> helpers; // sorted, never contains the home cluster
    double coordination_distance = 0.0;

    int size() const { return static_cast<int>(positions.size()); }

    /// Number of clusters serving user k (home plus helpers).
    int serving_clusters(int k) const { return 1 + static_cast<int>(helpers[k].size()); }

    /// Containing cluster, home cluster and helpers, ascending and unique.
    std::vector<int> candidates(int k) const {
        std::vector<int> c = helpers[k];
        c.push_back(cluster_of_user[k]);
        c.push_back(home_cluster[k]);
        std::sort(c.begin(), c.end());
        c.erase(std::unique(c.begin(), c.end()), c.end());
        return c;
    }
};

/// Clusters that receive users in a simulation: the central cluster and its neighbours.
inline std::vector<int> simulated_clusters(const NetworkLayout& layout) {
    std::vector<int> out{0};
    for (int n : layout.cluster_adjacency.at(0)) out.push_back(n);
    return out;
}

inline constexpr double kMinDistanceRatio = 0.035;

/// K users uniformly over each listed cluster, at least d_min from every BTS.
inline UserDrop drop_users(const NetworkLayout& layout, int users_per_cluster, std::uint64_t seed,
                           std::span<const int> clusters, double min_distance_ratio = kMinDistanceRatio) {
    if (users_per_cluster < 1) throw std::invalid_argument("users per cluster must be at least 1");
    const double R = layout.cell_radius;
    const double dmin = min_distance_ratio * R;
    const double half_h = 0.5 * std::numbers::sqrt3 * R;
    UserDrop d;
    for (int c : clusters) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(c)}));
        std::uniform_int_distribution<int> pick_cell(0, layout.cluster_size - 1);
        std::uniform_real_distribution<double> ux(-R, R), uy(-half_h, half_h);
        for (int k = 0; k < users_per_cluster; ++k) {
            const int cell = layout.first_cell(c) + pick_cell(rng);
            const Axial ax = layout.cell_axial[cell];
            const Point ctr = layout.bts_positions[cell];
            Point p;
            for (;;) {
                p = {ctr.x + ux(rng), ctr.y + uy(rng)};
                // Voronoi cell of a hex lattice is the hexagon itself, so the own BTS is the nearest one.
                if (axial_round(p, R) != ax) continue;
                if (distance(p, ctr) < dmin) continue;
                break;
            }
            d.positions.push_back(p);
            d.cluster_of_user.push_back(c);
            d.cell_of_user.push_back(cell);
            d.class_of_user.push_back(UserClass::Interior);
            d.home_cluster.push_back(c);
            d.helpers.emplace_back();
        }
    }
    return d;
}

inline UserDrop drop_users(const NetworkLayout& layout, int users_per_cluster, std::uint64_t seed) {
    const auto clusters = simulated_clusters(layout);
    return drop_users(layout, users_per_cluster, seed, clusters);
}

/// Edge users lie within D_c of their cluster edge; their helpers are the
/// neighbouring clusters whose territory is within D_c. D_c = 0 disables coordination.
inline UserDrop classify_users(const NetworkLayout& layout, const UserDrop& drop, double coordination_distance) {
    if (coordination_distance < 0.0 || coordination_distance >= layout.cell_radius)
        throw std::invalid_argument("coordination distance must lie in [0, R)");
    UserDrop out = drop;
    out.coordination_distance = coordination_distance;
    for (int k = 0; k < drop.size(); ++k) {
        const int c = drop.cluster_of_user[k];
        out.home_cluster[k] = c;
        out.helpers[k].clear();
        const bool edge = coordination_distance > 0.0 &&
                          boundary_distance(layout.cluster_boundaries[c], drop.positions[k]) <= coordination_distance;
        out.class_of_user[k] = edge ? UserClass::Edge : UserClass::Interior;
        if (!edge) continue;
        for (int n : layout.cluster_adjacency[c])
            if (boundary_distance(layout.cluster_boundaries[n], drop.positions[k]) <= coordination_distance)
                out.helpers[k].push_back(n);
    }
    return out;
}

/// Moves user k's home to `home` (one of its candidates); the other candidates become helpers.
inline void assign_home(UserDrop& drop, int k, int home) {
    auto cands = drop.candidates(k);
    if (!std::binary_search(cands.begin(), cands.end(), home))
        throw std::invalid_argument("home cluster must be the containing cluster or a helper");
    drop.home_cluster[k] = home;
    drop.helpers[k].clear();
    for (int c : cands)
        if (c != home) drop.helpers[k].push_back(c);
}

/// One line per BTS: "bts <index> <x> <y> <cell> <cluster>".
inline void write_layout(std::ostream& os, const NetworkLayout& layout) {
    os << "# bts index x_km y_km cell cluster\n";
    for (int b = 0; b < layout.num_cells(); ++b)
        os << "bts " << b << ' ' << layout.bts_positions[b].x << ' ' << layout.bts_positions[b].y << ' '
           << layout.cell_of_bts[b] << ' ' << layout.cluster_of_cell[layout.cell_of_bts[b]] << '\n';
}

/// One line per user: "user <index> <x> <y> <cell> <cluster> <interior|edge>".
inline void write_drop(std::ostream& os, const UserDrop& drop) {
    os << "# user index x_km y_km cell cluster class\n";
    for (int k = 0; k < drop.size(); ++k)
        os << "user " << k << ' ' << drop.positions[k].x << ' ' << drop.positions[k].y << ' '
           << drop.cell_of_user[k] << ' ' << drop.cluster_of_user[k] << ' '
           << (drop.class_of_user[k] == UserClass::Edge ? "edge" : "interior") << '\n';
}

} // namespace clusterbd::geometry
