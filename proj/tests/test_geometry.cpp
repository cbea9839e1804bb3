#include "clusterbd/geometry.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace clusterbd;
using namespace clusterbd::geometry;
using testing_support::point_in_polygon;

namespace {

Point polygon_centroid(std::span<const Point> poly) {
    double a = 0.0, cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point p = poly[i], q = poly[(i + 1) % poly.size()];
        const double c = p.x * q.y - q.x * p.y;
        a += c;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    return {cx / (3.0 * a), cy / (3.0 * a)};
}

UserDrop single_user(const NetworkLayout& layout, Point p) {
    UserDrop d;
    d.positions = {p};
    d.cluster_of_user = {*layout.cluster_at(p)};
    d.cell_of_user = {*layout.cell_at(p)};
    d.class_of_user = {UserClass::Interior};
    d.home_cluster = d.cluster_of_user;
    d.helpers.resize(1);
    return d;
}

} // namespace

TEST(Layout, SingleCellClustersWithOneTier) {
    const auto l = build_layout(1, 1, 1.0);
    EXPECT_EQ(l.num_cells(), 7);
    EXPECT_EQ(l.num_clusters(), 7);
    EXPECT_EQ(l.cluster_adjacency[0].size(), 6u);
}

TEST(Layout, SevenCellFlowerAlone) {
    const auto l = build_layout(7, 0, 1.0);
    EXPECT_EQ(l.num_cells(), 7);
    EXPECT_EQ(l.num_clusters(), 1);
    // centre cell plus its six neighbours
    for (int c = 1; c < 7; ++c) EXPECT_NEAR(distance(l.bts_positions[0], l.bts_positions[c]), std::numbers::sqrt3, 1e-12);
}

TEST(Layout, NineteenCellClustersNoOverlap) {
    const auto l = build_layout(19, 1, 1.0);
    EXPECT_EQ(l.num_cells(), 133);
    EXPECT_EQ(l.num_clusters(), 7);
    // Points sampled over the central region are claimed by at most one polygon,
    // and by exactly the cluster of the cell containing them.
    Rng rng(3);
    std::uniform_real_distribution<double> u(-8.0, 8.0);
    int covered = 0;
    for (int s = 0; s < 20000; ++s) {
        const Point p{u(rng), u(rng)};
        int hits = 0, which = -1;
        for (int c = 0; c < l.num_clusters(); ++c)
            if (point_in_polygon(l.cluster_boundaries[c], p)) {
                ++hits;
                which = c;
            }
        ASSERT_LE(hits, 1);
        const auto cell = l.cell_at(p);
        if (hits == 1) {
            ++covered;
            ASSERT_TRUE(cell.has_value());
            EXPECT_EQ(l.cluster_of_cell[*cell], which);
        } else {
            EXPECT_FALSE(cell.has_value());
        }
    }
    EXPECT_GT(covered, 10000);
}

TEST(Layout, UnsupportedClusterSizeRejected) {
    EXPECT_THROW(build_layout(4, 1, 1.0), std::invalid_argument);
    EXPECT_THROW(build_layout(3, -1, 1.0), std::invalid_argument);
    EXPECT_THROW(build_layout(3, 1, 0.0), std::invalid_argument);
}

class LayoutInvariants : public ::testing::TestWithParam<int> {};

TEST_P(LayoutInvariants, Hold) {
    const int b = GetParam();
    const auto l = build_layout(b, 1, 1.0);
    // each cluster has exactly B cells, each BTS one cell
    std::vector<int> count(l.num_clusters(), 0);
    for (int cell = 0; cell < l.num_cells(); ++cell) ++count[l.cluster_of_cell[cell]];
    for (int c : count) EXPECT_EQ(c, b);
    for (int bts = 0; bts < l.num_cells(); ++bts) EXPECT_EQ(l.cell_of_bts[bts], bts);
    // adjacency symmetric and irreflexive
    for (int a = 0; a < l.num_clusters(); ++a) {
        EXPECT_FALSE(l.adjacent(a, a));
        for (int n : l.cluster_adjacency[a]) EXPECT_TRUE(l.adjacent(n, a));
    }
    // tessellation area
    double area = 0.0;
    for (const auto& poly : l.cluster_boundaries) area += polygon_area(poly);
    const double expect = l.num_cells() * 1.5 * std::numbers::sqrt3;
    EXPECT_NEAR(area / expect, 1.0, 1e-9);
    // the central cluster has six neighbours for every size
    EXPECT_EQ(l.cluster_adjacency[0].size(), 6u);
}

INSTANTIATE_TEST_SUITE_P(AllSizes, LayoutInvariants, ::testing::Values(1, 3, 7, 19));

TEST(Drop, Deterministic) {
    const auto l = build_layout(3, 1, 1.0);
    const auto a = drop_users(l, 30, 42), b = drop_users(l, 30, 42);
    ASSERT_EQ(a.size(), b.size());
    for (int k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a.positions[k].x, b.positions[k].x);
        EXPECT_EQ(a.positions[k].y, b.positions[k].y);
    }
    const auto c = drop_users(l, 30, 43);
    EXPECT_NE(a.positions[0].x, c.positions[0].x);
}

TEST(Drop, UsersInsideTheirClusterAwayFromBts) {
    const auto l = build_layout(3, 1, 1.0);
    const auto d = drop_users(l, 30, 5);
    EXPECT_EQ(d.size(), 30 * 7);
    for (int k = 0; k < d.size(); ++k) {
        EXPECT_TRUE(point_in_polygon(l.cluster_boundaries[d.cluster_of_user[k]], d.positions[k]));
        for (const Point& b : l.bts_positions) EXPECT_GE(distance(b, d.positions[k]), kMinDistanceRatio - 1e-12);
    }
}

TEST(Drop, SingleUserInsideHexagon) {
    const auto l = build_layout(1, 0, 1.0);
    const auto d = drop_users(l, 1, 9);
    ASSERT_EQ(d.size(), 1);
    EXPECT_TRUE(point_in_polygon(l.cluster_boundaries[0], d.positions[0]));
    EXPECT_LE(distance(d.positions[0], {0.0, 0.0}), 1.0);
}

TEST(Drop, UniformOverCluster) {
    const auto l = build_layout(3, 0, 1.0);
    const std::vector<int> only{0};
    const auto d = drop_users(l, 100000, 17, only);
    double x = 0.0, y = 0.0;
    for (const auto& p : d.positions) {
        x += p.x;
        y += p.y;
    }
    x /= d.size();
    y /= d.size();
    const Point c = polygon_centroid(l.cluster_boundaries[0]);
    EXPECT_NEAR(x, c.x, 0.01);
    EXPECT_NEAR(y, c.y, 0.01);
}

TEST(Distance, VertexIsZero) {
    const auto l = build_layout(1, 0, 1.0);
    EXPECT_NEAR(boundary_distance(l.cluster_boundaries[0], l.cluster_boundaries[0][2]), 0.0, 1e-15);
}

TEST(Distance, HexagonCentreIsApothem) {
    const auto l = build_layout(1, 0, 1.0);
    EXPECT_NEAR(distance_to_cluster_edge(l, {0.0, 0.0}), std::numbers::sqrt3 / 2.0, 1e-12);
}

TEST(Distance, MatchesDenseBoundarySampling) {
    const auto l = build_layout(3, 1, 1.0);
    const auto d = drop_users(l, 20, 23);
    for (int k = 0; k < d.size(); ++k) {
        const auto& poly = l.cluster_boundaries[d.cluster_of_user[k]];
        const double oracle = testing_support::sampled_boundary_distance(poly, d.positions[k], 2e-5);
        EXPECT_NEAR(distance_to_cluster_edge(l, d.positions[k]), oracle, 1e-6);
    }
}

TEST(Distance, OutsideEveryClusterRejected) {
    const auto l = build_layout(3, 0, 1.0);
    EXPECT_THROW(distance_to_cluster_edge(l, {50.0, 50.0}), std::invalid_argument);
}

TEST(Classify, ZeroDistanceMeansAllInterior) {
    const auto l = build_layout(3, 1, 1.0);
    const auto d = classify_users(l, drop_users(l, 30, 1), 0.0);
    for (int k = 0; k < d.size(); ++k) {
        EXPECT_EQ(d.class_of_user[k], UserClass::Interior);
        EXPECT_EQ(d.serving_clusters(k), 1);
    }
}

TEST(Classify, ThresholdAtCoordinationDistance) {
    const auto l = build_layout(1, 1, 1.0);
    // flat-topped hexagon: the right edge midpoint lies at x = sqrt(3)/2 along the
    // direction to the neighbour; walk 0.3 back towards the centre.
    const double apothem = std::numbers::sqrt3 / 2.0;
    const Point dir = l.bts_positions[l.cluster_adjacency[0][0]];
    const double n = std::hypot(dir.x, dir.y);
    const Point p{dir.x / n * (apothem - 0.3), dir.y / n * (apothem - 0.3)};
    ASSERT_NEAR(distance_to_cluster_edge(l, p), 0.3, 1e-12);
    const auto edge = classify_users(l, single_user(l, p), 0.35);
    EXPECT_EQ(edge.class_of_user[0], UserClass::Edge);
    EXPECT_EQ(edge.helpers[0], std::vector<int>{l.cluster_adjacency[0][0]});
    EXPECT_EQ(edge.serving_clusters(0), 2);
    const auto interior = classify_users(l, single_user(l, p), 0.25);
    EXPECT_EQ(interior.class_of_user[0], UserClass::Interior);
}

TEST(Classify, DistanceMustBeBelowRadius) {
    const auto l = build_layout(3, 1, 1.0);
    const auto d = drop_users(l, 5, 1);
    EXPECT_THROW(classify_users(l, d, 1.0), std::invalid_argument);
    EXPECT_THROW(classify_users(l, d, -0.1), std::invalid_argument);
}

TEST(Classify, EdgeFractionMatchesBandArea) {
    const auto l = build_layout(3, 1, 1.0);
    const std::vector<int> only{0};
    const auto d = classify_users(l, drop_users(l, 40000, 77, only), 0.35);
    int edge = 0;
    for (int k = 0; k < d.size(); ++k) edge += d.class_of_user[k] == UserClass::Edge;
    const double got = static_cast<double>(edge) / d.size();

    // Monte-carlo band area with independent point-in-polygon and sampled distances.
    const auto& poly = l.cluster_boundaries[0];
    double xmin = 1e9, xmax = -1e9, ymin = 1e9, ymax = -1e9;
    for (const auto& p : poly) {
        xmin = std::min(xmin, p.x), xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y), ymax = std::max(ymax, p.y);
    }
    Rng rng(99);
    std::uniform_real_distribution<double> ux(xmin, xmax), uy(ymin, ymax);
    int inside = 0, band = 0;
    while (inside < 20000) {
        const Point p{ux(rng), uy(rng)};
        if (!point_in_polygon(poly, p)) continue;
        ++inside;
        band += testing_support::sampled_boundary_distance(poly, p, 1e-3) <= 0.35;
    }
    const double oracle = static_cast<double>(band) / inside;
    EXPECT_NEAR(got / oracle, 1.0, 0.02);
}

TEST(Classify, InvariantsAndMonotonicity) {
    const auto l = build_layout(3, 1, 1.0);
    const auto raw = drop_users(l, 30, 8);
    std::vector<bool> was_edge(raw.size(), false);
    for (double dc = 0.0; dc < 1.0; dc += 0.05) {
        const auto d = classify_users(l, raw, dc);
        for (int k = 0; k < d.size(); ++k) {
            const bool edge = d.class_of_user[k] == UserClass::Edge;
            EXPECT_EQ(edge, dc > 0.0 && distance_to_cluster_edge(l, d.positions[k]) <= dc);
            if (!edge) EXPECT_TRUE(d.helpers[k].empty());
            EXPECT_GE(d.serving_clusters(k), 1);
            for (int h : d.helpers[k]) EXPECT_NE(h, d.home_cluster[k]);
            if (was_edge[k]) EXPECT_TRUE(edge);
            was_edge[k] = edge;
        }
    }
}

TEST(Classify, AssignHomeSwapsRoles) {
    const auto l = build_layout(1, 1, 1.0);
    const double apothem = std::numbers::sqrt3 / 2.0;
    const Point dir = l.bts_positions[l.cluster_adjacency[0][0]];
    const double n = std::hypot(dir.x, dir.y);
    const Point p{dir.x / n * (apothem - 0.1), dir.y / n * (apothem - 0.1)};
    auto d = classify_users(l, single_user(l, p), 0.35);
    const int neighbour = l.cluster_adjacency[0][0];
    assign_home(d, 0, neighbour);
    EXPECT_EQ(d.home_cluster[0], neighbour);
    EXPECT_EQ(d.helpers[0], std::vector<int>{0});
    EXPECT_EQ(d.candidates(0), (std::vector<int>{0, neighbour}));
    EXPECT_THROW(assign_home(d, 0, l.cluster_adjacency[0][3]), std::invalid_argument);
}

TEST(TextFormat, OneRecordPerBtsAndUser) {
    const auto l = build_layout(3, 0, 1.0);
    std::ostringstream a;
    write_layout(a, l);
    std::istringstream in(a.str());
    std::string line;
    int records = 0;
    while (std::getline(in, line))
        if (line.rfind("bts ", 0) == 0) ++records;
    EXPECT_EQ(records, 3);

    const auto d = classify_users(l, drop_users(l, 4, 2), 0.35);
    std::ostringstream b;
    write_drop(b, d);
    std::istringstream in2(b.str());
    records = 0;
    while (std::getline(in2, line))
        if (line.rfind("user ", 0) == 0) {
            ++records;
            EXPECT_TRUE(line.ends_with("edge") || line.ends_with("interior"));
        }
    EXPECT_EQ(records, d.size());
}
