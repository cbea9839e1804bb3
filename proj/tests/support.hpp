#pragma once

// Independent helpers shared by the test suites.

#include "clusterbd/random.hpp"
#include "clusterbd/types.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace testing_support {

using clusterbd::CMatrix;
using clusterbd::Point;
using clusterbd::Rng;

/// Even-odd ray casting.
inline bool point_in_polygon(std::span<const Point> poly, Point p) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point a = poly[i], b = poly[j];
        if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) inside = !inside;
    }
    return inside;
}

/// Minimum distance from p to points sampled along the polygon edges at spacing h.
inline double sampled_boundary_distance(std::span<const Point> poly, Point p, double h) {
    double best = INFINITY;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point a = poly[i], b = poly[(i + 1) % poly.size()];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        const int n = static_cast<int>(std::ceil(len / h));
        for (int s = 0; s <= n; ++s) {
            const double t = static_cast<double>(s) / n;
            best = std::min(best, std::hypot(a.x + t * (b.x - a.x) - p.x, a.y + t * (b.y - a.y) - p.y));
        }
    }
    return best;
}

inline std::vector<CMatrix> random_channels(Rng& rng, int users, int rows, int cols) {
    std::vector<CMatrix> h;
    for (int k = 0; k < users; ++k) h.push_back(clusterbd::complex_gaussian_matrix(rng, rows, cols));
    return h;
}

/// Maximum of ||H_i T_k|| / ||H_i|| over i != k.
template <class Sol>
double max_leakage(std::span<const CMatrix> h, const Sol& sol) {
    double worst = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i)
        for (std::size_t k = 0; k < h.size(); ++k)
            if (i != k) worst = std::max(worst, (h[i] * sol.users[k].precoder).norm() / h[i].norm());
    return worst;
}

/// Two variables x, y >= 0 with a.col(0) x + a.col(1) y <= limit. The objective
/// is increasing, so for each x on the grid the best y sits on the boundary.
template <class F>
double boundary_grid_max(const clusterbd::RMatrix& a, double limit, double step, F&& f) {
    double xmax = INFINITY;
    for (Eigen::Index b = 0; b < a.rows(); ++b)
        if (a(b, 0) > 0.0) xmax = std::min(xmax, limit / a(b, 0));
    double best = -INFINITY;
    for (double x = 0.0; x <= xmax + 1e-12; x += step) {
        double y = INFINITY;
        for (Eigen::Index b = 0; b < a.rows(); ++b)
            if (a(b, 1) > 0.0) y = std::min(y, std::max(0.0, limit - a(b, 0) * x) / a(b, 1));
        best = std::max(best, f(std::min(x, xmax), y));
    }
    return best;
}

template <class F>
double full_grid_max(const clusterbd::RMatrix& a, double limit, double step, F&& f) {
    double best = -INFINITY;
    for (double x = 0.0;; x += step) {
        bool any = false;
        for (double y = 0.0;; y += step) {
            bool ok = true;
            for (Eigen::Index b = 0; b < a.rows(); ++b) ok = ok && a(b, 0) * x + a(b, 1) * y <= limit;
            if (!ok) break;
            any = true;
            best = std::max(best, f(x, y));
        }
        if (!any) break;
    }
    return best;
}


} // namespace testing_support
