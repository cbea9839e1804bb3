#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace clusterbd {

using cdouble = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

/// Planar position in kilometres.
struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Raised when a user set violates the degrees-of-freedom bound of block diagonalization.
class SchedulingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by iterative solvers that exhaust their iteration budget.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, RVector best_iterate, double residual)
        : std::runtime_error(what), best(std::move(best_iterate)), kkt_residual(residual) {}

    RVector best;
    double kkt_residual;
};

/// Raised when a covariance that must be positive definite is not.
class NotPositiveDefinite : public std::runtime_error {
public:
    NotPositiveDefinite(const std::string& what, double min_eig)
        : std::runtime_error(what), min_eigenvalue(min_eig) {}

    double min_eigenvalue;
};

} // namespace clusterbd
