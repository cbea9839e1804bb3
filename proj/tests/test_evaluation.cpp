#include "clusterbd/evaluation.hpp"
#include "clusterbd/geometry.hpp"
#include "clusterbd/scheduling.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace clusterbd;
using namespace clusterbd::evaluation;
using testing_support::random_channels;

TEST(Rates, ZeroPowerIsZero) {
    Rng rng(1);
    const auto h = random_channels(rng, 3, 2, 12);
    const auto sol = precoding::bd_precoders(h, 4);
    EXPECT_EQ(per_cell_sum_rate(sol, RVector::Zero(6)), 0.0);
}

TEST(Rates, DiagonalFormEqualsDeterminantForm) {
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        const auto h = random_channels(rng, 1 + t % 6, 2, 12);
        const auto sol = precoding::bd_precoders(h, 4);
        for (auto scheme : {power::Scheme::TPC, power::Scheme::SWF, power::Scheme::OPT}) {
            const auto a = power::allocate(sol, scheme, 15.0);
            const double diag = per_cell_sum_rate(sol, a.power);
            EXPECT_NEAR(diag, per_cell_sum_rate_det(h, sol, a.power), 1e-9 * (1.0 + diag));
            EXPECT_NEAR(diag, a.rate, 1e-12 * (1.0 + diag));
        }
    }
}

TEST(Rates, SingleUserSingleCellIsPointToPoint) {
    Rng rng(3);
    const auto h = random_channels(rng, 1, 2, 4);
    const auto sol = precoding::bd_precoders(h, 4);
    const double p = 9.0;
    const auto a = power::allocate(sol, power::Scheme::TPC, p);
    const CMatrix q = user_covariance(sol, a.power, 0);
    const double direct = linalg::log2_det_hpd(CMatrix::Identity(2, 2) + h[0] * q * h[0].adjoint());
    EXPECT_NEAR(per_cell_sum_rate(sol, a.power), direct, 1e-10);
    EXPECT_NEAR(direct, waterfilled_link_rate(h[0], p), 1e-10);
}

TEST(Rates, ResidualFormWithPerfectChannelsHasNoInterference) {
    Rng rng(4);
    const auto h = random_channels(rng, 4, 2, 12);
    const auto sol = precoding::bd_precoders(h, 4);
    const auto a = power::allocate(sol, power::Scheme::SWF, 10.0);
    const auto exact = user_rates(sol, a.power);
    const auto resid = user_rates_residual(h, sol, a.power);
    for (std::size_t k = 0; k < exact.size(); ++k) EXPECT_NEAR(resid[k], exact[k], 1e-8);
    // a perturbed channel leaks and loses rate
    auto noisy = h;
    for (auto& m : noisy) m += 0.3 * complex_gaussian_matrix(rng, 2, 12);
    const auto sol2 = precoding::bd_precoders(noisy, 4);
    const auto a2 = power::allocate(sol2, power::Scheme::SWF, 10.0);
    const auto leak = user_rates_residual(h, sol2, a2.power);
    for (double r : leak) EXPECT_GE(r, 0.0);
}

TEST(EffectiveSum, Examples) {
    const std::vector<double> r{1.0, 2.0, 0.5};
    const std::vector<int> ones{1, 1, 1};
    EXPECT_DOUBLE_EQ(effective_sum_rate(r, ones), 3.5);
    const std::vector<double> edge{2.0};
    const std::vector<int> two{2};
    EXPECT_DOUBLE_EQ(effective_sum_rate(edge, two), 1.0);
    const std::vector<int> bad{0};
    EXPECT_THROW(effective_sum_rate(edge, bad), std::invalid_argument);
}

TEST(EffectiveSum, NonIncreasingInCoordinationDistanceOnFrozenRates) {
    const auto l = geometry::build_layout(3, 1, 1.0);
    const auto raw = geometry::drop_users(l, 30, 4);
    Rng rng(5);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    std::vector<double> rates(raw.size());
    for (auto& r : rates) r = u(rng);
    double prev = INFINITY;
    for (double dc = 0.0; dc < 1.0; dc += 0.05) {
        const auto d = geometry::classify_users(l, raw, dc);
        std::vector<int> n(raw.size());
        for (int k = 0; k < raw.size(); ++k) n[k] = d.serving_clusters(k);
        const double s = effective_sum_rate(rates, n);
        EXPECT_LE(s, prev + 1e-12);
        prev = s;
    }
}

TEST(EffectiveSum, CountingIdentityOnSymmetricPair) {
    // Two clusters, each with one interior user and one edge user helped by the
    // other. Each cluster is credited 1/N_c of every user it serves.
    const std::vector<double> rates{1.5, 0.8, 1.5, 0.8}; // a1, eA, b1, eB
    const std::vector<double> served_by_a{1.5, 0.8, 0.8};
    const std::vector<int> shares_a{1, 2, 2};
    const double a = effective_sum_rate(served_by_a, shares_a);
    const double b = a; // mirror image
    EXPECT_DOUBLE_EQ(a + b, std::accumulate(rates.begin(), rates.end(), 0.0));
    // and no cluster is credited more than its plain sum
    EXPECT_LE(effective_sum_rate(served_by_a, shares_a), 1.5 + 0.8 + 0.8);
}

TEST(MinRate, Examples) {
    const std::vector<double> one{0.7};
    EXPECT_DOUBLE_EQ(mean_min_rate(one), 0.7);
    EXPECT_THROW(mean_min_rate({}), std::invalid_argument);
    // replay from a per-user rate log
    Rng rng(6);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    std::vector<std::vector<double>> log(25, std::vector<double>(30));
    std::vector<double> minima;
    for (auto& trial : log) {
        for (auto& r : trial) r = u(rng);
        minima.push_back(*std::min_element(trial.begin(), trial.end()));
    }
    double replay = 0.0;
    for (const auto& trial : log) {
        double m = trial[0];
        for (double r : trial) m = r < m ? r : m;
        replay += m;
    }
    EXPECT_NEAR(mean_min_rate(minima), replay / log.size(), 1e-12);
    const std::vector<double> same(10, 0.3);
    EXPECT_NEAR(mean_min_rate(same), 0.3, 1e-15);
}

TEST(Utility, Examples) {
    const std::vector<double> rmin{0.1, 0.3, 0.2}, rsum{9.0, 8.0, 6.0};
    const auto a1 = utility(rmin, rsum, 1.0);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(a1.values[i], rmin[i] / 0.3);
    EXPECT_EQ(a1.argmax, 1u);
    const auto half = utility(rmin, rsum, 0.5);
    for (double v : half.values) {
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    const std::vector<double> rsum2{8.0, 9.0, 6.0};
    const auto both = utility(rmin, rsum2, 0.5);
    EXPECT_DOUBLE_EQ(both.values[1], 1.0);
    EXPECT_EQ(both.argmax, 1u);
    EXPECT_LT(*std::max_element(half.values.begin(), half.values.end()), 1.0);
    const std::vector<double> zeros(3, 0.0);
    EXPECT_THROW(utility(zeros, rsum, 0.5), std::invalid_argument);
    EXPECT_THROW(utility(rmin, std::vector<double>{1.0}, 0.5), std::invalid_argument);
}

TEST(Cdf, SingleSample) {
    const RateCdf c(std::vector<double>{1.5});
    EXPECT_EQ(c(1.4999), 0.0);
    EXPECT_EQ(c(1.5), 1.0);
    EXPECT_EQ(c.quantile(0.1), 1.5);
    EXPECT_THROW(RateCdf(std::vector<double>{}), std::invalid_argument);
}

TEST(Cdf, MonotoneWithLimitsAndSortOracle) {
    Rng rng(7);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> s(997);
    for (auto& x : s) x = e(rng);
    const RateCdf c(s);
    EXPECT_EQ(c(-1e-12), 0.0);
    EXPECT_EQ(c(INFINITY), 1.0);
    double prev = 0.0;
    for (double x = 0.0; x < 8.0; x += 0.01) {
        EXPECT_GE(c(x), prev);
        prev = c(x);
    }
    auto sorted = s;
    std::sort(sorted.begin(), sorted.end());
    const auto idx = static_cast<std::size_t>(std::ceil(0.1 * sorted.size()));
    EXPECT_EQ(c.quantile(0.1), sorted[idx - 1]);
    EXPECT_EQ(c.quantile(1.0), sorted.back());
    EXPECT_THROW(c.quantile(0.0), std::invalid_argument);
}

TEST(CsiReduction, Examples) {
    EXPECT_EQ(csi_reduction_fraction(7, 19), (Fraction{7, 19}));
    EXPECT_DOUBLE_EQ(csi_reduction_ratio(7, 19), 7.0 / 19.0);
    EXPECT_DOUBLE_EQ(csi_reduction_ratio(3, 3), 1.0);
    EXPECT_DOUBLE_EQ(csi_reduction_ratio(1, 100), 0.01);
    EXPECT_EQ(csi_reduction_fraction(3, 9), (Fraction{1, 3}));
    EXPECT_THROW(csi_reduction_ratio(5, 3), std::invalid_argument);
}

TEST(Baselines, TdmaIsDutyCycledPointToPoint) {
    Rng rng(8);
    const CMatrix link = complex_gaussian_matrix(rng, 2, 4);
    const double p = 10.0;
    EXPECT_NEAR(baseline_tdma_intercell(link, p, 1), waterfilled_link_rate(link, p), 1e-12);
    EXPECT_NEAR(baseline_tdma_intercell(link, p, 3), waterfilled_link_rate(link, p) / 3.0, 1e-12);
    // matched estimate reproduces the water-filled rate
    EXPECT_NEAR(mismatched_link_rate(link, link, p), waterfilled_link_rate(link, p), 1e-10);
}

TEST(Baselines, IntercellBd) {
    Rng rng(9);
    const double p = 10.0;
    const CMatrix one = complex_gaussian_matrix(rng, 2, 4);
    const std::vector<CMatrix> single{one};
    EXPECT_NEAR(baseline_intercell_bd(single, 4, p, 3), baseline_tdma_intercell(one, p, 3), 1e-10);

    CMatrix h1 = CMatrix::Zero(2, 4), h2 = CMatrix::Zero(2, 4);
    h1(0, 0) = 1.0, h1(1, 1) = 0.5;
    h2(0, 2) = 2.0, h2(1, 3) = 0.7;
    const std::vector<CMatrix> orth{h1, h2};
    RVector g(4);
    g << 1.0, 0.25, 4.0, 0.49;
    const RVector w = power::waterfill(g, p).power;
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) expect += std::log2(1.0 + g(i) * w(i));
    EXPECT_NEAR(baseline_intercell_bd(orth, 4, p, 3), expect / 3.0, 1e-10);
}

TEST(Baselines, IntercellBdAtLeastTdmaInMean) {
    Rng rng(10);
    const double p = 10.0;
    double bd = 0.0, tdma = 0.0;
    for (int t = 0; t < 100; ++t) {
        const auto links = random_channels(rng, 5, 2, 4);
        std::vector<int> cands{0, 1, 2, 3, 4};
        const auto single = scheduling::greedy_select(
            cands, [&](const std::vector<int>& s) -> std::optional<double> { return baseline_tdma_intercell(links[s[0]], p, 3); }, 1);
        const auto multi = scheduling::greedy_select(
            cands,
            [&](const std::vector<int>& s) -> std::optional<double> {
                std::vector<CMatrix> c;
                for (int k : s) c.push_back(links[k]);
                return baseline_intercell_bd(c, 4, p, 3);
            },
            2);
        tdma += single.metric;
        bd += multi.metric;
        EXPECT_GE(multi.metric, single.metric - 1e-12);
    }
    EXPECT_GE(bd, tdma);
}

TEST(Baselines, BdTpcEqualsSwfWhenUnscaled) {
    Rng rng(11);
    const auto h = random_channels(rng, 2, 2, 4); // one BTS: the total and per-BTS budgets coincide
    const auto sol = precoding::bd_precoders(h, 4);
    const auto swf = power::allocate(sol, power::Scheme::SWF, 8.0);
    EXPECT_NEAR(swf.scaling, 1.0, 1e-12);
    EXPECT_NEAR(baseline_bd_tpc(h, 4, 8.0), swf.rate, 1e-10);
}
