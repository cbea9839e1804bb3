#include "clusterbd/precoding.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace clusterbd;
using namespace clusterbd::precoding;
using testing_support::max_leakage;
using testing_support::random_channels;

TEST(UserBounds, Lemma1) {
    EXPECT_EQ(max_users(3, 4, 2), 6);
    EXPECT_EQ(max_users(1, 4, 4), 1);
    EXPECT_EQ(max_users(7, 4, 2), 14);
    EXPECT_THROW(max_users(0, 4, 2), std::invalid_argument);
}

TEST(UserBounds, Lemma2) {
    EXPECT_EQ(max_users_helper(3, 4, 2, 1).users, 5);
    EXPECT_FALSE(max_users_helper(3, 4, 2, 1).saturated);
    EXPECT_EQ(max_users_helper(3, 4, 2, 0).users, 6);
    const auto s = max_users_helper(1, 4, 2, 2);
    EXPECT_EQ(s.users, 0);
    EXPECT_TRUE(s.saturated);
    EXPECT_THROW(max_users_helper(3, 4, 2, -1), std::invalid_argument);
}

TEST(InterferenceMatrix, Shapes) {
    Rng rng(1);
    const auto one = random_channels(rng, 1, 2, 12);
    EXPECT_EQ(interference_matrix(one, 0, {}).rows(), 0);
    const auto three = random_channels(rng, 3, 2, 12);
    for (int k = 0; k < 3; ++k) {
        const CMatrix m = interference_matrix(three, k, {});
        EXPECT_EQ(m.rows(), 4);
        EXPECT_EQ(m.cols(), 12);
    }
    // others in ascending order, then protected rows
    const auto two = random_channels(rng, 2, 2, 12);
    const auto prot = random_channels(rng, 1, 2, 12);
    const CMatrix m = interference_matrix(two, 0, prot);
    ASSERT_EQ(m.rows(), 4);
    EXPECT_TRUE(m.topRows(2) == two[1]);
    EXPECT_TRUE(m.bottomRows(2) == prot[0]);
    const CMatrix m2 = interference_matrix(three, 1, {});
    EXPECT_TRUE(m2.topRows(2) == three[0]);
    EXPECT_TRUE(m2.bottomRows(2) == three[2]);
}

TEST(InterferenceMatrix, ExistenceViolationIsSchedulingError) {
    Rng rng(2);
    const auto h = random_channels(rng, 7, 2, 12); // 6 others x 2 rows = 12 > 12 - 2
    EXPECT_THROW(interference_matrix(h, 0, {}), SchedulingError);
}

TEST(NullSpace, ZeroMatrixKeepsEverything) {
    const CMatrix b = linalg::null_space_basis(CMatrix::Zero(3, 5));
    EXPECT_EQ(b.cols(), 5);
    EXPECT_TRUE((b.adjoint() * b).isApprox(CMatrix::Identity(5, 5), 1e-12));
}

TEST(NullSpace, SpansSecondAxis) {
    CMatrix m = CMatrix::Zero(1, 2);
    m(0, 0) = 1.0;
    const CMatrix b = linalg::null_space_basis(m);
    ASSERT_EQ(b.cols(), 1);
    EXPECT_NEAR(std::abs(b(1, 0)), 1.0, 1e-14);
    EXPECT_NEAR(std::abs(b(0, 0)), 0.0, 1e-14);
}

TEST(NullSpace, RandomFullRowRank) {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const CMatrix m = complex_gaussian_matrix(rng, 4, 12);
        const CMatrix b = linalg::null_space_basis(m);
        ASSERT_EQ(b.cols(), 8);
        EXPECT_LT((m * b).norm(), 1e-10 * m.norm());
        EXPECT_TRUE((b.adjoint() * b).isApprox(CMatrix::Identity(8, 8), 1e-12));
    }
}

TEST(NullSpace, EmptyIsError) {
    Rng rng(4);
    EXPECT_THROW(linalg::null_space_basis(complex_gaussian_matrix(rng, 4, 4)), SchedulingError);
}

TEST(Bd, SingleUserKeepsChannelEnergy) {
    Rng rng(5);
    const auto h = random_channels(rng, 1, 2, 12);
    const auto sol = bd_precoders(h, 4);
    EXPECT_NEAR(sol.stream_gains().sum(), h[0].squaredNorm(), 1e-10 * h[0].squaredNorm());
}

TEST(Bd, InvariantsOnRandomFullLoad) {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        const auto h = random_channels(rng, 6, 2, 12);
        const auto sol = bd_precoders(h, 4);
        ASSERT_EQ(sol.users.size(), 6u);
        EXPECT_LT(max_leakage<PrecodingSolution>(h, sol), 1e-8);
        for (int k = 0; k < 6; ++k) {
            const auto& u = sol.users[k];
            EXPECT_TRUE((u.precoder.adjoint() * u.precoder).isApprox(CMatrix::Identity(2, 2), 1e-10));
            EXPECT_GE(u.singular_values(1), 0.0);
            EXPECT_GE(u.singular_values(0), u.singular_values(1));
            EXPECT_EQ(u.null_dimension, 12 - 10);
            // effective channel singular values are those of H_k T_k
            Eigen::JacobiSVD<CMatrix> svd(h[k] * u.precoder);
            EXPECT_LT((svd.singularValues() - u.singular_values).norm(), 1e-9 * u.singular_values(0));
            // per-BTS energies add up to the stream count
            double e = 0.0;
            for (int b = 0; b < 3; ++b) e += sol.bts_block(k, b).squaredNorm();
            EXPECT_NEAR(e, 2.0, 1e-10);
        }
        EXPECT_NEAR(sol.user_bts_weights().sum(), 12.0, 1e-9);
        EXPECT_NEAR(sol.stream_bts_weights().sum(), 12.0, 1e-9);
    }
}

TEST(Bd, HelperPrecodersNullProtectedUsers) {
    Rng rng(7);
    for (int t = 0; t < 100; ++t) {
        const int protect = 1 + t % 2;
        const int users = max_users_helper(3, 4, 2, protect).users;
        const auto h = random_channels(rng, users, 2, 12);
        const auto p = random_channels(rng, protect, 2, 12);
        const auto sol = bd_precoders(h, p, 4);
        EXPECT_LT(max_leakage<PrecodingSolution>(h, sol), 1e-8);
        for (const auto& pk : p)
            for (const auto& u : sol.users) EXPECT_LT((pk * u.precoder).norm(), 1e-8 * pk.norm() * u.precoder.norm());
    }
}

TEST(Bd, GramRouteMatchesSvdRoute) {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        const int users = 1 + t % 5;
        const auto h = random_channels(rng, users, 2, 12);
        const auto p = random_channels(rng, t % 2, 2, 12);
        const auto a = bd_precoders(h, p, 4);
        const auto b = bd_precoders_gram(h, p, 4);
        ASSERT_TRUE(b.has_value());
        for (int k = 0; k < users; ++k) {
            EXPECT_LT((a.users[k].singular_values - b->users[k].singular_values).norm(), 1e-9 * a.users[k].singular_values(0));
            // same column space and same effective gains: H_k T_k T_k* H_k* agree
            const CMatrix ga = h[k] * a.users[k].precoder, gb = h[k] * b->users[k].precoder;
            EXPECT_LT((ga * ga.adjoint() - gb * gb.adjoint()).norm(), 1e-9 * (ga * ga.adjoint()).norm());
            EXPECT_TRUE((b->users[k].precoder.adjoint() * b->users[k].precoder).isApprox(CMatrix::Identity(2, 2), 1e-9));
        }
        EXPECT_LT(max_leakage<PrecodingSolution>(h, *b), 1e-8);
    }
}

TEST(Bd, RankDeficientChannelReducesStreams) {
    Rng rng(9);
    auto h = random_channels(rng, 2, 2, 8);
    h[1].row(1) = 2.0 * h[1].row(0);
    const auto sol = bd_precoders(h, 4);
    EXPECT_EQ(sol.streams(1), 1);
    EXPECT_TRUE(sol.users[1].rank_reduced);
    EXPECT_FALSE(bd_precoders_gram(h, {}, 4).has_value());
    const auto fast = bd_precoders_fast(h, {}, 4);
    EXPECT_EQ(fast.streams(1), 1);
}

TEST(Bd, DeterministicPhases) {
    Rng rng(10);
    const auto h = random_channels(rng, 3, 2, 12);
    const auto a = bd_precoders(h, 4), b = bd_precoders(h, 4);
    for (int k = 0; k < 3; ++k) EXPECT_TRUE(a.users[k].precoder == b.users[k].precoder);
    for (int k = 0; k < 3; ++k)
        for (Eigen::Index j = 0; j < a.users[k].precoder.cols(); ++j) {
            const auto& col = a.users[k].precoder.col(j);
            Eigen::Index i = 0;
            while (std::abs(col(i)) <= 1e-12 * col.cwiseAbs().maxCoeff()) ++i;
            EXPECT_NEAR(col(i).imag(), 0.0, 1e-14);
            EXPECT_GT(col(i).real(), 0.0);
        }
}
