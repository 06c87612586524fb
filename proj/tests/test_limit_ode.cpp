#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "mfq/kernel.hpp"
#include "mfq/limit_ode.hpp"

namespace {

Eigen::MatrixXd spd(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd B(n, n);
    for (Eigen::Index i = 0; i < B.rows(); ++i)
        for (Eigen::Index j = 0; j < B.cols(); ++j) B(i, j) = nd(g);
    return B * B.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
}

} // namespace

TEST(Rhs, VanishesOnlyAtFixedPoint) {
    const auto mdp = mfq::validate_mdp(fixtures::random_spec(4, 3, 7, 0.3));
    const auto V = mfq::bellman_solve_infinite(mdp, 1e-14);
    const auto pi = mfq::stationary_state_distribution(mdp);
    const Eigen::MatrixXd A = spd(12, 1);
    const auto at_v = mfq::ode_rhs_infinite(V.values, A, pi.probs, mdp, 0.3);
    for (double d : at_v) EXPECT_LT(std::abs(d), 1e-12);
    std::mt19937_64 g(5);
    std::normal_distribution<double> nd;
    for (int k = 0; k < 20; ++k) {
        auto h = V.values;
        for (auto& v : h) v += 0.1 * nd(g);
        const auto d = mfq::ode_rhs_infinite(h, A, pi.probs, mdp, 0.3);
        double sup = 0.0;
        for (double v : d) sup = std::max(sup, std::abs(v));
        EXPECT_GT(sup, 1e-8);
    }
}

TEST(Rhs, ScalarReduction) {
    const auto mdp = mfq::validate_mdp(fixtures::single_state(1.0, 0.5));
    Eigen::MatrixXd A(1, 1);
    A << 3.0;
    const std::vector<double> pi{1.0};
    for (double h : {-1.0, 0.0, 2.0, 4.0}) {
        const auto d = mfq::ode_rhs_infinite(std::vector<double>{h}, A, pi, mdp, 0.5);
        EXPECT_NEAR(d[0], 3.0 * (1.0 - 0.5 * h), 1e-15);
    }
}

TEST(Rhs, FiniteHorizonFixedPointAndZeroDiscount) {
    const auto mdp = mfq::validate_mdp(fixtures::random_finite_spec(3, 2, 3, 2, 1.0));
    const auto V = mfq::bellman_solve_finite(mdp);
    const auto pi = mfq::time_marginals(mdp);
    const Eigen::MatrixXd A = spd(6, 3);
    for (double d : mfq::ode_rhs_finite(V.values, A, pi.per_time, mdp, 1.0)) EXPECT_LT(std::abs(d), 1e-12);

    // gamma = 0 decouples slices: each slice relaxes toward its own reward.
    auto h = V.values;
    for (auto& v : h) v += 1.0;
    const auto d = mfq::ode_rhs_finite(h, A, pi.per_time, mdp, 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
        std::vector<double> w(6);
        const auto r = mdp.rewards_at(j);
        for (std::size_t i = 0; i < 6; ++i) w[i] = pi.per_time[j][i] * (r[i] - h[j * 6 + i]);
        const Eigen::VectorXd expect = A * Eigen::Map<Eigen::VectorXd>(w.data(), 6);
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(d[j * 6 + i], expect(static_cast<Eigen::Index>(i)), 1e-13);
    }
    for (std::size_t i = 18; i < 24; ++i) EXPECT_EQ(d[i], 0.0);
}

TEST(Rhs, RegressionEdgeCases) {
    const Eigen::MatrixXd A = spd(4, 9);
    const std::vector<double> y{0.1, -0.2, 0.3, 0.4};
    for (double d : mfq::ode_rhs_regression(y, A, y)) EXPECT_EQ(d, 0.0);
    const auto d = mfq::ode_rhs_regression(std::vector<double>(4, 0.0), Eigen::MatrixXd::Identity(4, 4), y);
    EXPECT_EQ(d, y);
}

TEST(Integrate, ZeroRhsIsStationary) {
    const auto sol = mfq::integrate([](std::span<const double> h) { return mfq::Vector(h.size(), 0.0); },
                                    {1.0, -2.0}, 1.0, 0.1);
    EXPECT_EQ(sol.values.back(), (mfq::Vector{1.0, -2.0}));
    EXPECT_EQ(sol.times.size(), 11u);
}

TEST(Integrate, ExponentialDecay) {
    const auto sol = mfq::integrate([](std::span<const double> h) { return mfq::Vector{-h[0]}; }, {1.0}, 5.0, 0.01);
    EXPECT_NEAR(sol.values.back()[0], std::exp(-5.0), 1e-8);
    EXPECT_NEAR(sol.times.back(), 5.0, 1e-12);
}

TEST(Integrate, GridLandsOnEnd) {
    const auto sol =
        mfq::integrate([](std::span<const double> h) { return mfq::Vector(h.size(), 1.0); }, {0.0}, 1.0, 0.3, 2);
    EXPECT_DOUBLE_EQ(sol.step_size, 0.25);
    EXPECT_EQ(sol.times, (std::vector<double>{0.0, 0.5, 1.0}));
    EXPECT_NEAR(sol.values.back()[0], 1.0, 1e-15);
}

TEST(Integrate, BlowUpIsReported) {
    try {
        (void)mfq::integrate([](std::span<const double> h) { return mfq::Vector{h[0] * h[0]}; }, {1.0}, 10.0, 0.1);
        FAIL();
    } catch (const mfq::Error& e) {
        EXPECT_EQ(e.code(), mfq::ErrorCode::NonFiniteState);
    }
    EXPECT_THROW((void)mfq::integrate([](std::span<const double> h) { return mfq::Vector(h.size()); }, {0.0}, 1.0, 0.0),
                 mfq::Error);
}

TEST(BellmanResidual, ZeroAtSolutionAndScalarValue) {
    const auto mdp = mfq::validate_mdp(fixtures::single_state(1.0, 0.5));
    mfq::ValueTable h(1, 1, 1, mfq::TableKind::Generic);
    h.values = {2.0};
    EXPECT_EQ(mfq::bellman_residual(h, mdp, 0.5).values[0], 0.0);
    h.values = {0.0};
    EXPECT_EQ(mfq::bellman_residual(h, mdp, 0.5).values[0], 1.0);
    const auto fin = mfq::validate_mdp(fixtures::random_finite_spec(3, 2, 2, 3, 1.0));
    const auto V = mfq::bellman_solve_finite(fin);
    for (double r : mfq::bellman_residual(V, fin, 1.0).values) EXPECT_LT(std::abs(r), 1e-15);
}

TEST(Lyapunov, KnownValues) {
    mfq::OdeSolution sol;
    sol.times = {0.0, 1.0};
    sol.values = {{1.0, 2.0}, {6.0, 2.0}};
    const std::vector<double> V{1.0, 2.0};
    const auto tr = mfq::lyapunov_trace(sol, V, Eigen::MatrixXd::Identity(2, 2));
    EXPECT_EQ(tr.y_values[0], 0.0);
    EXPECT_DOUBLE_EQ(tr.y_values[1], 12.5);
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, 2.0, 2.0, 1.0;
    try {
        (void)mfq::lyapunov_trace(sol, V, bad);
        FAIL();
    } catch (const mfq::Error& e) {
        EXPECT_EQ(e.code(), mfq::ErrorCode::NotPositiveDefinite);
    }
}

TEST(Helpers, DecayFitAndSettling) {
    std::vector<double> t, n;
    for (int i = 0; i <= 50; ++i) {
        t.push_back(0.1 * i);
        n.push_back(3.0 * std::exp(-0.7 * t.back()));
    }
    EXPECT_NEAR(mfq::fit_decay_rate(t, n, 0.0), 0.7, 1e-12);
    EXPECT_THROW((void)mfq::fit_decay_rate(t, n, 10.0), mfq::Error);

    mfq::OdeSolution sol;
    sol.times = {0.0, 1.0, 2.0, 3.0};
    sol.values = {{1.0}, {1e-8}, {0.1}, {1e-9}};
    const std::vector<double> V{0.0};
    EXPECT_EQ(mfq::slice_settling_time(sol, V, 0, 1, 1e-6), std::optional<double>(3.0));
    sol.values.back() = {1.0};
    EXPECT_FALSE(mfq::slice_settling_time(sol, V, 0, 1, 1e-6).has_value());
    EXPECT_TRUE(mfq::non_increasing(std::vector<double>{3.0, 2.0, 2.0 + 1e-12}, 1e-10));
    EXPECT_FALSE(mfq::non_increasing(std::vector<double>{3.0, 2.0, 2.1}, 1e-10));
}
