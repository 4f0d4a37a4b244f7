#include <gtest/gtest.h>

#include "support.hpp"

using namespace cpl;
using cpl::testing::random_unit;
using cpl::testing::random_vector;

TEST(CosineDistance, Collinear) { EXPECT_DOUBLE_EQ(cosine_distance(Vector{1, 0}, Vector{1, 0}), 0.0); }
TEST(CosineDistance, Antiparallel) { EXPECT_DOUBLE_EQ(cosine_distance(Vector{1, 0}, Vector{-1, 0}), 1.0); }
TEST(CosineDistance, Orthogonal) { EXPECT_DOUBLE_EQ(cosine_distance(Vector{1, 0}, Vector{0, 1}), 0.5); }

TEST(CosineDistance, RejectsBadInput) {
    EXPECT_THROW(cosine_distance(Vector{1, 0}, Vector{1, 0, 0}), DimensionError);
    EXPECT_THROW(cosine_distance(Vector{0, 0}, Vector{1, 0}), DegenerateVectorError);
}

TEST(CosineDistance, SymmetricAndScaleInvariant) {
    Rng rng(11);
    for (int t = 0; t < 500; ++t) {
        const std::size_t dim = 1 + rng.index(20);
        const Vector a(random_vector(rng, dim)), b(random_vector(rng, dim));
        EXPECT_EQ(cosine_distance(a, b), cosine_distance(b, a));
        const double d = cosine_distance(a, b);
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);

        std::vector<double> scaled(a.values());
        const double c = rng.uniform(0.01, 100.0);
        for (double& x : scaled) x *= c;
        EXPECT_NEAR(cosine_distance(a, Vector(scaled)), 0.0, 1e-12);
    }
}

TEST(EmaStep, Examples) {
    EXPECT_DOUBLE_EQ(ema_step(0.8, 0.2, EmaParams(3)), 0.5);
    EXPECT_DOUBLE_EQ(ema_step(0.4, 0.4, EmaParams(7.5)), 0.4);
    EXPECT_DOUBLE_EQ(ema_step(0.0, 1.0, EmaParams(1)), 1.0);
    EXPECT_THROW(ema_step(0.1, std::nan(""), EmaParams(3)), NumericError);
}

TEST(EmaBatch, Examples) {
    const std::vector<double> xs{0.2, 0.6};
    EXPECT_NEAR(ema_batch(0.8, xs, EmaParams(3)), 0.55, 1e-15);
    const std::vector<double> one{0.37};
    EXPECT_DOUBLE_EQ(ema_batch(0.9, one, EmaParams(12)), ema_step(0.9, 0.37, EmaParams(12)));
    const std::vector<double> two{0.2, 0.4};
    EXPECT_NEAR(ema_batch(0.5, two, EmaParams(12)), 0.445562, 1e-6);
    EXPECT_THROW(ema_batch(0.5, std::span<const double>{}, EmaParams(12)), EmptyBatchError);
}

TEST(EmaBatch, MatchesSequentialFoldAndStaysInHull) {
    Rng rng(5);
    for (int t = 0; t < 1000; ++t) {
        const EmaParams p(rng.uniform(1.0, 50.0));
        const double current = rng.uniform();
        std::vector<double> xs(1 + rng.index(64));
        for (double& x : xs) x = rng.uniform();
        double folded = current;
        for (double x : xs) folded = ema_step(folded, x, p);
        const double closed = ema_batch(current, xs, p);
        EXPECT_NEAR(closed, folded, 1e-12);
        const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
        EXPECT_GE(closed, std::min(current, *lo) - 1e-15);
        EXPECT_LE(closed, std::max(current, *hi) + 1e-15);
    }
}

TEST(FiniteDifference, SquaredNorm) {
    const std::vector<double> at{1, 2};
    auto g = finite_difference_gradient([](std::span<const double> x) { return dot(x, x); }, at, 1e-5);
    EXPECT_NEAR(g[0], 2.0, 1e-6);
    EXPECT_NEAR(g[1], 4.0, 1e-6);
}

TEST(FiniteDifference, ConstantIsZero) {
    const std::vector<double> at{0.3, -2, 7};
    for (double gi : finite_difference_gradient([](std::span<const double>) { return 4.2; }, at, 1e-4))
        EXPECT_EQ(gi, 0.0);
}

TEST(FiniteDifference, NonFiniteThrows) {
    const std::vector<double> at{1};
    EXPECT_THROW(finite_difference_gradient([](std::span<const double>) { return INFINITY; }, at, 1e-4),
                 NumericError);
}

TEST(FiniteDifference, AgreesWithDistanceGradient) {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const std::size_t dim = 2 + rng.index(15);
        const auto a = random_vector(rng, dim), b = random_vector(rng, dim);
        const auto g = cosine_distance_grad(a, b);
        const auto fd =
            finite_difference_gradient([&](std::span<const double> x) { return cosine_distance(x, b); }, a, 1e-6);
        EXPECT_LT(cpl::testing::max_rel_error(g.d_a, fd), 1e-5);
    }
}
