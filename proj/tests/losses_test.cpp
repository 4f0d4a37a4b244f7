#include <gtest/gtest.h>

#include "support.hpp"

using namespace cpl;
namespace t = cpl::testing;

namespace {
EmbeddedSample at_distance(ClassId k, double d, int label) {
    return EmbeddedSample(k, Vector{1.0, 0.0}, Vector(t::at_cosine(1.0 - 2.0 * d)), label);
}
} // namespace

TEST(Cpl, TwoSampleFixture) {
    const auto batch = t::fixture_batch();
    const auto out = cpl::cpl(batch, t::fixture_verges(), t::fixture_loss_config());
    EXPECT_NEAR(out.value, (0.15 * 0.15 + std::sqrt(0.10)) / 2, 1e-12);
    EXPECT_NEAR(out.value, 0.169364, 1e-6);
    EXPECT_EQ(out.skipped_count, 0u);
}

TEST(Cpl, NegativeHingeArgumentIsZero) {
    VergeRegistry reg{EmaParams(12)};
    reg.set(0, VergeState{0.1, 0.4});
    LossConfig cfg;
    cfg.zeta = -0.05;
    const std::vector<EmbeddedSample> batch{at_distance(0, 0.3, 1)};
    const auto out = cpl::cpl(batch, reg, cfg);
    EXPECT_EQ(out.value, 0.0);
    for (double g : t::flat_grads(out)) EXPECT_EQ(g, 0.0);
}

TEST(Cpl, UninitializedOppositeVergeSkipsButKeepsDivisor) {
    VergeRegistry reg{EmaParams(12)};
    reg.set(0, VergeState{std::nullopt, 0.2});
    LossConfig cfg;
    cfg.zeta = 0.0;
    // equivalent at 0.6 vs minus 0.2 -> 0.4^2; the non-equivalent has no plus verge
    const std::vector<EmbeddedSample> batch{at_distance(0, 0.6, 1), at_distance(0, 0.5, 0)};
    const auto out = cpl::cpl(batch, reg, cfg);
    EXPECT_NEAR(out.value, 0.16 / 2, 1e-12);
    EXPECT_EQ(out.skipped_count, 1u);
}

TEST(Cpl, RejectsBadBatches) {
    const auto reg = t::fixture_verges();
    EXPECT_THROW(cpl::cpl(std::span<const EmbeddedSample>{}, reg, LossConfig{}), EmptyBatchError);
    const std::vector<EmbeddedSample> raw{EmbeddedSample(1, Vector{2.0, 0.0}, Vector{1.0, 0.0}, 1)};
    EXPECT_THROW(cpl::cpl(raw, reg, LossConfig{}), NormalizationError);
}

TEST(Contrastive, BranchValues) {
    LossConfig cfg;
    cfg.zeta = 0.09;
    auto one = [&](double d, int l) {
        const std::vector<EmbeddedSample> b{at_distance(0, d, l)};
        return contrastive(b, cfg).value;
    };
    EXPECT_NEAR(one(0.3, 1), 0.3, 1e-12);
    EXPECT_EQ(one(0.12, 0), 0.0);
    EXPECT_NEAR(one(0.02, 0), 0.07, 1e-12);
}

TEST(Triplet, Values) {
    const Vector a{1.0, 0.0};
    const Vector p(t::at_cosine(1.0 - 2 * 0.1)), n(t::at_cosine(1.0 - 2 * 0.6));
    EXPECT_EQ(triplet(a, p, n, 0.2).value, 0.0);
    const Vector p2(t::at_cosine(1.0 - 2 * 0.4)), n2(t::at_cosine(1.0 - 2 * 0.3));
    EXPECT_NEAR(triplet(a, p2, n2, 0.2).value, 0.3, 1e-12);
    EXPECT_DOUBLE_EQ(triplet(a, p, p, 0.2).value, 0.2);
}

TEST(Triplet, InBatchSamplerFormsSameClassPairs) {
    const std::vector<EmbeddedSample> batch{at_distance(0, 0.4, 1), at_distance(0, 0.3, 0), at_distance(1, 0.2, 1)};
    const auto out = triplet_in_batch(batch, 0.2);
    EXPECT_EQ(out.skipped_count, 1u);  // class 1 has no negative
    EXPECT_GT(out.value, 0.0);
}

TEST(CrossEntropy, Values) {
    const std::vector<double> uniform{0, 0}, saturated{20, -20}, skew{1, 3};
    EXPECT_NEAR(cross_entropy(uniform, 1).value, 0.693147, 1e-6);
    EXPECT_LT(cross_entropy(saturated, 0).value, 1e-8);
    EXPECT_NEAR(cross_entropy(skew, 1).value, 0.126928, 1e-6);
    const std::vector<double> bad{NAN, 0};
    EXPECT_THROW(cross_entropy(bad, 0), NumericError);
}

TEST(Joint, Values) {
    EXPECT_NEAR(joint(0.169364, 0.693147, 1.15), 0.887916, 1e-6);
    EXPECT_EQ(joint(0.0, 0.42, 3.0), 0.42);
    EXPECT_EQ(joint(0.42, 0.0, 1.0), 0.42);
}

TEST(GradientAudit, AllLosses) {
    Rng rng(101);
    for (int i = 0; i < 40; ++i) {
        EXPECT_LT(t::audit_cpl_instance(rng), 1e-4);
        EXPECT_LT(t::audit_contrastive_instance(rng), 1e-4);
        EXPECT_LT(t::audit_triplet_instance(rng), 1e-4);
        EXPECT_LT(t::audit_cross_entropy_instance(rng), 1e-4);
        EXPECT_LT(t::audit_joint_instance(rng), 1e-4);
    }
}

TEST(LossProperties, NonNegativeAndPermutationInvariant) {
    Rng rng(55);
    for (int trial = 0; trial < 200; ++trial) {
        auto batch = t::random_batch(rng, 1 + rng.index(8), 4 + rng.index(8));
        const auto reg = t::random_verges(rng, 2);
        LossConfig cfg;
        cfg.zeta = rng.uniform(-0.1, 0.2);
        const double c = cpl::cpl(batch, reg, cfg).value;
        const double k = contrastive(batch, cfg).value;
        EXPECT_GE(c, 0.0);
        EXPECT_GE(k, 0.0);
        EXPECT_GE(triplet_in_batch(batch, 0.2).value, 0.0);

        std::vector<std::size_t> idx(batch.size());
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(std::span<std::size_t>(idx));
        std::vector<EmbeddedSample> shuffled;
        for (auto i : idx) shuffled.push_back(batch[i]);
        EXPECT_NEAR(cpl::cpl(shuffled, reg, cfg).value, c, 1e-12);
        EXPECT_NEAR(contrastive(shuffled, cfg).value, k, 1e-12);
    }
}

TEST(LossProperties, CplMonotoneInDistanceAndZeta) {
    VergeRegistry reg{EmaParams(12)};
    reg.set(0, VergeState{0.3, 0.4});
    LossConfig cfg;
    cfg.zeta = -0.05;
    double prev_eq = -1, prev_neq = 1e9;
    for (double d = 0.0; d <= 1.0; d += 0.01) {
        const std::vector<EmbeddedSample> eq{at_distance(0, d, 1)}, neq{at_distance(0, d, 0)};
        const double ve = cpl::cpl(eq, reg, cfg).value, vn = cpl::cpl(neq, reg, cfg).value;
        EXPECT_GE(ve, prev_eq);
        EXPECT_LE(vn, prev_neq);
        prev_eq = ve;
        prev_neq = vn;
    }
    Rng rng(9);
    const auto batch = t::random_batch(rng, 6, 8);
    const auto r2 = t::random_verges(rng, 2);
    double prev = -1;
    for (double z = -0.3; z <= 0.3; z += 0.01) {
        cfg.zeta = z;
        const double v = cpl::cpl(batch, r2, cfg).value;
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(LossProperties, ContrastiveAllEquivalentIsMeanDistance) {
    Rng rng(12);
    auto batch = t::random_batch(rng, 7, 6);
    double mean = 0;
    std::vector<EmbeddedSample> eq;
    for (const auto& s : batch) {
        eq.emplace_back(s.class_id, s.origin, s.mutant, 1);
        mean += cosine_distance(s.origin, s.mutant) / 7.0;
    }
    EXPECT_NEAR(contrastive(eq, LossConfig{}).value, mean, 1e-12);
}

TEST(LossConfigValidation, RejectsBadValues) {
    LossConfig cfg;
    cfg.gamma = 0.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lambda = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_NO_THROW(LossConfig{}.validate());
}
