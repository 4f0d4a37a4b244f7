#pragma once

// Shared helpers for the unit tests and the acceptance runner: random
// instances and finite-difference gradient audits.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cpl/cpl.hpp"

namespace cpl::testing {

inline std::vector<double> random_vector(Rng& rng, std::size_t dim, double scale = 1.0) {
    std::vector<double> v(dim);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

inline Vector random_unit(Rng& rng, std::size_t dim) { return Vector(normalized(random_vector(rng, dim))); }

// ||a - b||_inf / max(||a||_inf, ||b||_inf), with a floor so that two
// vanishing gradients compare as equal.
inline double max_rel_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, scale = 1e-8;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return diff / scale;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("cpl_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

constexpr double kFdStep = 1e-6;
constexpr double kKinkGuard = 1e-3;

// Batch of unit embeddings over a few classes.
inline std::vector<EmbeddedSample> random_batch(Rng& rng, std::size_t m, std::size_t dim, int n_classes = 2) {
    std::vector<EmbeddedSample> batch;
    for (std::size_t i = 0; i < m; ++i) {
        const auto k = static_cast<ClassId>(rng.index(static_cast<std::uint64_t>(n_classes)));
        const int label = rng.uniform() < 0.5 ? 1 : 0;
        batch.emplace_back(k, random_unit(rng, dim), random_unit(rng, dim), label);
    }
    return batch;
}

// Flat layout [o_0, s_0, o_1, s_1, ...]; the loss is evaluated on the
// re-normalized vectors so finite differences stay on valid inputs.
inline std::vector<double> flatten(std::span<const EmbeddedSample> batch) {
    std::vector<double> x;
    for (const auto& s : batch) {
        x.insert(x.end(), s.origin.values().begin(), s.origin.values().end());
        x.insert(x.end(), s.mutant.values().begin(), s.mutant.values().end());
    }
    return x;
}

inline std::vector<EmbeddedSample> unflatten(std::span<const EmbeddedSample> like, std::span<const double> x) {
    std::vector<EmbeddedSample> out;
    std::size_t at = 0;
    for (const auto& s : like) {
        const std::size_t d = s.origin.dim();
        Vector o(normalized(x.subspan(at, d)));
        Vector m(normalized(x.subspan(at + d, d)));
        out.emplace_back(s.class_id, std::move(o), std::move(m), s.label);
        at += 2 * d;
    }
    return out;
}

inline std::vector<double> flat_grads(const LossOutput& out) {
    std::vector<double> g;
    for (std::size_t i = 0; i < out.origin_grads.size(); ++i) {
        g.insert(g.end(), out.origin_grads[i].begin(), out.origin_grads[i].end());
        g.insert(g.end(), out.mutant_grads[i].begin(), out.mutant_grads[i].end());
    }
    return g;
}

template <class LossFn>
double audit_batch_loss(std::span<const EmbeddedSample> batch, LossFn&& loss) {
    const auto x = flatten(batch);
    const auto analytic = flat_grads(loss(batch));
    const auto numeric = finite_difference_gradient(
        [&](std::span<const double> at) { return loss(unflatten(batch, at)).value; }, x, kFdStep);
    return max_rel_error(analytic, numeric);
}

inline VergeRegistry random_verges(Rng& rng, int n_classes, double gamma = 12.0) {
    VergeRegistry reg{EmaParams(gamma)};
    for (int k = 0; k < n_classes; ++k) reg.set(k, VergeState{rng.uniform(), rng.uniform()});
    return reg;
}

// True when every hinge argument of the batch is at least kKinkGuard away
// from its kink.
inline bool cpl_clear_of_kinks(std::span<const EmbeddedSample> batch, const VergeRegistry& reg,
                               const LossConfig& cfg) {
    for (const auto& s : batch) {
        const auto v = reg.find(s.class_id);
        if (!v || !v->plus || !v->minus) continue;
        const double d = cosine_distance(s.origin, s.mutant);
        const double u = s.label == 1 ? d - *v->minus + cfg.zeta : *v->plus - d + cfg.zeta;
        if (std::abs(u) <= kKinkGuard) return false;
    }
    return true;
}

// One randomized instance per call; each returns the max relative error and
// redraws internally until the instance is clear of hinge kinks.
inline double audit_cpl_instance(Rng& rng) {
    for (;;) {
        const std::size_t m = 1 + rng.index(8), dim = 4 + rng.index(13);
        auto batch = random_batch(rng, m, dim);
        auto reg = random_verges(rng, 2);
        LossConfig cfg;
        cfg.zeta = rng.uniform(-0.1, 0.1);
        if (!cpl_clear_of_kinks(batch, reg, cfg)) continue;
        return audit_batch_loss(batch, [&](std::span<const EmbeddedSample> b) { return cpl(b, reg, cfg); });
    }
}

inline double audit_contrastive_instance(Rng& rng) {
    for (;;) {
        const std::size_t m = 1 + rng.index(8), dim = 4 + rng.index(13);
        auto batch = random_batch(rng, m, dim);
        LossConfig cfg;
        cfg.zeta = rng.uniform(0.0, 0.8);
        bool clear = true;
        for (const auto& s : batch)
            if (s.label == 0 && std::abs(cfg.zeta - cosine_distance(s.origin, s.mutant)) <= kKinkGuard) clear = false;
        if (!clear) continue;
        return audit_batch_loss(batch, [&](std::span<const EmbeddedSample> b) { return contrastive(b, cfg); });
    }
}

inline double audit_triplet_instance(Rng& rng) {
    for (;;) {
        const std::size_t dim = 4 + rng.index(13);
        const auto a = random_unit(rng, dim), p = random_unit(rng, dim), n = random_unit(rng, dim);
        const double margin = rng.uniform(0.0, 0.5);
        const double u = cosine_distance(a, p) - cosine_distance(a, n) + margin;
        if (std::abs(u) <= kKinkGuard) continue;
        const auto out = triplet(a, p, n, margin);
        std::vector<double> x(a.values().begin(), a.values().end());
        x.insert(x.end(), p.values().begin(), p.values().end());
        x.insert(x.end(), n.values().begin(), n.values().end());
        std::vector<double> analytic = out.origin_grads[0];
        analytic.insert(analytic.end(), out.mutant_grads[0].begin(), out.mutant_grads[0].end());
        analytic.insert(analytic.end(), out.mutant_grads[1].begin(), out.mutant_grads[1].end());
        const auto numeric = finite_difference_gradient(
            [&](std::span<const double> at) {
                return triplet(Vector(normalized(at.subspan(0, dim))), Vector(normalized(at.subspan(dim, dim))),
                               Vector(normalized(at.subspan(2 * dim, dim))), margin)
                    .value;
            },
            x, kFdStep);
        return max_rel_error(analytic, numeric);
    }
}

inline double audit_cross_entropy_instance(Rng& rng) {
    const std::vector<double> logits{rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const int label = rng.uniform() < 0.5 ? 1 : 0;
    const auto analytic = cross_entropy(logits, label).logit_grads[0];
    const auto numeric = finite_difference_gradient(
        [&](std::span<const double> at) { return cross_entropy(at, label).value; }, logits, kFdStep);
    return max_rel_error(analytic, numeric);
}

inline double audit_joint_instance(Rng& rng) {
    const double lambda = rng.uniform(0.0, 2.0);
    const std::vector<double> at{rng.uniform(0.0, 1.0), rng.uniform(0.0, 2.0)};
    const std::vector<double> analytic{lambda, 1.0};
    const auto numeric = finite_difference_gradient(
        [&](std::span<const double> x) { return joint(x[0], x[1], lambda); }, at, kFdStep);
    return max_rel_error(analytic, numeric);
}

struct CompositeCase {
    TrainConfig config;
    Model model;
    VergeRegistry registry;
    std::vector<FeatureSample> batch;
};

// Small encoder + head, 4-sample batch, loss kind chosen by the caller.
inline CompositeCase random_composite(Rng& rng, LossKind kind) {
    for (;;) {
        TrainConfig cfg;
        cfg.loss_kind = kind;
        cfg.dims = {6, 5, 4, 3};
        cfg.loss.zeta = kind == LossKind::ce_plus_contrastive ? rng.uniform(0.05, 0.6) : rng.uniform(-0.1, 0.1);
        CompositeCase c{cfg, init_model(rng.index(1u << 30), cfg.dims), random_verges(rng, 2), {}};
        // Non-zero biases so their gradients are exercised too.
        auto e = c.model.encoder.mutable_data();
        for (std::size_t i = c.model.encoder.off_b1(); i < c.model.encoder.off_w2(); ++i) e[i] = rng.uniform(-0.3, 0.3);
        auto h = c.model.head.mutable_data();
        for (std::size_t i = c.model.head.off_b3(); i < c.model.head.off_w4(); ++i) h[i] = rng.uniform(-0.3, 0.3);
        for (int i = 0; i < 4; ++i)
            c.batch.push_back({static_cast<ClassId>(rng.index(2)), random_vector(rng, 6), random_vector(rng, 6),
                               rng.uniform() < 0.5 ? 1 : 0});

        std::vector<EmbeddedSample> emb;
        for (const auto& s : c.batch)
            emb.emplace_back(s.class_id, Vector(encode_cached(c.model.encoder, s.origin).output),
                             Vector(encode_cached(c.model.encoder, s.mutant).output), s.label);
        bool clear = true;
        if (kind == LossKind::ce_plus_cpl) clear = cpl_clear_of_kinks(emb, c.registry, cfg.loss);
        if (kind == LossKind::ce_plus_contrastive)
            for (const auto& s : emb)
                if (s.label == 0 && std::abs(cfg.loss.zeta - cosine_distance(s.origin, s.mutant)) <= kKinkGuard)
                    clear = false;
        if (kind == LossKind::ce_plus_triplet)
            for (const auto& a : emb)
                for (const auto& n : emb)
                    if (a.label == 1 && n.label == 0 && a.class_id == n.class_id &&
                        std::abs(cosine_distance(a.origin, a.mutant) - cosine_distance(a.origin, n.mutant) +
                                 cfg.loss.triplet_margin) <= kKinkGuard)
                        clear = false;
        if (clear) return c;
    }
}

// Whole-model gradient (encoder + head parameters) vs central differences.
inline double audit_composite(const CompositeCase& c) {
    VergeRegistry reg = c.registry;
    const auto g = joint_gradients(c.model, reg, c.config, c.batch, false);
    std::vector<double> analytic = g.encoder;
    analytic.insert(analytic.end(), g.head.begin(), g.head.end());

    std::vector<double> x(c.model.encoder.data().begin(), c.model.encoder.data().end());
    x.insert(x.end(), c.model.head.data().begin(), c.model.head.data().end());
    const std::size_t n_enc = c.model.encoder.data().size();
    const auto numeric = finite_difference_gradient(
        [&](std::span<const double> at) {
            Model m = c.model;
            std::ranges::copy(at.subspan(0, n_enc), m.encoder.mutable_data().begin());
            std::ranges::copy(at.subspan(n_enc), m.head.mutable_data().begin());
            VergeRegistry r = c.registry;
            return joint_gradients(m, r, c.config, c.batch, false).metrics.joint_loss;
        },
        x, kFdStep);
    return max_rel_error(analytic, numeric);
}

// Unit vector with the given cosine to e0 = (1, 0): (c, sqrt(1 - c^2)).
inline std::vector<double> at_cosine(double c) { return {c, std::sqrt(1.0 - c * c)}; }

// Two-sample batch shared by the loss and trainer fixtures: sample 1 is
// equivalent at distance 0.6 with v^- = 0.5, sample 2 is non-equivalent at
// distance 0.05 with v^+ = 0.1 (zeta = 0.05, alpha = 2, beta = 0.5).
inline std::vector<EmbeddedSample> fixture_batch() {
    const std::vector<double> e0{1.0, 0.0};
    return {EmbeddedSample(1, Vector(e0), Vector(at_cosine(1.0 - 2 * 0.6)), 1),
            EmbeddedSample(1, Vector(e0), Vector(at_cosine(1.0 - 2 * 0.05)), 0)};
}

inline VergeRegistry fixture_verges() {
    VergeRegistry reg{EmaParams(12.0)};
    reg.set(1, VergeState{0.1, 0.5});
    return reg;
}

inline LossConfig fixture_loss_config() {
    LossConfig cfg;
    cfg.zeta = 0.05;
    cfg.alpha = 2.0;
    cfg.beta = 0.5;
    cfg.lambda = 1.15;
    return cfg;
}

} // namespace cpl::testing
