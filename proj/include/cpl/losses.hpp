#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cpl/error.hpp"
#include "cpl/math.hpp"
#include "cpl/sample.hpp"
#include "cpl/verge.hpp"

namespace cpl {

struct LossConfig {
    double gamma = 12.0;          // verge EMA smoothing factor
    double alpha = 2.0;           // exponent of the equivalent-side hinge
    double beta = 0.5;            // exponent of the non-equivalent-side hinge
    double zeta = -0.05;          // margin; may be negative
    double lambda = 1.15;         // weight of the metric loss in the joint loss
    double hinge_epsilon = 1e-6;  // floor of the hinge argument inside derivative factors
    double triplet_margin = 0.2;

    void validate() const {
        auto finite = [](double v) { return std::isfinite(v); };
        if (!finite(gamma) || gamma < 1.0) throw ConfigError("gamma must be >= 1 (EMA step 2/(gamma+1) <= 1)");
        if (!finite(alpha) || alpha <= 0.0) throw ConfigError("alpha must be > 0");
        if (!finite(beta) || beta <= 0.0) throw ConfigError("beta must be > 0");
        if (!finite(zeta)) throw ConfigError("zeta must be finite");
        // lambda = 0 is accepted: it is the degenerate joint loss used to check
        // that the metric branch vanishes exactly.
        if (!finite(lambda) || lambda < 0.0) throw ConfigError("lambda must be >= 0");
        if (!(hinge_epsilon > 0.0 && hinge_epsilon <= 1e-3))
            throw ConfigError("hinge_epsilon must lie in (0, 1e-3]");
        if (!finite(triplet_margin)) throw ConfigError("triplet_margin must be finite");
    }

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

using Grad = std::vector<double>;

// Loss value plus gradients. For batch losses origin_grads[i] and
// mutant_grads[i] belong to sample i. triplet() reports the anchor in
// origin_grads[0] and the positive/negative in mutant_grads[0]/[1].
struct LossOutput {
    double value = 0.0;
    std::vector<Grad> origin_grads;
    std::vector<Grad> mutant_grads;
    std::vector<Grad> logit_grads;
    std::size_t skipped_count = 0;
};

namespace detail {

inline void check_batch(std::span<const EmbeddedSample> batch) {
    if (batch.empty()) throw EmptyBatchError("loss over an empty batch");
    const std::size_t dim = batch.front().origin.dim();
    for (const auto& s : batch) {
        if (s.origin.dim() != dim || s.mutant.dim() != dim)
            throw DimensionError("inconsistent embedding dimensions in batch");
        if (!is_unit(s.origin.span()) || !is_unit(s.mutant.span()))
            throw NormalizationError("embeddings must be unit-norm within 1e-6");
    }
}

inline void check_unit(const Vector& v) {
    if (!is_unit(v.span())) throw NormalizationError("embeddings must be unit-norm within 1e-6");
}

inline LossOutput zero_output(std::span<const EmbeddedSample> batch) {
    LossOutput out;
    for (const auto& s : batch) {
        out.origin_grads.emplace_back(s.origin.dim(), 0.0);
        out.mutant_grads.emplace_back(s.mutant.dim(), 0.0);
    }
    return out;
}

inline void axpy(double a, const std::vector<double>& x, Grad& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// [u]_+^p and its derivative in u. The derivative factor is evaluated with u
// floored at eps so fractional exponents stay bounded at activation onset.
struct Hinge {
    double value;
    double slope;
};

inline Hinge powered_hinge(double u, double p, double eps) {
    if (u <= 0.0) return {0.0, 0.0};
    return {std::pow(u, p), p * std::pow(std::max(u, eps), p - 1.0)};
}

} // namespace detail

// Cluster Purge Loss over a minibatch, reading verges as constants:
//   (1/m) sum_i  l_i   * [dist_i - v_k^- + zeta]_+^alpha
//              + (1-l_i) * [v_k^+ - dist_i + zeta]_+^beta
// A sample whose opposite verge is still uninitialized contributes 0 and is
// counted in skipped_count; the divisor stays m.
inline LossOutput cpl(std::span<const EmbeddedSample> batch, const VergeRegistry& registry,
                      const LossConfig& cfg) {
    detail::check_batch(batch);
    LossOutput out = detail::zero_output(batch);
    const double inv_m = 1.0 / static_cast<double>(batch.size());

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        const auto verge = registry.find(s.class_id);
        const std::optional<double> opposite =
            verge ? (s.label == 1 ? verge->minus : verge->plus) : std::nullopt;
        if (!opposite) {
            ++out.skipped_count;
            continue;
        }
        const auto d = cosine_distance_grad(s.origin.span(), s.mutant.span());
        detail::Hinge h;
        double d_slope;  // d(term)/d(dist)
        if (s.label == 1) {
            h = detail::powered_hinge(d.value - *opposite + cfg.zeta, cfg.alpha, cfg.hinge_epsilon);
            d_slope = h.slope;
        } else {
            h = detail::powered_hinge(*opposite - d.value + cfg.zeta, cfg.beta, cfg.hinge_epsilon);
            d_slope = -h.slope;
        }
        out.value += h.value * inv_m;
        if (d_slope != 0.0) {
            detail::axpy(d_slope * inv_m, d.d_a, out.origin_grads[i]);
            detail::axpy(d_slope * inv_m, d.d_b, out.mutant_grads[i]);
        }
    }
    return out;
}

// Origin-anchored contrastive loss. Class ids are ignored:
//   (1/m) sum_i  l_i * [dist_i]_+  +  (1-l_i) * [zeta - dist_i]_+
inline LossOutput contrastive(std::span<const EmbeddedSample> batch, const LossConfig& cfg) {
    detail::check_batch(batch);
    LossOutput out = detail::zero_output(batch);
    const double inv_m = 1.0 / static_cast<double>(batch.size());

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        const auto d = cosine_distance_grad(s.origin.span(), s.mutant.span());
        double slope = 0.0;
        if (s.label == 1) {
            out.value += d.value * inv_m;
            slope = 1.0;
        } else if (cfg.zeta - d.value > 0.0) {
            out.value += (cfg.zeta - d.value) * inv_m;
            slope = -1.0;
        }
        if (slope != 0.0) {
            detail::axpy(slope * inv_m, d.d_a, out.origin_grads[i]);
            detail::axpy(slope * inv_m, d.d_b, out.mutant_grads[i]);
        }
    }
    return out;
}

// [dist(a,p) - dist(a,n) + margin]_+ with the normalized cosine distance.
inline LossOutput triplet(const Vector& anchor, const Vector& positive, const Vector& negative,
                          double margin) {
    detail::check_unit(anchor);
    detail::check_unit(positive);
    detail::check_unit(negative);
    const auto ap = cosine_distance_grad(anchor.span(), positive.span());
    const auto an = cosine_distance_grad(anchor.span(), negative.span());

    LossOutput out;
    out.origin_grads.emplace_back(anchor.dim(), 0.0);
    out.mutant_grads.emplace_back(anchor.dim(), 0.0);
    out.mutant_grads.emplace_back(anchor.dim(), 0.0);
    const double u = ap.value - an.value + margin;
    if (u <= 0.0) return out;
    out.value = u;
    detail::axpy(1.0, ap.d_a, out.origin_grads[0]);
    detail::axpy(-1.0, an.d_a, out.origin_grads[0]);
    detail::axpy(1.0, ap.d_b, out.mutant_grads[0]);
    detail::axpy(-1.0, an.d_b, out.mutant_grads[1]);
    return out;
}

// In-batch triplet sampler: every (equivalent i, non-equivalent j) pair of the
// same class forms the triplet (o_i, s_i, s_j). The value is the mean over
// formed triplets; samples that join no triplet are counted as skipped.
inline LossOutput triplet_in_batch(std::span<const EmbeddedSample> batch, double margin) {
    detail::check_batch(batch);
    LossOutput out = detail::zero_output(batch);
    std::vector<bool> used(batch.size(), false);
    std::size_t formed = 0;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].label != 1) continue;
        for (std::size_t j = 0; j < batch.size(); ++j) {
            if (batch[j].label != 0 || batch[j].class_id != batch[i].class_id) continue;
            pairs.emplace_back(i, j);
        }
    }
    formed = pairs.size();
    if (formed > 0) {
        const double inv = 1.0 / static_cast<double>(formed);
        for (auto [i, j] : pairs) {
            used[i] = used[j] = true;
            const auto t = triplet(batch[i].origin, batch[i].mutant, batch[j].mutant, margin);
            out.value += t.value * inv;
            detail::axpy(inv, t.origin_grads[0], out.origin_grads[i]);
            detail::axpy(inv, t.mutant_grads[0], out.mutant_grads[i]);
            detail::axpy(inv, t.mutant_grads[1], out.mutant_grads[j]);
        }
    }
    for (bool u : used) out.skipped_count += u ? 0 : 1;
    return out;
}

// -log softmax(logits)[label] for two classes, max-subtracted.
inline LossOutput cross_entropy(std::span<const double> logits, int label) {
    if (logits.size() != 2) throw DimensionError("cross_entropy expects exactly 2 logits");
    if (label != 0 && label != 1) throw RangeError("label must be 0 or 1");
    if (!std::isfinite(logits[0]) || !std::isfinite(logits[1]))
        throw NumericError("cross_entropy: non-finite logits");
    const double mx = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - mx);
    const double e1 = std::exp(logits[1] - mx);
    const double z = e0 + e1;
    const double log_z = std::log(z) + mx;

    LossOutput out;
    out.value = log_z - logits[static_cast<std::size_t>(label)];
    Grad g{e0 / z, e1 / z};
    g[static_cast<std::size_t>(label)] -= 1.0;
    out.logit_grads.push_back(std::move(g));
    return out;
}

// L = metric * lambda + ce. The metric gradients scale by lambda.
inline double joint(double metric_loss, double ce_loss, double lambda) {
    if (!std::isfinite(metric_loss) || !std::isfinite(ce_loss) || !std::isfinite(lambda))
        throw NumericError("joint loss: non-finite input");
    if (lambda < 0.0) throw ConfigError("joint loss: lambda must be >= 0");
    return metric_loss * lambda + ce_loss;
}

} // namespace cpl
