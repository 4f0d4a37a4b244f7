#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cpl/data.hpp"
#include "cpl/encoder.hpp"
#include "cpl/error.hpp"
#include "cpl/random.hpp"
#include "cpl/trainer.hpp"

namespace cpl {

// Binary metrics with the equivalent class (label 1) as positive. Undefined
// ratios stay empty rather than collapsing to 0.
struct EvalReport {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> precision, recall, f1;

    static EvalReport from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
        EvalReport r{tp, fp, tn, fn, std::nullopt, std::nullopt, std::nullopt};
        if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        if (r.precision && r.recall && *r.precision + *r.recall > 0.0)
            r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
        return r;
    }

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline std::string format_optional(const std::optional<double>& v, int digits = 6) {
    if (!v) return "NA";
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << *v;
    return s.str();
}

inline std::string format_report(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["tn"] = r.tn;
    j["fn"] = r.fn;
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    j["precision"] = opt(r.precision);
    j["recall"] = opt(r.recall);
    j["f1"] = opt(r.f1);
    return j.dump();
}

// Predicts 1 (equivalent) only when its logit is strictly larger; ties go to 0.
inline int predict(const Model& model, std::span<const double> origin_features,
                   std::span<const double> mutant_features) {
    const auto o = encode_cached(model.encoder, origin_features).output;
    const auto s = encode_cached(model.encoder, mutant_features).output;
    const auto logits = classify_pair_cached(model.head, o, s).logits;
    return logits[1] > logits[0] ? 1 : 0;
}

inline EvalReport evaluate(const Model& model, std::span<const FeatureSample> items) {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& it : items) {
        const int y = predict(model, it.origin, it.mutant);
        if (y == 1 && it.label == 1) ++tp;
        else if (y == 1) ++fp;
        else if (it.label == 1) ++fn;
        else ++tn;
    }
    return EvalReport::from_counts(tp, fp, tn, fn);
}

inline EvalReport evaluate(const Model& model, const Corpus& corpus, const Featurizer& f) {
    return evaluate(model, featurize(corpus, f));
}

// ---------------------------------------------------------------------------
// Distance diagnostics
// ---------------------------------------------------------------------------

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n - 1)
};

inline Summary summarize(std::span<const double> xs) {
    Summary s{xs.size(), 0.0, 0.0};
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

struct DistanceStats {
    Summary equivalent;
    Summary non_equivalent;
    std::optional<double> ratio;  // mean_noneq / mean_eq, absent when mean_eq == 0
    std::vector<double> equivalent_distances;
    std::vector<double> non_equivalent_distances;
};

inline DistanceStats distance_stats(const Model& model, std::span<const FeatureSample> items) {
    DistanceStats st;
    for (const auto& it : items) {
        const auto o = encode_cached(model.encoder, it.origin).output;
        const auto s = encode_cached(model.encoder, it.mutant).output;
        (it.label == 1 ? st.equivalent_distances : st.non_equivalent_distances).push_back(cosine_distance(o, s));
    }
    if (st.equivalent_distances.empty() || st.non_equivalent_distances.empty())
        throw StratifyError("distance statistics need samples of both labels");
    st.equivalent = summarize(st.equivalent_distances);
    st.non_equivalent = summarize(st.non_equivalent_distances);
    if (st.equivalent.mean > 0.0) st.ratio = st.non_equivalent.mean / st.equivalent.mean;
    return st;
}

struct PermutationResult {
    double p_value = 1.0;
    double observed_difference = 0.0;  // mean(b) - mean(a)
    std::size_t resamples = 0;
};

// Two-sided, two-sample permutation test on the difference of means.
// p = (1 + #{|perm diff| >= |observed|}) / (1 + resamples).
inline PermutationResult permutation_test(std::span<const double> a, std::span<const double> b,
                                          std::size_t resamples = 10000, std::uint64_t seed = 1) {
    if (a.empty() || b.empty()) throw StratifyError("permutation test needs two non-empty samples");
    if (resamples == 0) throw ConfigError("permutation test needs at least one resample");
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const double total = std::accumulate(pooled.begin(), pooled.end(), 0.0);
    const auto na = static_cast<double>(a.size());
    const auto nb = static_cast<double>(b.size());
    auto diff_for = [&](double sum_a) { return (total - sum_a) / nb - sum_a / na; };
    const double observed = diff_for(std::accumulate(a.begin(), a.end(), 0.0));
    // Relative slack so that permutations reproducing the observed split
    // count as extreme despite summation-order rounding.
    const double threshold = std::abs(observed) * (1.0 - 1e-12) - 1e-15;

    Rng rng(mix_seed(seed, 0x9e47));
    std::size_t extreme = 0;
    for (std::size_t r = 0; r < resamples; ++r) {
        // Partial Fisher-Yates: the first |a| slots form the resampled group.
        double sum_a = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::size_t j = i + rng.index(pooled.size() - i);
            std::swap(pooled[i], pooled[j]);
            sum_a += pooled[i];
        }
        if (std::abs(diff_for(sum_a)) >= threshold) ++extreme;
    }
    return {static_cast<double>(extreme + 1) / static_cast<double>(resamples + 1), observed, resamples};
}

// Compares the non-equivalent distance samples of two models.
inline PermutationResult compare_stats(const DistanceStats& a, const DistanceStats& b,
                                       std::size_t resamples = 10000, std::uint64_t seed = 1) {
    return permutation_test(a.non_equivalent_distances, b.non_equivalent_distances, resamples, seed);
}

// ---------------------------------------------------------------------------
// Lambda x zeta sweep
// ---------------------------------------------------------------------------

// lo, lo+step, ..., hi (inclusive), rounded to 1e-9 so decimal grids stay clean.
inline std::vector<double> value_range(double lo, double hi, double step) {
    if (!(step > 0.0) || !std::isfinite(lo) || !std::isfinite(hi) || hi < lo)
        throw ConfigError("invalid range");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9;
    return out;
}

struct SweepAxes {
    std::vector<double> lambdas;
    std::vector<double> zetas;
};

// 7 lambdas x 8 zetas.
inline SweepAxes cpl_default_grid() { return {value_range(1.00, 1.30, 0.05), value_range(-0.06, 0.01, 0.01)}; }
// 7 lambdas x 6 zetas.
inline SweepAxes contrastive_default_grid() { return {value_range(1.00, 1.30, 0.05), value_range(0.03, 0.18, 0.03)}; }

struct SweepCell {
    double lambda = 0.0;
    double zeta = 0.0;
    std::optional<EvalReport> report;
    std::optional<std::string> error;

    friend bool operator==(const SweepCell&, const SweepCell&) = default;
};

struct SweepGrid {
    std::vector<double> lambda_values;
    std::vector<double> zeta_values;
    std::vector<SweepCell> cells;  // row-major: lambda outer, zeta inner

    const SweepCell& at(std::size_t li, std::size_t zi) const { return cells[li * zeta_values.size() + zi]; }

    // Highest F1, then higher precision, then lower (lambda, zeta).
    std::optional<std::size_t> best() const {
        std::optional<std::size_t> best;
        auto better = [](const SweepCell& a, const SweepCell& b) {
            const auto ka = std::pair{a.report->f1.value_or(-1.0), a.report->precision.value_or(-1.0)};
            const auto kb = std::pair{b.report->f1.value_or(-1.0), b.report->precision.value_or(-1.0)};
            if (ka != kb) return ka > kb;
            return std::pair{a.lambda, a.zeta} < std::pair{b.lambda, b.zeta};
        };
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (!cells[i].report) continue;
            if (!best || better(cells[i], cells[*best])) best = i;
        }
        return best;
    }
};

inline SweepCell run_sweep_cell(const TrainConfig& base, double lambda, double zeta,
                                std::span<const FeatureSample> train_items,
                                std::span<const FeatureSample> test_items) {
    TrainConfig cfg = base;
    cfg.loss.lambda = lambda;
    cfg.loss.zeta = zeta;
    SweepCell cell{lambda, zeta, std::nullopt, std::nullopt};
    try {
        auto result = train(cfg, train_items);
        if (result.divergence) {
            cell.error = std::string(result.divergence->name()) + ": " + result.divergence->what();
            return cell;
        }
        cell.report = evaluate(result.state.model, test_items);
    } catch (const Error& e) {
        cell.error = std::string(e.name()) + ": " + e.what();
    }
    return cell;
}

// Cells share every setting except (lambda, zeta), including the seed, and
// are independent; `jobs` worker threads pull cells from a shared counter and
// results land in fixed slots.
inline SweepGrid sweep(const TrainConfig& base, std::span<const FeatureSample> train_items,
                       std::span<const FeatureSample> test_items, std::vector<double> lambda_values,
                       std::vector<double> zeta_values, std::size_t jobs = 1) {
    if (lambda_values.empty() || zeta_values.empty()) throw ConfigError("sweep axes must be non-empty");
    base.validate();
    SweepGrid grid{std::move(lambda_values), std::move(zeta_values), {}};
    const std::size_t n = grid.lambda_values.size() * grid.zeta_values.size();
    grid.cells.resize(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const double lambda = grid.lambda_values[i / grid.zeta_values.size()];
            const double zeta = grid.zeta_values[i % grid.zeta_values.size()];
            grid.cells[i] = run_sweep_cell(base, lambda, zeta, train_items, test_items);
        }
    };
    jobs = std::clamp<std::size_t>(jobs, 1, n);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }
    return grid;
}

// One row per cell: lambda,zeta,precision,recall,f1 (NA when undefined or failed).
inline std::string format_sweep_table(const SweepGrid& g) {
    std::ostringstream out;
    out << "lambda,zeta,precision,recall,f1\n";
    for (const auto& c : g.cells) {
        out << std::fixed << std::setprecision(2) << c.lambda << ',' << c.zeta << ',';
        if (c.report)
            out << format_optional(c.report->precision) << ',' << format_optional(c.report->recall) << ','
                << format_optional(c.report->f1);
        else
            out << "NA,NA,NA";
        out << '\n';
    }
    return out.str();
}

// Lambda rows, zeta columns; each cell "P/R/F1" in percent.
inline std::string format_sweep_matrix(const SweepGrid& g) {
    auto pct = [](const std::optional<double>& v) {
        if (!v) return std::string("  NA ");
        std::ostringstream s;
        s << std::fixed << std::setprecision(1) << std::setw(5) << *v * 100.0;
        return s.str();
    };
    std::ostringstream out;
    out << std::setw(8) << "lam\\zeta";
    for (double z : g.zeta_values) out << " | " << std::setw(17) << std::fixed << std::setprecision(2) << z;
    out << '\n';
    for (std::size_t li = 0; li < g.lambda_values.size(); ++li) {
        out << std::setw(8) << std::fixed << std::setprecision(2) << g.lambda_values[li];
        for (std::size_t zi = 0; zi < g.zeta_values.size(); ++zi) {
            const auto& c = g.at(li, zi);
            out << " | ";
            if (c.report)
                out << pct(c.report->precision) << '/' << pct(c.report->recall) << '/' << pct(c.report->f1);
            else
                out << std::setw(17) << "diverged";
        }
        out << '\n';
    }
    if (auto b = g.best()) {
        const auto& c = g.cells[*b];
        out << "best: lambda=" << std::setprecision(2) << c.lambda << " zeta=" << c.zeta
            << " P=" << format_optional(c.report->precision, 4) << " R=" << format_optional(c.report->recall, 4)
            << " F1=" << format_optional(c.report->f1, 4) << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

struct EmbeddingRow {
    ClassId class_id;
    std::optional<int> label;  // empty for origin rows
    std::string role;          // "origin" or "mutant"
    std::vector<double> embedding;
};

// For each selected class in ascending id order: the origin row, then its
// mutants in corpus order. An empty filter selects every class.
inline std::vector<EmbeddingRow> export_embeddings(const Model& model, const Corpus& corpus, const Featurizer& f,
                                                   const std::set<ClassId>& class_filter = {}) {
    std::map<ClassId, std::vector<const MutantRecord*>> by_class;
    for (const auto& r : corpus.records) by_class[r.class_id].push_back(&r);
    for (ClassId k : class_filter)
        if (!by_class.contains(k)) throw LookupError("class " + std::to_string(k) + " is not in the corpus");

    std::vector<EmbeddingRow> rows;
    for (const auto& [k, recs] : by_class) {
        if (!class_filter.empty() && !class_filter.contains(k)) continue;
        rows.push_back({k, std::nullopt, "origin", encode_cached(model.encoder, f(recs.front()->origin_text)).output});
        for (const auto* r : recs)
            rows.push_back({k, r->label, "mutant", encode_cached(model.encoder, f(r->mutant_text)).output});
    }
    return rows;
}

// Comma-separated: class_id,label,role,e0..e{d-1}; origin rows leave label empty.
inline std::string format_embeddings(const std::vector<EmbeddingRow>& rows) {
    std::ostringstream out;
    out << "class_id,label,role";
    const std::size_t d = rows.empty() ? 0 : rows.front().embedding.size();
    for (std::size_t i = 0; i < d; ++i) out << ",e" << i;
    out << '\n';
    out << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.class_id << ',' << (r.label ? std::to_string(*r.label) : "") << ',' << r.role;
        for (double v : r.embedding) out << ',' << v;
        out << '\n';
    }
    return out.str();
}

} // namespace cpl
