#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cpl/data.hpp"
#include "cpl/error.hpp"
#include "cpl/random.hpp"

namespace cpl {

enum class SyntheticMode { geometric, codegen };

inline SyntheticMode parse_synthetic_mode(std::string_view s) {
    if (s == "geometric") return SyntheticMode::geometric;
    if (s == "codegen") return SyntheticMode::codegen;
    throw ConfigError("unknown synthetic mode '" + std::string(s) + "'");
}

inline const char* to_string(SyntheticMode m) {
    return m == SyntheticMode::geometric ? "geometric" : "codegen";
}

struct SyntheticConfig {
    SyntheticMode mode = SyntheticMode::geometric;
    std::size_t n_classes = 8;
    std::size_t per_class = 40;
    double equiv_fraction = 0.5;
    double noise = 0.4;           // geometric: radius scale of mutant offsets
    double shift = 0.05;          // geometric: extra radius of non-equivalents
    double spread = 2.0;          // geometric: isotropic share of each offset direction
    std::size_t feature_dim = 256;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_classes < 2) throw ConfigError("synthetic corpus needs n_classes >= 2");
        if (per_class < 4) throw ConfigError("synthetic corpus needs per_class >= 4");
        if (!(equiv_fraction > 0.0 && equiv_fraction < 1.0))
            throw ConfigError("equiv_fraction must lie in (0, 1)");
        if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be >= 0");
        if (!(shift >= 0.0) || !std::isfinite(shift)) throw ConfigError("shift must be >= 0");
        if (!(spread >= 0.0) || !std::isfinite(spread)) throw ConfigError("spread must be >= 0");
        if (feature_dim < 16) throw ConfigError("feature_dim must be >= 16");
    }
};

struct SyntheticCorpus {
    Corpus corpus;
    std::optional<FeatureTable> features;  // geometric mode only
};

namespace detail {

inline std::vector<double> gaussian(Rng& rng, std::size_t dim, double scale) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal() * scale;
    return v;
}

// Exactly round(per_class * fraction) equivalents per class, in shuffled order.
inline std::vector<int> class_labels(Rng& rng, std::size_t per_class, double fraction) {
    auto n_eq = static_cast<std::size_t>(std::llround(static_cast<double>(per_class) * fraction));
    n_eq = std::clamp<std::size_t>(n_eq, 1, per_class - 1);
    std::vector<int> labels(per_class, 0);
    for (std::size_t i = 0; i < n_eq; ++i) labels[i] = 1;
    rng.shuffle(std::span<int>(labels));
    return labels;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Geometric mode. Each class has a unit origin point p and two unit
// directions: a benign one w (equivalents) and a defect one u
// (non-equivalents). A mutant is p + r * normalize(axis + g) with
// g ~ N(0, spread^2 I/dim) and radius
//   equivalent:      r = noise * rho
//   non-equivalent:  r = noise * rho + shift
// where rho ~ U(0.2, 1.8). With shift = 0 both labels share one radius
// distribution, so origin distances overlap while the labels stay separable
// by direction. Texts are placeholders ("g<class>:origin", "g<class>:m<j>")
// keyed into the parallel feature table.
// ---------------------------------------------------------------------------
inline SyntheticCorpus generate_geometric(const SyntheticConfig& cfg) {
    SyntheticCorpus out;
    out.corpus.provenance = "synthetic:geometric seed=" + std::to_string(cfg.seed);
    FeatureTable table;
    Rng rng(mix_seed(cfg.seed, 0x6e0));
    const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim));
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        const auto origin = normalized(detail::gaussian(rng, cfg.feature_dim, 1.0));
        const auto benign = normalized(detail::gaussian(rng, cfg.feature_dim, 1.0));
        const auto defect = normalized(detail::gaussian(rng, cfg.feature_dim, 1.0));
        const std::string origin_text = "g" + std::to_string(c) + ":origin";
        table.add(origin_text, origin);
        const auto labels = detail::class_labels(rng, cfg.per_class, cfg.equiv_fraction);
        for (std::size_t j = 0; j < cfg.per_class; ++j) {
            const auto& axis = labels[j] == 1 ? benign : defect;
            auto dir = detail::gaussian(rng, cfg.feature_dim, cfg.spread * inv_sqrt_dim);
            for (std::size_t i = 0; i < dir.size(); ++i) dir[i] += axis[i];
            dir = normalized(dir);
            const double rho = rng.uniform(0.2, 1.8);
            const double radius = cfg.noise * rho + (labels[j] == 0 ? cfg.shift : 0.0);
            std::vector<double> point = origin;
            for (std::size_t i = 0; i < point.size(); ++i) point[i] += radius * dir[i];
            std::string text = "g" + std::to_string(c) + ":m" + std::to_string(j);
            table.add(text, std::move(point));
            out.corpus.records.push_back({static_cast<ClassId>(c), origin_text, text, labels[j]});
        }
    }
    out.features = std::move(table);
    return out;
}

// ---------------------------------------------------------------------------
// Codegen mode. Small C-like methods rendered from a template, mutated at
// tagged sites. Mutations on the live path change behaviour; mutations in a
// dead store, in the post-increment of a returned local, or after the final
// unconditional return do not.
// ---------------------------------------------------------------------------
enum class MutationSite { live_arith, live_relational, live_constant, dead_store, return_postinc, after_return };

inline bool is_equivalent_site(MutationSite s) {
    return s == MutationSite::dead_store || s == MutationSite::return_postinc ||
           s == MutationSite::after_return;
}

struct CodegenMutant {
    std::string text;
    int label;
    MutationSite site;
};

struct CodegenClass {
    std::string origin;
    std::vector<CodegenMutant> mutants;
};

namespace detail {

struct MethodShape {
    std::string name;
    char op1, op2, op3, op4;
    std::string rel;
    int k0, k1, k2;
};

inline std::string render_method(const MethodShape& m, std::string stmt_dead, std::string rel,
                                 std::string ret_tail, std::string op_live, std::string k_live,
                                 std::string trailer) {
    std::string s;
    s += "int " + m.name + "(int p0, int p1) {\n";
    s += "  int v0 = p0 " + op_live + " " + k_live + ";\n";
    s += "  int v1 = p1 " + std::string(1, m.op2) + " " + std::to_string(m.k1) + ";\n";
    s += "  int t = " + stmt_dead + ";\n";
    s += "  if (v0 " + rel + " v1) {\n";
    s += "    return v0 " + std::string(1, m.op3) + " v1;\n";
    s += "  }\n";
    s += "  return " + ret_tail + ";\n";
    s += trailer;
    s += "}\n";
    return s;
}

inline char other_op(Rng& rng, char op) {
    static constexpr char ops[] = {'+', '-', '*'};
    char r;
    do {
        r = ops[rng.index(3)];
    } while (r == op);
    return r;
}

inline std::string other_rel(Rng& rng, const std::string& rel) {
    static const char* rels[] = {"<", "<=", ">", ">=", "==", "!="};
    std::string r;
    do {
        r = rels[rng.index(6)];
    } while (r == rel);
    return r;
}

} // namespace detail

inline CodegenClass render_codegen_class(Rng& rng, std::size_t class_index, std::size_t per_class,
                                         double equiv_fraction) {
    static constexpr char ops[] = {'+', '-', '*'};
    static const char* rels[] = {"<", "<=", ">", ">="};
    static const char* names[] = {"scale", "clampSum", "mix", "probe", "offset", "fold", "step", "blend"};
    detail::MethodShape m{std::string(names[rng.index(8)]) + std::to_string(class_index),
                          ops[rng.index(3)], ops[rng.index(3)], ops[rng.index(3)], ops[rng.index(3)],
                          rels[rng.index(4)], static_cast<int>(rng.index(9)) + 1,
                          static_cast<int>(rng.index(9)) + 1, static_cast<int>(rng.index(9)) + 1};
    const std::string op1(1, m.op1), op4(1, m.op4);
    const std::string k0 = std::to_string(m.k0);
    const std::string dead = "v0 " + op4 + " p1";
    const std::string trailer = "  v0 = v0 " + op1 + " " + std::to_string(m.k2) + ";\n";

    CodegenClass cls;
    cls.origin = detail::render_method(m, dead, m.rel, "v1", op1, k0, trailer);

    const auto labels = detail::class_labels(rng, per_class, equiv_fraction);
    for (int label : labels) {
        CodegenMutant mu{{}, label, MutationSite::dead_store};
        if (label == 1) {
            switch (rng.index(3)) {
            case 0:
                mu.site = MutationSite::dead_store;
                mu.text = detail::render_method(m, "v0 " + std::string(1, detail::other_op(rng, m.op4)) + " p1",
                                                m.rel, "v1", op1, k0, trailer);
                break;
            case 1:
                mu.site = MutationSite::return_postinc;
                mu.text = detail::render_method(m, dead, m.rel, rng.index(2) ? "v1++" : "v1--", op1, k0, trailer);
                break;
            default:
                mu.site = MutationSite::after_return;
                mu.text = detail::render_method(
                    m, dead, m.rel, "v1", op1, k0,
                    "  v0 = v0 " + std::string(1, detail::other_op(rng, m.op1)) + " " + std::to_string(m.k2) + ";\n");
                break;
            }
        } else {
            switch (rng.index(3)) {
            case 0:
                mu.site = MutationSite::live_arith;
                mu.text = detail::render_method(m, dead, m.rel, "v1", std::string(1, detail::other_op(rng, m.op1)),
                                                k0, trailer);
                break;
            case 1:
                mu.site = MutationSite::live_relational;
                mu.text = detail::render_method(m, dead, detail::other_rel(rng, m.rel), "v1", op1, k0, trailer);
                break;
            default: {
                mu.site = MutationSite::live_constant;
                int k = m.k0;
                while (k == m.k0) k = static_cast<int>(rng.index(20)) + 10;
                mu.text = detail::render_method(m, dead, m.rel, "v1", op1, std::to_string(k), trailer);
                break;
            }
            }
        }
        cls.mutants.push_back(std::move(mu));
    }
    return cls;
}

inline SyntheticCorpus generate_codegen(const SyntheticConfig& cfg) {
    SyntheticCorpus out;
    out.corpus.provenance = "synthetic:codegen seed=" + std::to_string(cfg.seed);
    Rng rng(mix_seed(cfg.seed, 0xc0de));
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        auto cls = render_codegen_class(rng, c, cfg.per_class, cfg.equiv_fraction);
        for (auto& mu : cls.mutants)
            out.corpus.records.push_back({static_cast<ClassId>(c), cls.origin, std::move(mu.text), mu.label});
    }
    return out;
}

inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    return cfg.mode == SyntheticMode::geometric ? generate_geometric(cfg) : generate_codegen(cfg);
}

} // namespace cpl
