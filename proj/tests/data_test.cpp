#include <gtest/gtest.h>

#include "support.hpp"

using namespace cpl;
namespace t = cpl::testing;

namespace {
Corpus parse(const std::string& text) {
    std::istringstream in(text);
    return parse_corpus(in);
}

MutantRecord rec(ClassId k, std::string o, std::string m, int l) { return {k, std::move(o), std::move(m), l}; }

Corpus labelled(std::size_t n_eq, std::size_t n_neq) {
    Corpus c;
    for (std::size_t i = 0; i < n_eq + n_neq; ++i)
        c.records.push_back(rec(static_cast<ClassId>(i % 13), "o" + std::to_string(i % 13), "m" + std::to_string(i),
                                i < n_eq ? 1 : 0));
    return c;
}
} // namespace

TEST(Ingest, Basics) {
    EXPECT_TRUE(parse("").empty());
    const auto c = parse(R"({"class_id":3,"label":1,"origin":"int f() { return 1; }","mutant":"int f() { return 1;}"})"
                         "\n");
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.records[0].class_id, 3);
    EXPECT_EQ(c.records[0].label, 1);
}

TEST(Ingest, Errors) {
    try {
        parse("{\"class_id\":1,\"label\":0,\"origin\":\"a\",\"mutant\":\"b\"}\n{oops\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(parse(R"({"class_id":1,"label":2,"origin":"a","mutant":"b"})"), ParseError);
    EXPECT_THROW(parse("{\"class_id\":1,\"label\":0,\"origin\":\"a\",\"mutant\":\"b\"}\n"
                       "{\"class_id\":1,\"label\":1,\"origin\":\"c\",\"mutant\":\"d\"}\n"),
                 SchemaError);
    EXPECT_THROW(ingest("/nonexistent/corpus.jsonl"), IoError);
}

TEST(Ingest, WriteReadRoundTrip) {
    const auto dir = t::scratch_dir("ingest");
    Corpus c = labelled(5, 4);
    c.records[0].origin_text = "line\nbreak \"quoted\"";
    for (auto& r : c.records)
        if (r.class_id == 0) r.origin_text = c.records[0].origin_text;
    write_corpus((dir / "c.jsonl").string(), c);
    EXPECT_EQ(ingest((dir / "c.jsonl").string()).records, c.records);
}

TEST(Dedup, KeepsFirstAndIsIdempotent) {
    Corpus c;
    c.records = {rec(1, "a  b", "x", 1), rec(2, "q", "r", 0), rec(1, "a b", " x ", 0)};
    const auto d = dedup(c);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d.records[0].label, 1);
    EXPECT_EQ(dedup(d).records, d.records);
    const auto distinct = labelled(6, 6);
    EXPECT_EQ(dedup(distinct).records, distinct.records);
}

TEST(Split, SkewedProfile918To181) {
    const auto s = split(labelled(918, 181), 0.5, 3);
    const auto tr_eq = s.train.count_label(1), te_eq = s.test.count_label(1);
    const auto tr_ne = s.train.count_label(0), te_ne = s.test.count_label(0);
    EXPECT_EQ(tr_eq + te_eq, 918u);
    EXPECT_EQ(tr_ne + te_ne, 181u);
    EXPECT_LE(std::abs(static_cast<double>(tr_eq) - 459.0), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(tr_ne) - 90.5), 1.0);
}

TEST(Split, BalancedAndDeterministic) {
    const auto c = labelled(10, 10);
    const auto s = split(c, 0.5, 1);
    EXPECT_EQ(s.train.count_label(1), 5u);
    EXPECT_EQ(s.train.count_label(0), 5u);
    EXPECT_EQ(s.test.size(), 10u);
    EXPECT_EQ(split(c, 0.5, 1).train.records, s.train.records);
    EXPECT_THROW(split(labelled(4, 0), 0.5, 1), StratifyError);
}

TEST(Split, PartitionProperty) {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const auto c = labelled(1 + rng.index(40), 1 + rng.index(40));
        const double f = rng.uniform(0.1, 0.9);
        const auto s = split(c, f, rng.next());
        std::multiset<std::string> all, parts;
        for (const auto& r : c.records) all.insert(r.mutant_text);
        for (const auto* part : {&s.train, &s.test})
            for (const auto& r : part->records) parts.insert(r.mutant_text);
        EXPECT_EQ(all, parts);
        for (int l : {0, 1}) {
            const double exact = f * static_cast<double>(c.count_label(l));
            EXPECT_LE(std::abs(static_cast<double>(s.train.count_label(l)) - exact), 1.0);
        }
    }
}

TEST(Features, Invariants) {
    const FeatureSpec spec;
    const auto a = extract_features(spec, "int f(int x) { return x + 1; }");
    EXPECT_EQ(a, extract_features(spec, "int f(int x) { return x + 1; }"));
    EXPECT_NEAR(norm(a.span()), 1.0, 1e-9);
    EXPECT_FALSE(a == extract_features(spec, "int f(int x) { return x - 1; }"));
    EXPECT_EQ(a.dim(), 256u);
    EXPECT_THROW(extract_features(spec, ""), DegenerateInputError);
    EXPECT_THROW(extract_features(spec, "   "), DegenerateInputError);
}

TEST(Features, TableRoundTrip) {
    const auto dir = t::scratch_dir("features");
    FeatureTable tbl;
    tbl.dim = 3;
    tbl.add("a", {1.0, 0.0, 0.0});
    tbl.add("b c", {0.0, 0.6, 0.8});
    write_feature_table((dir / "f.jsonl").string(), tbl);
    const Featurizer f(read_feature_table((dir / "f.jsonl").string()));
    EXPECT_EQ(f.dim(), 3u);
    EXPECT_EQ(f("b c"), (std::vector<double>{0.0, 0.6, 0.8}));
    EXPECT_THROW(f("missing"), LookupError);
}

TEST(Batches, SizesAndDeterminism) {
    const auto idx = batch_indices(10, 4, 7, 0);
    ASSERT_EQ(idx.size(), 3u);
    EXPECT_EQ(idx[0].size(), 4u);
    EXPECT_EQ(idx[1].size(), 4u);
    EXPECT_EQ(idx[2].size(), 2u);
    EXPECT_EQ(idx, batch_indices(10, 4, 7, 0));
    EXPECT_NE(idx, batch_indices(10, 4, 7, 1));
    EXPECT_EQ(TrainConfig{}.batch_size, 4u);
    EXPECT_THROW(batch_indices(0, 4, 7, 0), EmptyCorpusError);
}

TEST(Synthetic, GeometricZeroNoise) {
    SyntheticConfig cfg;
    cfg.noise = 0.0;
    cfg.shift = 0.0;
    const auto s = generate_synthetic(cfg);
    const Featurizer f(*s.features);
    for (const auto& r : s.corpus.records)
        if (r.label == 1)
            EXPECT_NEAR(norm(std::span<const double>(f(r.origin_text))) -
                            norm(std::span<const double>(f(r.mutant_text))),
                        0.0, 1e-12);
    for (const auto& item : featurize(s.corpus, f))
        if (item.label == 1) EXPECT_NEAR(cosine_distance(item.origin, item.mutant), 0.0, 1e-12);
}

TEST(Synthetic, Deterministic) {
    SyntheticConfig cfg;
    const auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
    EXPECT_EQ(a.corpus.records, b.corpus.records);
    EXPECT_EQ(a.corpus.size(), 320u);
    EXPECT_EQ(a.corpus.count_label(1), 160u);
    EXPECT_EQ(a.features->rows, b.features->rows);
    cfg.per_class = 2;
    EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Synthetic, CodegenLabelsFollowMutationSite) {
    Rng rng(1);
    bool saw_after_return = false;
    for (std::size_t c = 0; c < 30; ++c) {
        const auto cls = render_codegen_class(rng, c, 12, 0.5);
        for (const auto& m : cls.mutants) {
            EXPECT_EQ(m.label, is_equivalent_site(m.site) ? 1 : 0);
            EXPECT_NE(m.text, cls.origin);
            if (m.site == MutationSite::after_return) {
                saw_after_return = true;
                EXPECT_EQ(m.label, 1);
            }
        }
    }
    EXPECT_TRUE(saw_after_return);
    EXPECT_TRUE(is_equivalent_site(MutationSite::after_return));
    EXPECT_FALSE(is_equivalent_site(MutationSite::live_arith));
}
