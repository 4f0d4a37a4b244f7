#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cpl/error.hpp"
#include "cpl/math.hpp"
#include "cpl/random.hpp"
#include "cpl/sample.hpp"
#include "cpl/serialize.hpp"

namespace cpl {

struct MutantRecord {
    ClassId class_id = 0;
    std::string origin_text;
    std::string mutant_text;
    int label = 0;  // 1 = equivalent

    friend bool operator==(const MutantRecord&, const MutantRecord&) = default;
};

struct Corpus {
    std::vector<MutantRecord> records;
    std::string provenance;

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
    std::size_t count_label(int label) const {
        return static_cast<std::size_t>(std::count_if(
            records.begin(), records.end(), [&](const auto& r) { return r.label == label; }));
    }
    friend bool operator==(const Corpus& a, const Corpus& b) { return a.records == b.records; }
};

// Records of one class must share one origin text.
inline void validate_corpus(const Corpus& corpus) {
    std::map<ClassId, const std::string*> origins;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        const auto& r = corpus.records[i];
        auto [it, inserted] = origins.emplace(r.class_id, &r.origin_text);
        if (!inserted && *it->second != r.origin_text)
            throw SchemaError("class " + std::to_string(r.class_id) +
                              " has conflicting origin texts (record " + std::to_string(i + 1) + ")");
    }
}

// ---------------------------------------------------------------------------
// Wire format: one JSON object per line, fields in the fixed order
//   {"class_id":<int>,"label":<0|1>,"origin":"...","mutant":"..."}
// ---------------------------------------------------------------------------

inline std::string format_record(const MutantRecord& r) {
    nlohmann::ordered_json j;
    j["class_id"] = r.class_id;
    j["label"] = r.label;
    j["origin"] = r.origin_text;
    j["mutant"] = r.mutant_text;
    return j.dump();
}

inline MutantRecord parse_record(std::string_view line, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || j.size() != 4)
        throw ParseError(line_no, "expected an object with class_id, label, origin, mutant");
    auto field = [&](const char* key) -> const nlohmann::json& {
        auto it = j.find(key);
        if (it == j.end()) throw ParseError(line_no, std::string("missing field '") + key + "'");
        return *it;
    };
    const auto& k = field("class_id");
    const auto& l = field("label");
    const auto& o = field("origin");
    const auto& m = field("mutant");
    if (!k.is_number_integer() || k.get<std::int64_t>() < 0)
        throw ParseError(line_no, "class_id must be a non-negative integer");
    if (!l.is_number_integer() || (l.get<std::int64_t>() != 0 && l.get<std::int64_t>() != 1))
        throw ParseError(line_no, "label must be 0 or 1");
    if (!o.is_string() || !m.is_string()) throw ParseError(line_no, "origin and mutant must be strings");
    MutantRecord r{k.get<ClassId>(), o.get<std::string>(), m.get<std::string>(), l.get<int>()};
    if (r.origin_text.empty() || r.mutant_text.empty())
        throw ParseError(line_no, "origin and mutant must be non-empty");
    return r;
}

inline Corpus parse_corpus(std::istream& in, std::string provenance = {}) {
    Corpus c{{}, std::move(provenance)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        c.records.push_back(parse_record(line, line_no));
    }
    validate_corpus(c);
    return c;
}

inline Corpus ingest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus '" + path + "'");
    return parse_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const Corpus& c) {
    for (const auto& r : c.records) out << format_record(r) << '\n';
}

inline void write_corpus(const std::string& path, const Corpus& c) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write corpus '" + path + "'");
    write_corpus(out, c);
    if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Collapses whitespace runs to one space and trims both ends.
inline std::string normalize_whitespace(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(ch);
    }
    return out;
}

// Keeps the first record of every whitespace-normalized (origin, mutant) pair.
inline Corpus dedup(const Corpus& corpus) {
    Corpus out{{}, corpus.provenance};
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& r : corpus.records) {
        if (seen.emplace(normalize_whitespace(r.origin_text), normalize_whitespace(r.mutant_text)).second)
            out.records.push_back(r);
    }
    return out;
}

struct Split {
    Corpus train;
    Corpus test;
};

// Label-stratified split. Each label contributes round(n_label * fraction)
// records to train; both sides keep the original record order.
inline Split split(const Corpus& corpus, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
    std::vector<bool> to_train(corpus.size(), false);
    for (int label : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < corpus.size(); ++i)
            if (corpus.records[i].label == label) idx.push_back(i);
        if (idx.empty())
            throw StratifyError("cannot stratify: no records with label " + std::to_string(label));
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label) + 0x5117));
        rng.shuffle(std::span<std::size_t>(idx));
        const auto take = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * fraction));
        for (std::size_t i = 0; i < take; ++i) to_train[idx[i]] = true;
    }
    Split s{{{}, corpus.provenance + " [train]"}, {{}, corpus.provenance + " [test]"}};
    for (std::size_t i = 0; i < corpus.size(); ++i)
        (to_train[i] ? s.train : s.test).records.push_back(corpus.records[i]);
    return s;
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

struct FeatureSpec {
    std::size_t dim = 256;
    std::vector<int> ngram_orders{1, 2};
    static constexpr std::string_view hash_id = "fnv1a64-signed";

    void validate() const {
        if (dim < 16) throw ConfigError("feature dim must be >= 16");
        if (ngram_orders.empty()) throw ConfigError("at least one n-gram order is required");
        for (int n : ngram_orders)
            if (n < 1) throw ConfigError("n-gram orders must be >= 1");
    }
};

// Identifiers, numbers, two-character operators, and single punctuation
// characters; whitespace separates but is never a token.
inline std::vector<std::string> tokenize(std::string_view text) {
    static constexpr std::string_view two_char[] = {"++", "--", "==", "!=", "<=", ">=", "&&", "||",
                                                    "+=", "-=", "*=", "/=", "<<", ">>", "->", "::"};
    std::vector<std::string> out;
    std::size_t i = 0;
    auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (is_word(c)) {
            std::size_t j = i;
            while (j < text.size() && is_word(text[j])) ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
            continue;
        }
        if (i + 1 < text.size()) {
            const auto pair = text.substr(i, 2);
            if (std::find(std::begin(two_char), std::end(two_char), pair) != std::end(two_char)) {
                out.emplace_back(pair);
                i += 2;
                continue;
            }
        }
        out.emplace_back(1, c);
        ++i;
    }
    return out;
}

// Signed feature hashing of token n-grams, L2-normalized.
inline Vector extract_features(const FeatureSpec& spec, std::string_view text) {
    spec.validate();
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw DegenerateInputError("cannot extract features from empty text");
    std::vector<double> v(spec.dim, 0.0);
    for (int n : spec.ngram_orders) {
        const auto order = static_cast<std::size_t>(n);
        for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
            std::string gram = std::to_string(n);
            for (std::size_t j = 0; j < order; ++j) {
                gram.push_back('\x1f');
                gram += tokens[i + j];
            }
            const std::uint64_t h = io::fnv1a(gram);
            v[h % spec.dim] += (h >> 63) ? -1.0 : 1.0;
        }
    }
    if (norm(v) == 0.0) throw DegenerateInputError("hashed features cancelled to the zero vector");
    return Vector(normalized(v));
}

// Explicit text -> feature vector table; used by corpora whose features are
// generated directly rather than hashed from text.
struct FeatureTable {
    std::size_t dim = 0;
    std::map<std::string, std::vector<double>> rows;

    void add(std::string text, std::vector<double> features) {
        if (dim == 0) dim = features.size();
        if (features.size() != dim) throw DimensionError("feature table rows must share one dim");
        rows.insert_or_assign(std::move(text), std::move(features));
    }
    friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

// JSON lines: {"text":"...","features":[...]}. Doubles round-trip exactly.
inline void write_feature_table(const std::string& path, const FeatureTable& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write feature table '" + path + "'");
    for (const auto& [text, f] : t.rows) {
        nlohmann::ordered_json j;
        j["text"] = text;
        j["features"] = f;
        out << j.dump() << '\n';
    }
}

inline FeatureTable read_feature_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature table '" + path + "'");
    FeatureTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            t.add(j.at("text").get<std::string>(), j.at("features").get<std::vector<double>>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("feature table: ") + e.what());
        } catch (const DimensionError& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return t;
}

// Maps record texts to encoder inputs: table lookup when a table is present,
// hashing otherwise.
class Featurizer {
public:
    explicit Featurizer(FeatureSpec spec = {}) : spec_(std::move(spec)) { spec_.validate(); }
    explicit Featurizer(FeatureTable table) : spec_{}, table_(std::move(table)) {
        if (table_->dim == 0) throw ConfigError("feature table is empty");
        spec_.dim = table_->dim;
    }

    std::size_t dim() const noexcept { return spec_.dim; }
    bool uses_table() const noexcept { return table_.has_value(); }
    const FeatureSpec& spec() const noexcept { return spec_; }

    std::vector<double> operator()(const std::string& text) const {
        if (table_) {
            auto it = table_->rows.find(text);
            if (it == table_->rows.end())
                throw LookupError("no feature row for text '" + text.substr(0, 40) + "'");
            return it->second;
        }
        return extract_features(spec_, text).values();
    }

private:
    FeatureSpec spec_;
    std::optional<FeatureTable> table_;
};

// ---------------------------------------------------------------------------
// Minibatching
// ---------------------------------------------------------------------------

struct FeatureSample {
    ClassId class_id;
    std::vector<double> origin;
    std::vector<double> mutant;
    int label;
};

using FeatureBatch = std::vector<FeatureSample>;

inline std::vector<FeatureSample> featurize(const Corpus& corpus, const Featurizer& f) {
    std::vector<FeatureSample> out;
    out.reserve(corpus.size());
    std::map<std::string, std::vector<double>> origin_cache;
    for (const auto& r : corpus.records) {
        auto it = origin_cache.find(r.origin_text);
        if (it == origin_cache.end()) it = origin_cache.emplace(r.origin_text, f(r.origin_text)).first;
        out.push_back({r.class_id, it->second, f(r.mutant_text), r.label});
    }
    return out;
}

// Epoch order: a shuffle keyed by (seed, epoch). Indices into the corpus.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t seed, std::uint64_t epoch) {
    if (n == 0) throw EmptyCorpusError("cannot batch an empty corpus");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(seed, epoch + 0xba7c));
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    return out;
}

inline std::vector<FeatureBatch> make_batches(std::span<const FeatureSample> items, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch) {
    std::vector<FeatureBatch> out;
    for (const auto& idx : batch_indices(items.size(), batch_size, seed, epoch)) {
        FeatureBatch b;
        b.reserve(idx.size());
        for (std::size_t i : idx) b.push_back(items[i]);
        out.push_back(std::move(b));
    }
    return out;
}

inline std::vector<FeatureBatch> make_batches(const Corpus& corpus, const Featurizer& f,
                                              std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
    if (corpus.empty()) throw EmptyCorpusError("cannot batch an empty corpus");
    const auto items = featurize(corpus, f);
    return make_batches(items, batch_size, seed, epoch);
}

} // namespace cpl
