#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpl/data.hpp"
#include "cpl/encoder.hpp"
#include "cpl/error.hpp"
#include "cpl/losses.hpp"
#include "cpl/serialize.hpp"
#include "cpl/verge.hpp"

namespace cpl {

enum class LossKind { ce_only, ce_plus_cpl, ce_plus_contrastive, ce_plus_triplet };

inline const char* to_string(LossKind k) {
    switch (k) {
    case LossKind::ce_only: return "ce_only";
    case LossKind::ce_plus_cpl: return "ce_plus_cpl";
    case LossKind::ce_plus_contrastive: return "ce_plus_contrastive";
    case LossKind::ce_plus_triplet: return "ce_plus_triplet";
    }
    return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
    for (auto k : {LossKind::ce_only, LossKind::ce_plus_cpl, LossKind::ce_plus_contrastive,
                   LossKind::ce_plus_triplet})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown loss kind '" + std::string(s) + "'");
}

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
    LossKind loss_kind = LossKind::ce_plus_cpl;
    LossConfig loss;
    std::size_t epochs = 30;
    std::size_t batch_size = 4;
    AdamConfig adam;
    std::uint64_t seed = 42;
    ModelDims dims;
    VergeInit verge_init = VergeInit::literal;

    void validate() const {
        loss.validate();
        dims.validate();
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(adam.learning_rate > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
            !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0))
            throw ConfigError("invalid optimizer hyperparameters");
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Flat key/value echo, hex floats for exactness.
inline std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
    return {
        {"loss_kind", to_string(c.loss_kind)},
        {"gamma", io::hex(c.loss.gamma)},
        {"alpha", io::hex(c.loss.alpha)},
        {"beta", io::hex(c.loss.beta)},
        {"zeta", io::hex(c.loss.zeta)},
        {"lambda", io::hex(c.loss.lambda)},
        {"hinge_epsilon", io::hex(c.loss.hinge_epsilon)},
        {"triplet_margin", io::hex(c.loss.triplet_margin)},
        {"epochs", std::to_string(c.epochs)},
        {"batch_size", std::to_string(c.batch_size)},
        {"learning_rate", io::hex(c.adam.learning_rate)},
        {"adam_beta1", io::hex(c.adam.beta1)},
        {"adam_beta2", io::hex(c.adam.beta2)},
        {"adam_epsilon", io::hex(c.adam.epsilon)},
        {"seed", std::to_string(c.seed)},
        {"feature_dim", std::to_string(c.dims.feature)},
        {"hidden_dim", std::to_string(c.dims.hidden)},
        {"embed_dim", std::to_string(c.dims.embed)},
        {"head_hidden_dim", std::to_string(c.dims.head_hidden)},
        {"verge_init", to_string(c.verge_init)},
    };
}

inline TrainConfig config_from_entries(const std::map<std::string, std::string>& kv) {
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw DeserializeError(std::string("config echo: missing key ") + key);
        return it->second;
    };
    auto u = [&](const char* key) { return static_cast<std::size_t>(io::parse_int(get(key))); };
    auto d = [&](const char* key) { return io::parse_double(get(key)); };
    TrainConfig c;
    try {
        c.loss_kind = parse_loss_kind(get("loss_kind"));
        c.verge_init = parse_verge_init(get("verge_init"));
    } catch (const ConfigError& e) {
        throw DeserializeError(std::string("config echo: ") + e.what());
    }
    c.loss = {d("gamma"), d("alpha"), d("beta"), d("zeta"), d("lambda"), d("hinge_epsilon"),
              d("triplet_margin")};
    c.epochs = u("epochs");
    c.batch_size = u("batch_size");
    c.adam = {d("learning_rate"), d("adam_beta1"), d("adam_beta2"), d("adam_epsilon")};
    c.seed = std::stoull(get("seed"));
    c.dims = {u("feature_dim"), u("hidden_dim"), u("embed_dim"), u("head_hidden_dim")};
    return c;
}

// Adam moments for the encoder and head parameter buffers.
struct AdamState {
    std::uint64_t t = 0;
    std::vector<double> m_encoder, v_encoder, m_head, v_head;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct TrainState {
    TrainConfig config;
    Model model;
    VergeRegistry registry;
    AdamState adam;
    std::size_t epoch = 0;  // completed epochs
    std::size_t step = 0;   // completed optimizer steps

    friend bool operator==(const TrainState&, const TrainState&) = default;
};

inline TrainState init_train_state(const TrainConfig& config) {
    config.validate();
    TrainState s{config, init_model(config.seed, config.dims),
                 VergeRegistry(EmaParams(config.loss.gamma), config.verge_init), {}, 0, 0};
    s.adam.m_encoder.assign(s.model.encoder.data().size(), 0.0);
    s.adam.v_encoder.assign(s.model.encoder.data().size(), 0.0);
    s.adam.m_head.assign(s.model.head.data().size(), 0.0);
    s.adam.v_head.assign(s.model.head.data().size(), 0.0);
    return s;
}

struct StepMetrics {
    double ce_loss = 0.0;
    double metric_loss = 0.0;
    double joint_loss = 0.0;
    std::size_t skipped_count = 0;
};

struct StepOptions {
    // Skip the verge update and read the registry as is. Used to inject
    // frozen verge values.
    bool freeze_verges = false;
};

namespace detail {

inline void adam_update(const AdamConfig& cfg, std::uint64_t t, std::span<double> params,
                        std::span<const double> grad, std::vector<double>& m, std::vector<double>& v) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

} // namespace detail

struct Gradients {
    StepMetrics metrics;
    std::vector<double> encoder;  // same layout as EncoderParams::data()
    std::vector<double> head;     // same layout as PairClassifierParams::data()
};

// Joint loss and its parameter gradients on a minibatch:
//   encode origins and mutants -> (CPL only, when update_verges) verge update
//   with the current distances -> metric loss and pair-head cross-entropy ->
//   joint loss -> backprop (CE through head into embeddings, metric loss
//   directly into embeddings, both through the encoder).
inline Gradients joint_gradients(const Model& model, VergeRegistry& registry, const TrainConfig& cfg,
                                 std::span<const FeatureSample> batch, bool update_verges) {
    if (batch.empty()) throw EmptyBatchError("empty minibatch");
    const std::size_t m = batch.size();
    const double inv_m = 1.0 / static_cast<double>(m);

    std::vector<EncoderCache> origin_cache, mutant_cache;
    std::vector<EmbeddedSample> samples;
    origin_cache.reserve(m);
    mutant_cache.reserve(m);
    samples.reserve(m);
    for (const auto& item : batch) {
        origin_cache.push_back(encode_cached(model.encoder, item.origin));
        mutant_cache.push_back(encode_cached(model.encoder, item.mutant));
        samples.emplace_back(item.class_id, Vector(origin_cache.back().output),
                             Vector(mutant_cache.back().output), item.label);
    }

    LossOutput metric;
    switch (cfg.loss_kind) {
    case LossKind::ce_only:
        break;
    case LossKind::ce_plus_cpl:
        if (update_verges) registry.batch_update(samples);
        metric = cpl(samples, registry, cfg.loss);
        break;
    case LossKind::ce_plus_contrastive:
        metric = contrastive(samples, cfg.loss);
        break;
    case LossKind::ce_plus_triplet:
        metric = triplet_in_batch(samples, cfg.loss.triplet_margin);
        break;
    }

    Gradients g;
    auto& out = g.metrics;
    out.metric_loss = metric.value;
    out.skipped_count = metric.skipped_count;

    std::vector<HeadCache> head_cache;
    std::vector<Grad> logit_grads;
    head_cache.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        head_cache.push_back(classify_pair_cached(model.head, samples[i].origin.span(),
                                                  samples[i].mutant.span()));
        auto ce = cross_entropy(head_cache.back().logits, samples[i].label);
        out.ce_loss += ce.value * inv_m;
        logit_grads.push_back({ce.logit_grads[0][0] * inv_m, ce.logit_grads[0][1] * inv_m});
    }
    const bool has_metric = cfg.loss_kind != LossKind::ce_only;
    out.joint_loss = has_metric ? metric.value * cfg.loss.lambda + out.ce_loss : out.ce_loss;

    g.encoder.assign(model.encoder.data().size(), 0.0);
    g.head.assign(model.head.data().size(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        auto pg = head_backward(model.head, head_cache[i], logit_grads[i], g.head);
        if (has_metric) {
            detail::axpy(cfg.loss.lambda, metric.origin_grads[i], pg.origin);
            detail::axpy(cfg.loss.lambda, metric.mutant_grads[i], pg.mutant);
        }
        encoder_backward(model.encoder, origin_cache[i], pg.origin, g.encoder);
        encoder_backward(model.encoder, mutant_cache[i], pg.mutant, g.encoder);
    }
    return g;
}

// One optimizer step: joint_gradients (updating verges first unless frozen),
// then Adam on both parameter buffers.
inline StepMetrics train_step(TrainState& state, std::span<const FeatureSample> batch,
                              StepOptions options = {}) {
    if (batch.empty()) throw EmptyBatchError("train_step on an empty batch");
    Gradients g;
    try {
        g = joint_gradients(state.model, state.registry, state.config, batch, !options.freeze_verges);
    } catch (const NumericError& e) {
        throw DivergenceError(state.step, e.what());
    }
    if (!std::isfinite(g.metrics.joint_loss))
        throw DivergenceError(state.step, "non-finite joint loss");

    auto& adam = state.adam;
    ++adam.t;
    detail::adam_update(state.config.adam, adam.t, state.model.encoder.mutable_data(), g.encoder,
                        adam.m_encoder, adam.v_encoder);
    detail::adam_update(state.config.adam, adam.t, state.model.head.mutable_data(), g.head, adam.m_head,
                        adam.v_head);
    ++state.step;
    return g.metrics;
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double ce_loss = 0.0;
    double metric_loss = 0.0;
    double joint_loss = 0.0;
    std::size_t skipped_count = 0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

inline std::string format_history_line(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["ce_loss"] = r.ce_loss;
    j["metric_loss"] = r.metric_loss;
    j["joint_loss"] = r.joint_loss;
    j["skipped_count"] = r.skipped_count;
    return j.dump();
}

struct TrainResult {
    TrainState state;
    std::vector<EpochRecord> history;
    std::vector<StepMetrics> trace;             // filled only when requested
    std::optional<DivergenceError> divergence;  // set when training aborted
};

struct TrainOptions {
    bool record_trace = false;
    // Stop once this many epochs are complete (defaults to config.epochs).
    std::optional<std::size_t> stop_after_epoch;
};

// Continues training from `state` until config.epochs (or stop_after_epoch)
// epochs are complete. Batch order depends only on (seed, epoch index), so a
// resumed run follows the same trajectory as an uninterrupted one.
inline TrainResult resume(TrainState state, std::span<const FeatureSample> items, TrainOptions options = {}) {
    if (items.empty()) throw EmptyCorpusError("training corpus is empty");
    state.config.validate();
    const std::size_t last = std::min(options.stop_after_epoch.value_or(state.config.epochs), state.config.epochs);
    TrainResult result{std::move(state), {}, {}, std::nullopt};
    auto& st = result.state;
    for (; st.epoch < last; ++st.epoch) {
        EpochRecord rec;
        rec.epoch = st.epoch + 1;
        const auto batches = make_batches(items, st.config.batch_size, st.config.seed, st.epoch);
        try {
            for (const auto& b : batches) {
                const auto sm = train_step(st, b);
                rec.ce_loss += sm.ce_loss;
                rec.metric_loss += sm.metric_loss;
                rec.joint_loss += sm.joint_loss;
                rec.skipped_count += sm.skipped_count;
                if (options.record_trace) result.trace.push_back(sm);
            }
        } catch (const DivergenceError& e) {
            result.divergence = e;
            return result;
        }
        const double n = static_cast<double>(batches.size());
        rec.ce_loss /= n;
        rec.metric_loss /= n;
        rec.joint_loss /= n;
        result.history.push_back(rec);
    }
    return result;
}

inline TrainResult train(const TrainConfig& config, std::span<const FeatureSample> items,
                         TrainOptions options = {}) {
    return resume(init_train_state(config), items, std::move(options));
}

inline TrainResult train(const TrainConfig& config, const Corpus& corpus, const Featurizer& featurizer,
                         TrainOptions options = {}) {
    if (corpus.empty()) throw EmptyCorpusError("training corpus is empty");
    if (featurizer.dim() != config.dims.feature)
        throw DimensionError("featurizer dim " + std::to_string(featurizer.dim()) +
                             " does not match model feature dim " + std::to_string(config.dims.feature));
    const auto items = featurize(corpus, featurizer);
    return train(config, items, std::move(options));
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   cpl-checkpoint <version>
//   checksum <fnv1a64 of body, hex>
//   <body>
//
// The body holds the config echo, counters, model, verge snapshot and optimizer
// state. Loading parses into a fresh object and returns only on full success.
// ---------------------------------------------------------------------------
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void dump_vector(std::ostream& out, const char* tag, std::span<const double> v) {
    out << tag << ' ' << v.size();
    for (double x : v) out << ' ' << io::hex(x);
    out << '\n';
}

inline std::vector<double> load_vector(std::istream& in, const char* tag, std::size_t expected) {
    std::string t;
    std::size_t n = 0;
    if (!(in >> t >> n) || t != tag || n != expected)
        throw DeserializeError(std::string("checkpoint: bad ") + tag + " block");
    std::vector<double> v(n);
    for (double& x : v) {
        std::string s;
        if (!(in >> s)) throw DeserializeError("checkpoint: truncated");
        x = io::parse_double(s);
    }
    return v;
}

} // namespace detail

inline std::string serialize_checkpoint(const TrainState& s) {
    std::ostringstream body;
    body << "config " << config_entries(s.config).size() << '\n';
    for (const auto& [k, v] : config_entries(s.config)) body << k << ' ' << v << '\n';
    body << "progress " << s.epoch << ' ' << s.step << '\n';
    write_model(body, s.model);
    const auto verges = s.registry.snapshot();
    body << "verges " << verges.size() << '\n' << verges;
    body << "adam " << s.adam.t << '\n';
    detail::dump_vector(body, "m_encoder", s.adam.m_encoder);
    detail::dump_vector(body, "v_encoder", s.adam.v_encoder);
    detail::dump_vector(body, "m_head", s.adam.m_head);
    detail::dump_vector(body, "v_head", s.adam.v_head);
    body << "end\n";

    const std::string b = body.str();
    char sum[32];
    std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(io::fnv1a(b)));
    return "cpl-checkpoint " + std::to_string(kCheckpointVersion) + "\nchecksum " + sum + "\n" + b;
}

inline TrainState deserialize_checkpoint(const std::string& bytes) {
    std::istringstream head(bytes);
    std::string tag;
    std::string version_text;
    if (!(head >> tag >> version_text) || tag != "cpl-checkpoint")
        throw DeserializeError("not a checkpoint file");
    std::int64_t version = 0;
    try {
        version = io::parse_int(version_text);
    } catch (const DeserializeError&) {
        throw VersionError("checkpoint: unreadable version '" + version_text + "'");
    }
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    std::string sum_key, sum_text;
    if (!(head >> sum_key >> sum_text) || sum_key != "checksum") throw DeserializeError("checkpoint: no checksum");
    head.get();  // newline after the checksum
    if (!head) throw DeserializeError("checkpoint: truncated header");
    const auto body_start = static_cast<std::size_t>(head.tellg());
    const std::string body = bytes.substr(body_start);
    char sum[32];
    std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(io::fnv1a(body)));
    if (sum_text != sum) throw DeserializeError("checkpoint: checksum mismatch (corrupted file)");

    std::istringstream in(body);
    std::size_t n = 0;
    if (!(in >> tag >> n) || tag != "config") throw DeserializeError("checkpoint: missing config");
    std::map<std::string, std::string> kv;
    for (std::size_t i = 0; i < n; ++i) {
        std::string k, v;
        if (!(in >> k >> v)) throw DeserializeError("checkpoint: truncated config");
        kv[k] = v;
    }
    TrainConfig config = config_from_entries(kv);
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw DeserializeError(std::string("checkpoint: invalid config: ") + e.what());
    }
    std::size_t epoch = 0, step = 0;
    if (!(in >> tag >> epoch >> step) || tag != "progress") throw DeserializeError("checkpoint: missing progress");
    Model model = read_model(in);
    if (model.dims != config.dims) throw DeserializeError("checkpoint: model dims disagree with config");

    std::size_t verge_len = 0;
    if (!(in >> tag >> verge_len) || tag != "verges") throw DeserializeError("checkpoint: missing verges");
    in.get();
    std::string verge_text(verge_len, '\0');
    if (!in.read(verge_text.data(), static_cast<std::streamsize>(verge_len)))
        throw DeserializeError("checkpoint: truncated verges");
    VergeRegistry registry = VergeRegistry::restore(verge_text);

    AdamState adam;
    if (!(in >> tag >> adam.t) || tag != "adam") throw DeserializeError("checkpoint: missing optimizer state");
    adam.m_encoder = detail::load_vector(in, "m_encoder", model.encoder.data().size());
    adam.v_encoder = detail::load_vector(in, "v_encoder", model.encoder.data().size());
    adam.m_head = detail::load_vector(in, "m_head", model.head.data().size());
    adam.v_head = detail::load_vector(in, "v_head", model.head.data().size());
    if (!(in >> tag) || tag != "end") throw DeserializeError("checkpoint: missing end marker");
    return TrainState{config, std::move(model), std::move(registry), std::move(adam), epoch, step};
}

inline void save_checkpoint(const std::string& path, const TrainState& s) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out << serialize_checkpoint(s);
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

} // namespace cpl
