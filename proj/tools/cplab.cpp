// cplab: preprocess, generate, train, evaluate, sweep, stats and export.
//
// Exit status: 0 on success, 2 on usage errors, 1 on domain errors. Domain
// errors print one line "error: <ErrorName>: <message>" to stderr.

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpl/cpl.hpp"

namespace {

using namespace cpl;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("bad integer list '" + text + "'");
        }
    }
    return out;
}

// lo:hi:step
std::vector<double> parse_range(const std::string& text) {
    double lo = 0, hi = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !in.eof())
        throw ConfigError("bad range '" + text + "', expected lo:hi:step");
    return value_range(lo, hi, step);
}

struct FeatureFlags {
    std::string features;  // feature table; hashing when empty
    std::size_t feature_dim = 256;
    std::string ngrams = "1,2";

    void add(CLI::App* app) {
        app->add_option("--features", features, "Feature table (JSON lines); hashed text features when omitted");
        app->add_option("--feature-dim", feature_dim, "Hashed feature dimension")->check(CLI::Range(16, 1 << 20));
        app->add_option("--ngrams", ngrams, "Comma-separated n-gram orders for hashed features");
    }

    Featurizer make() const {
        if (!features.empty()) return Featurizer(read_feature_table(features));
        return Featurizer(FeatureSpec{feature_dim, parse_int_list(ngrams)});
    }
};

struct TrainFlags {
    TrainConfig cfg;
    std::string loss_kind = "ce_plus_cpl";
    std::string verge_init = "literal";

    void add(CLI::App* app) {
        app->add_option("--loss-kind", loss_kind, "ce_only | ce_plus_cpl | ce_plus_contrastive | ce_plus_triplet")
            ->check(CLI::IsMember({"ce_only", "ce_plus_cpl", "ce_plus_contrastive", "ce_plus_triplet"}));
        app->add_option("--gamma", cfg.loss.gamma, "Verge EMA smoothing factor");
        app->add_option("--alpha", cfg.loss.alpha, "Exponent of the equivalent-side hinge");
        app->add_option("--beta", cfg.loss.beta, "Exponent of the non-equivalent-side hinge");
        app->add_option("--zeta", cfg.loss.zeta, "Margin (contrastive: positive margin)");
        app->add_option("--lambda", cfg.loss.lambda, "Metric-loss weight in the joint loss");
        app->add_option("--hinge-epsilon", cfg.loss.hinge_epsilon, "Hinge floor inside derivative factors");
        app->add_option("--triplet-margin", cfg.loss.triplet_margin, "Triplet baseline margin");
        app->add_option("--epochs", cfg.epochs, "Training epochs");
        app->add_option("--batch", cfg.batch_size, "Minibatch size");
        app->add_option("--lr", cfg.adam.learning_rate, "Adam step size");
        app->add_option("--adam-beta1", cfg.adam.beta1, "Adam first-moment decay");
        app->add_option("--adam-beta2", cfg.adam.beta2, "Adam second-moment decay");
        app->add_option("--adam-eps", cfg.adam.epsilon, "Adam stability constant");
        app->add_option("--seed", cfg.seed, "Initialization and shuffling seed");
        app->add_option("--hidden-dim", cfg.dims.hidden, "Encoder hidden width");
        app->add_option("--embed-dim", cfg.dims.embed, "Embedding width");
        app->add_option("--head-hidden-dim", cfg.dims.head_hidden, "Pair-classifier hidden width");
        app->add_option("--verge-init", verge_init, "literal | exclude_first")
            ->check(CLI::IsMember({"literal", "exclude_first"}));
    }

    TrainConfig make(std::size_t feature_dim) const {
        TrainConfig c = cfg;
        c.loss_kind = parse_loss_kind(loss_kind);
        c.verge_init = parse_verge_init(verge_init);
        c.dims.feature = feature_dim;
        c.validate();
        return c;
    }
};

std::string history_text(const std::vector<EpochRecord>& history) {
    std::string out;
    for (const auto& r : history) out += format_history_line(r) + "\n";
    return out;
}

std::string trace_text(const std::vector<StepMetrics>& trace) {
    std::string out;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        nlohmann::ordered_json j;
        j["step"] = i + 1;
        j["ce_loss"] = trace[i].ce_loss;
        j["metric_loss"] = trace[i].metric_loss;
        j["joint_loss"] = trace[i].joint_loss;
        j["skipped_count"] = trace[i].skipped_count;
        out += j.dump() + "\n";
    }
    return out;
}

nlohmann::ordered_json stats_json(const DistanceStats& s) {
    nlohmann::ordered_json j;
    j["equivalent"] = {{"n", s.equivalent.n}, {"mean", s.equivalent.mean}, {"std", s.equivalent.stddev}};
    j["non_equivalent"] = {
        {"n", s.non_equivalent.n}, {"mean", s.non_equivalent.mean}, {"std", s.non_equivalent.stddev}};
    j["ratio"] = s.ratio ? nlohmann::json(*s.ratio) : nlohmann::json(nullptr);
    return j;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cluster Purge Loss training laboratory"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "Re-run from a manifest written by an earlier run");
    std::string manifest;
    int verbosity = 0;
    app.add_flag("-v,--verbose", verbosity, "Print per-epoch progress to stderr (repeatable)");
    app.add_option("--manifest", manifest, "Manifest path (default: <primary output>.manifest)");

    // preprocess ------------------------------------------------------------
    auto* pre = app.add_subcommand("preprocess", "ingest -> dedup -> stratified split")->configurable();
    std::string pre_input, pre_train, pre_test, pre_dedup;
    double pre_fraction = 0.5;
    std::uint64_t pre_seed = 42;
    pre->add_option("--input", pre_input, "Corpus (JSON lines)")->required();
    pre->add_option("--train-out", pre_train, "Train split output")->required();
    pre->add_option("--test-out", pre_test, "Test split output")->required();
    pre->add_option("--dedup-out", pre_dedup, "Optional deduplicated corpus output");
    pre->add_option("--fraction", pre_fraction, "Train fraction per label");
    pre->add_option("--seed", pre_seed, "Split seed");

    // gen -------------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "generate a synthetic corpus")->configurable();
    SyntheticConfig syn;
    std::string gen_mode = "geometric", gen_out, gen_features_out;
    gen->add_option("--mode", gen_mode, "geometric | codegen")->check(CLI::IsMember({"geometric", "codegen"}));
    gen->add_option("--classes", syn.n_classes, "Number of mutant classes");
    gen->add_option("--per-class", syn.per_class, "Mutants per class");
    gen->add_option("--equiv-fraction", syn.equiv_fraction, "Fraction of equivalent mutants per class");
    gen->add_option("--noise", syn.noise, "Geometric: radius scale of mutant offsets");
    gen->add_option("--shift", syn.shift, "Geometric: extra radius of non-equivalents");
    gen->add_option("--spread", syn.spread, "Geometric: isotropic share of offset directions");
    gen->add_option("--feature-dim", syn.feature_dim, "Geometric: feature dimension");
    gen->add_option("--seed", syn.seed, "Generator seed");
    gen->add_option("--out", gen_out, "Corpus output (JSON lines)")->required();
    gen->add_option("--features-out", gen_features_out, "Geometric feature table (default: <out>.features.jsonl)");

    // train -----------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a model")->configurable();
    TrainFlags tr_flags;
    FeatureFlags tr_feat;
    std::string tr_corpus, tr_out, tr_history, tr_resume, tr_trace;
    std::size_t tr_stop = 0;
    tr->add_option("--corpus", tr_corpus, "Training corpus")->required();
    tr->add_option("--out", tr_out, "Checkpoint output")->required();
    tr->add_option("--history", tr_history, "History output (default: <out>.history.jsonl)");
    tr->add_option("--resume", tr_resume, "Resume from this checkpoint (its config wins)");
    tr->add_option("--stop-after-epoch", tr_stop, "Stop once this many epochs are complete (0 = all)");
    tr->add_option("--trace", tr_trace, "Per-step trace output");
    tr_flags.add(tr);
    tr_feat.add(tr);

    // eval ------------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint")->configurable();
    FeatureFlags ev_feat;
    std::string ev_ckpt, ev_corpus, ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required();
    ev->add_option("--corpus", ev_corpus, "Test corpus")->required();
    ev->add_option("--out", ev_out, "Report output (JSON)")->required();
    ev_feat.add(ev);

    // sweep -----------------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "lambda x zeta grid search")->configurable();
    TrainFlags sw_flags;
    FeatureFlags sw_feat;
    std::string sw_train, sw_test, sw_out, sw_matrix, sw_grid = "custom", sw_lrange, sw_zrange;
    std::vector<double> sw_lambdas, sw_zetas;
    std::size_t sw_jobs = 1;
    sw->add_option("--train", sw_train, "Training corpus")->required();
    sw->add_option("--test", sw_test, "Test corpus")->required();
    sw->add_option("--out", sw_out, "Sweep table output (CSV)")->required();
    sw->add_option("--matrix-out", sw_matrix, "Text matrix output (default: <out>.matrix.txt)");
    sw->add_option("--grid", sw_grid, "cpl | contrastive | custom")->check(CLI::IsMember({"cpl", "contrastive", "custom"}));
    sw->add_option("--lambda-range", sw_lrange, "lo:hi:step");
    sw->add_option("--zeta-range", sw_zrange, "lo:hi:step");
    sw->add_option("--lambdas", sw_lambdas, "Explicit lambda values")->delimiter(',');
    sw->add_option("--zetas", sw_zetas, "Explicit zeta values")->delimiter(',');
    sw->add_option("--jobs", sw_jobs, "Worker threads")->check(CLI::PositiveNumber);
    sw_flags.add(sw);
    sw_feat.add(sw);

    // stats -----------------------------------------------------------------
    auto* st = app.add_subcommand("stats", "distance statistics and permutation test")->configurable();
    FeatureFlags st_feat;
    std::string st_ckpt, st_base, st_corpus, st_out;
    std::size_t st_resamples = 10000;
    std::uint64_t st_seed = 1;
    st->add_option("--checkpoint", st_ckpt, "Checkpoint")->required();
    st->add_option("--baseline", st_base, "Baseline checkpoint to compare non-equivalent distances against");
    st->add_option("--corpus", st_corpus, "Corpus")->required();
    st->add_option("--out", st_out, "Statistics output (JSON)")->required();
    st->add_option("--resamples", st_resamples, "Permutation resamples")->check(CLI::PositiveNumber);
    st->add_option("--stats-seed", st_seed, "Permutation seed");
    st_feat.add(st);

    // export ----------------------------------------------------------------
    auto* ex = app.add_subcommand("export", "export embeddings")->configurable();
    FeatureFlags ex_feat;
    std::string ex_ckpt, ex_corpus, ex_out;
    std::vector<ClassId> ex_classes;
    ex->add_option("--checkpoint", ex_ckpt, "Checkpoint")->required();
    ex->add_option("--corpus", ex_corpus, "Corpus")->required();
    ex->add_option("--out", ex_out, "Embedding table output (CSV)")->required();
    ex->add_option("--classes", ex_classes, "Class ids to export (default: all)")->delimiter(',');
    ex_feat.add(ex);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    // Effective values of the chosen subcommand, replayable with --config.
    auto write_manifest = [&](const std::string& primary) {
        const CLI::App* sub = app.get_subcommands().front();
        write_text(manifest.empty() ? primary + ".manifest" : manifest,
                   "[" + sub->get_name() + "]\n" + sub->config_to_str(true, false));
    };

    try {
        if (pre->parsed()) {
            write_manifest(pre_train);
            const Corpus in = ingest(pre_input);
            const Corpus clean = dedup(in);
            const Split s = split(clean, pre_fraction, pre_seed);
            if (!pre_dedup.empty()) write_corpus(pre_dedup, clean);
            write_corpus(pre_train, s.train);
            write_corpus(pre_test, s.test);
            std::cout << "ingested " << in.size() << ", after dedup " << clean.size() << ", train "
                      << s.train.size() << " (eq " << s.train.count_label(1) << "), test " << s.test.size()
                      << " (eq " << s.test.count_label(1) << ")\n";
        } else if (gen->parsed()) {
            write_manifest(gen_out);
            syn.mode = parse_synthetic_mode(gen_mode);
            const auto out = generate_synthetic(syn);
            write_corpus(gen_out, out.corpus);
            if (out.features)
                write_feature_table(gen_features_out.empty() ? gen_out + ".features.jsonl" : gen_features_out,
                                    *out.features);
            std::cout << "generated " << out.corpus.size() << " records (" << to_string(syn.mode) << ")\n";
        } else if (tr->parsed()) {
            write_manifest(tr_out);
            const Featurizer f = tr_feat.make();
            const Corpus corpus = ingest(tr_corpus);
            if (corpus.empty()) throw EmptyCorpusError("training corpus is empty");
            const auto items = featurize(corpus, f);
            TrainState start = tr_resume.empty() ? init_train_state(tr_flags.make(f.dim())) : load_checkpoint(tr_resume);
            if (start.config.dims.feature != f.dim()) throw DimensionError("featurizer dim does not match checkpoint");
            TrainOptions opts;
            opts.record_trace = !tr_trace.empty();
            if (tr_stop > 0) opts.stop_after_epoch = tr_stop;
            auto result = resume(std::move(start), items, opts);
            write_text(tr_history.empty() ? tr_out + ".history.jsonl" : tr_history, history_text(result.history));
            if (!tr_trace.empty()) write_text(tr_trace, trace_text(result.trace));
            if (result.divergence) throw *result.divergence;
            save_checkpoint(tr_out, result.state);
            if (verbosity > 0)
                for (const auto& r : result.history) std::cerr << format_history_line(r) << "\n";
            if (!result.history.empty())
                std::cout << "epoch " << result.history.back().epoch << " joint_loss "
                          << result.history.back().joint_loss << "\n";
        } else if (ev->parsed()) {
            write_manifest(ev_out);
            const auto state = load_checkpoint(ev_ckpt);
            const Featurizer f = ev_feat.make();
            if (f.dim() != state.config.dims.feature) throw DimensionError("featurizer dim does not match checkpoint");
            const auto report = evaluate(state.model, ingest(ev_corpus), f);
            write_text(ev_out, format_report(report) + "\n");
            std::cout << "P=" << format_optional(report.precision, 4) << " R=" << format_optional(report.recall, 4)
                      << " F1=" << format_optional(report.f1, 4) << "\n";
        } else if (sw->parsed()) {
            write_manifest(sw_out);
            const Featurizer f = sw_feat.make();
            SweepAxes axes;
            if (sw_grid == "cpl") axes = cpl_default_grid();
            if (sw_grid == "contrastive") axes = contrastive_default_grid();
            if (!sw_lrange.empty()) axes.lambdas = parse_range(sw_lrange);
            if (!sw_zrange.empty()) axes.zetas = parse_range(sw_zrange);
            if (!sw_lambdas.empty()) axes.lambdas = sw_lambdas;
            if (!sw_zetas.empty()) axes.zetas = sw_zetas;
            if (axes.lambdas.empty() || axes.zetas.empty())
                throw ConfigError("sweep needs lambda and zeta values (--grid, ranges or lists)");
            const auto train_items = featurize(ingest(sw_train), f);
            const auto test_items = featurize(ingest(sw_test), f);
            const auto grid = sweep(sw_flags.make(f.dim()), train_items, test_items, axes.lambdas, axes.zetas, sw_jobs);
            write_text(sw_out, format_sweep_table(grid));
            const auto matrix = format_sweep_matrix(grid);
            write_text(sw_matrix.empty() ? sw_out + ".matrix.txt" : sw_matrix, matrix);
            std::cout << grid.cells.size() << " cells\n" << matrix;
        } else if (st->parsed()) {
            write_manifest(st_out);
            const Featurizer f = st_feat.make();
            const auto items = featurize(ingest(st_corpus), f);
            const auto model_state = load_checkpoint(st_ckpt);
            if (f.dim() != model_state.config.dims.feature) throw DimensionError("featurizer dim does not match checkpoint");
            const auto stats = distance_stats(model_state.model, items);
            nlohmann::ordered_json j;
            j["model"] = stats_json(stats);
            if (!st_base.empty()) {
                const auto base_state = load_checkpoint(st_base);
                const auto base = distance_stats(base_state.model, items);
                const auto cmp = compare_stats(base, stats, st_resamples, st_seed);
                j["baseline"] = stats_json(base);
                j["non_equivalent_shift"] = {{"difference", cmp.observed_difference},
                                             {"p_value", cmp.p_value},
                                             {"resamples", cmp.resamples}};
            }
            write_text(st_out, j.dump(2) + "\n");
            std::cout << j.dump(2) << "\n";
        } else if (ex->parsed()) {
            write_manifest(ex_out);
            const auto state = load_checkpoint(ex_ckpt);
            const Featurizer f = ex_feat.make();
            if (f.dim() != state.config.dims.feature) throw DimensionError("featurizer dim does not match checkpoint");
            const std::set<ClassId> filter(ex_classes.begin(), ex_classes.end());
            const auto rows = export_embeddings(state.model, ingest(ex_corpus), f, filter);
            write_text(ex_out, format_embeddings(rows));
            std::cout << rows.size() << " rows\n";
        }
    } catch (const cpl::Error& e) {
        std::cerr << "error: " << e.name() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: InternalError: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
