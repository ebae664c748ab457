#include "bdlab/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "bdlab/analysis.hpp"
#include "bdlab/config.hpp"
#include "bdlab/defense.hpp"
#include "bdlab/experiment.hpp"
#include "bdlab/extraction.hpp"
#include "bdlab/io.hpp"
#include "bdlab/report.hpp"
#include "bdlab/tensor_file.hpp"

namespace fs = std::filesystem;

namespace bdlab {

namespace {

fs::path default_out_dir() {
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return "bdlab-out";
}

fs::path default_config_path() { return fs::path(BDLAB_CONFIG_DIR) / "defaults.json"; }

/// Shared state of one command: resolved config, output root and the manifest being built.
class Run {
public:
    Run(std::string command, fs::path out_dir, std::uint64_t seed, LabConfig cfg, std::ostream& out)
        : out_dir_(std::move(out_dir)), seed_(seed), cfg_(std::move(cfg)), out_(out) {
        manifest_.command = std::move(command);
        manifest_.seeds.emplace_back("seed", seed);
    }

    const LabConfig& cfg() const { return cfg_; }
    LabConfig& cfg() { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    std::ostream& out() { return out_; }
    RunManifest& manifest() { return manifest_; }

    fs::path path(const std::string& rel) const { return out_dir_ / rel; }

    /// Resolves an optional user path, falling back to a location under the output root.
    fs::path input(const std::string& given, const std::string& fallback_rel) const {
        return given.empty() ? path(fallback_rel) : fs::path(given);
    }

    void write(const std::string& rel, const std::string& contents) {
        write_file_atomic(path(rel), contents);
        manifest_.outputs.emplace_back(rel, sha256_hex(contents));
    }

    void write_checkpoint(const std::string& rel, const Checkpoint& ckpt) { write(rel, serialize_checkpoint(ckpt)); }

    std::string read_input(const fs::path& p) {
        std::string bytes;
        try {
            bytes = read_file(p);
        } catch (const Error&) {
            throw Error("missing input " + p.string());
        }
        manifest_.inputs.emplace_back(display(p), sha256_hex(bytes));
        return bytes;
    }

    Checkpoint checkpoint(const fs::path& p) {
        const std::string bytes = read_input(p);
        try {
            return deserialize_checkpoint(bytes);
        } catch (const Error& e) {
            throw Error(p.string() + ": " + e.what());
        }
    }

    Dataset dataset(const fs::path& p) {
        return decode_dataset_jsonl(read_input(p), cfg_.poison.target_label, p.string());
    }

    void plot(const std::string& rel, const PlotSpec& spec) { write(rel, render_svg(spec)); }

    void finish() {
        manifest_.config = to_json(cfg_);
        write_file_atomic(path("manifests/" + manifest_.command + ".json"), manifest_.to_json().dump(2) + "\n");
    }

private:
    std::string display(const fs::path& p) const {
        std::error_code ec;
        const auto rel = fs::weakly_canonical(p, ec).lexically_relative(fs::weakly_canonical(out_dir_, ec));
        if (!ec && !rel.empty() && *rel.begin() != "..") return rel.generic_string();
        return p.generic_string();
    }

    fs::path out_dir_;
    std::uint64_t seed_;
    LabConfig cfg_;
    std::ostream& out_;
    RunManifest manifest_;
};

std::string num(double v) { return format_number(v); }

std::string layer_tag(int l) { return "L" + std::to_string(l); }

int resolve_layer(const Checkpoint& ckpt, std::optional<int> layer) {
    const int l = layer.value_or(ckpt.config.n_layers - 1);
    if (l < 0 || l >= ckpt.config.n_layers)
        throw Error("layer " + std::to_string(l) + " outside [0, " + std::to_string(ckpt.config.n_layers) + ")");
    return l;
}

constexpr ParamComponent kQkv[] = {ParamComponent::Q, ParamComponent::K, ParamComponent::V};
constexpr ParamKind kKinds[] = {ParamKind::Weight, ParamKind::Bias};

std::string tensor_label(ParamComponent c, ParamKind k) { return to_string(c) + "_" + to_string(k); }

Histogram shared_histogram(std::span<const double> values, int bins, double lo, double hi) {
    if (lo == hi) {
        const double eps = 1e-9 * std::max(1.0, std::abs(lo));
        lo -= eps;
        hi += eps;
    }
    return histogram(values, bins, lo, hi);
}

std::pair<double, double> joint_range(std::span<const double> a, std::span<const double> b) {
    double lo = INFINITY, hi = -INFINITY;
    for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : b) lo = std::min(lo, v), hi = std::max(hi, v);
    return {lo, hi};
}

Series counts_series(const std::string& label, const Histogram& h, SeriesRole role) {
    Series s{label, h.edges, {}, role};
    for (auto c : h.counts) s.y.push_back(static_cast<double>(c));
    return s;
}

// ---- commands ----------------------------------------------------------------

struct Options {
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string config;
    // corpus
    std::optional<int> n_train, n_test;
    // training
    std::string corpus, test, pretrained, clean, poisoned, name;
    std::optional<int> epochs;
    bool freeze_layer_norm = false;
    std::optional<double> rate;
    std::optional<int> target;
    // analysis
    std::optional<int> layer;
    std::optional<int> bins;
    bool include_layer_norm = false;
    std::optional<double> epsilon;
    std::optional<int> k;
    std::optional<double> mixed_rate;
    std::optional<double> perplexity;
    std::optional<int> tsne_iters;
    std::vector<double> thresholds;
    // zoo / meta
    std::optional<int> n_models;
    std::string zoo, classifier;
    std::vector<std::string> checkpoints;
    std::optional<double> learning_rate;
};

void cmd_gen_corpus(Run& run, const Options& o) {
    CorpusSpec cs = run.cfg().corpus;
    if (o.n_train) cs.n_train = *o.n_train;
    if (o.n_test) cs.n_test = *o.n_test;
    cs.seed = derive_seeds(run.seed()).corpus;
    run.cfg().corpus = cs;
    const Corpus c = generate_corpus(cs);
    run.write("corpus/train.jsonl", encode_dataset_jsonl(c.train));
    run.write("corpus/test.jsonl", encode_dataset_jsonl(c.test));
    run.out() << "train " << c.train.size() << " samples, test " << c.test.size() << " samples\n";
}

Checkpoint pretrained_for(Run& run, const Options& o) {
    const fs::path p = run.input(o.pretrained, "models/pretrained.bdt");
    if (!o.pretrained.empty() || fs::exists(p)) return run.checkpoint(p);
    // No parent on disk yet: initialise one from the seed and persist it.
    const Checkpoint pt = round_to_f32(init_model(run.cfg().model, derive_seeds(run.seed()).init));
    run.write_checkpoint("models/pretrained.bdt", pt);
    return pt;
}

void train_and_report(Run& run, const Options& o, const Dataset& train_set, const std::string& name) {
    TrainConfig tc = run.cfg().train;
    if (o.epochs) tc.epochs = *o.epochs;
    tc.seed = derive_seeds(run.seed()).train;
    run.cfg().train = tc;
    Checkpoint pt = pretrained_for(run, o);
    pt.config.freeze_layer_norm = o.freeze_layer_norm;
    run.cfg().model.freeze_layer_norm = o.freeze_layer_norm;
    const TrainResult r = train(pt, train_set, tc);
    const Checkpoint saved = round_to_f32(r.checkpoint);
    run.write_checkpoint("models/" + name + ".bdt", saved);

    CsvTable losses({"epoch", "loss"});
    for (std::size_t e = 0; e < r.epoch_losses.size(); ++e)
        losses.add_row({std::to_string(e + 1), num(r.epoch_losses[e])});
    run.write("reports/train_" + name + ".csv", losses.str());

    const Dataset test = run.dataset(run.input(o.test, "corpus/test.jsonl"));
    const double acc = evaluate_accuracy(saved, test);
    const double asr = attack_success_rate(saved, test, run.cfg().poison.target_label);
    CsvTable metrics({"model", "acc", "asr"});
    metrics.add_row({name, num(acc), num(asr)});
    run.write("reports/metrics_" + name + ".csv", metrics.str());
    run.out() << name << ": final loss " << num(r.epoch_losses.back()) << ", acc " << num(acc) << ", asr "
              << num(asr) << "\n";
}

void cmd_train(Run& run, const Options& o) {
    const Dataset train_set = run.dataset(run.input(o.corpus, "corpus/train.jsonl"));
    train_and_report(run, o, train_set, o.name.empty() ? "clean" : o.name);
}

void cmd_poison_train(Run& run, const Options& o) {
    auto& ps = run.cfg().poison;
    if (o.rate) ps.rate = *o.rate;
    if (o.target) ps.target_label = *o.target;
    const Dataset clean = run.dataset(run.input(o.corpus, "corpus/train.jsonl"));
    const Dataset poisoned = poison_dataset(clean, ps.rate, ps.target_label, derive_seeds(run.seed()).poison);
    run.write("corpus/train_poisoned.jsonl", encode_dataset_jsonl(poisoned));
    run.out() << "poisoned " << poisoned.poisoned_count() << " of " << poisoned.size() << " training samples\n";
    train_and_report(run, o, poisoned, o.name.empty() ? "poisoned" : o.name);
}

void cmd_analyze_dist(Run& run, const Options& o) {
    const Checkpoint clean = run.checkpoint(run.input(o.clean, "models/clean.bdt"));
    const Checkpoint pois = run.checkpoint(run.input(o.poisoned, "models/poisoned.bdt"));
    const int bins = o.bins.value_or(run.cfg().histogram_bins);
    run.cfg().histogram_bins = bins;
    const int plot_layer = resolve_layer(clean, o.layer);

    std::vector<ParamComponent> comps(std::begin(kQkv), std::end(kQkv));
    if (o.include_layer_norm) {
        comps.push_back(ParamComponent::LN1);
        comps.push_back(ParamComponent::LN2);
    }
    CsvTable l1({"layer", "component", "kind", "l1"});
    CsvTable detail({"component", "kind", "bin", "lo", "hi", "clean", "poisoned"});
    for (int l = 0; l < clean.config.n_layers; ++l) {
        for (auto c : comps) {
            for (auto k : kKinds) {
                const ParamSelector sel{l, c, k};
                const auto a = get_attention_param(clean, sel).values;
                const auto b = get_attention_param(pois, sel).values;
                const auto [lo, hi] = joint_range(a, b);
                const Histogram ha = shared_histogram(a, bins, lo, hi);
                const Histogram hb = shared_histogram(b, bins, ha.edges.front(), ha.edges.back());
                l1.add_row({std::to_string(l), to_string(c), to_string(k), num(histogram_l1(ha, hb))});
                if (l != plot_layer) continue;
                for (std::size_t i = 0; i < ha.counts.size(); ++i)
                    detail.add_row({to_string(c), to_string(k), std::to_string(i), num(ha.edges[i]),
                                    num(ha.edges[i + 1]), std::to_string(ha.counts[i]), std::to_string(hb.counts[i])});
                PlotSpec spec{PlotKind::Histogram,
                              "Layer " + std::to_string(l) + " " + to_string(c) + " " + to_string(k) + " distribution",
                              "value", "count",
                              {counts_series("clean", ha, SeriesRole::Clean),
                               counts_series("poisoned", hb, SeriesRole::Poisoned)}};
                run.plot("plots/dist_" + layer_tag(l) + "_" + tensor_label(c, k) + ".svg", spec);
            }
        }
    }
    run.write("reports/dist_l1.csv", l1.str());
    run.write("reports/dist_" + layer_tag(plot_layer) + ".csv", detail.str());
    run.out() << "histogram L1 distances for " << l1.rows() << " tensors written\n";
}

void cmd_analyze_delta(Run& run, const Options& o) {
    const Checkpoint pt = run.checkpoint(run.input(o.pretrained, "models/pretrained.bdt"));
    const Checkpoint clean = run.checkpoint(run.input(o.clean, "models/clean.bdt"));
    const Checkpoint pois = run.checkpoint(run.input(o.poisoned, "models/poisoned.bdt"));
    const int l = resolve_layer(clean, o.layer);
    const KdeOptions kopt{run.cfg().kde_grid_points, std::nullopt};

    CsvTable kde({"component", "model", "x", "density"});
    CsvTable bw({"component", "model", "bandwidth", "integral"});
    CsvTable bias({"component", "index", "clean", "poisoned"});
    CsvTable bias_max({"component", "model", "max_abs_diff"});
    for (auto c : kQkv) {
        const ParamSelector w{l, c, ParamKind::Weight};
        const auto pw = get_attention_param(pt, w).values;
        PlotSpec dspec{PlotKind::Density, "Layer " + std::to_string(l) + " " + to_string(c) + " weight FT - PT",
                       "FT - PT", "density", {}};
        for (const auto& [label, ck] : {std::pair<std::string, const Checkpoint*>{"clean", &clean}, {"poisoned", &pois}}) {
            const DensityCurve d = kde_delta_density(get_attention_param(*ck, w).values, pw, kopt);
            for (std::size_t i = 0; i < d.grid.size(); ++i)
                kde.add_row({to_string(c), label, num(d.grid[i]), num(d.density[i])});
            bw.add_row({to_string(c), label, num(d.bandwidth), num(trapezoid(d.grid, d.density))});
            dspec.series.push_back({label, d.grid, d.density, label == "clean" ? SeriesRole::Clean : SeriesRole::Poisoned});
        }
        run.plot("plots/delta_" + layer_tag(l) + "_" + to_string(c) + ".svg", dspec);

        const ParamSelector b{l, c, ParamKind::Bias};
        const auto pb = get_attention_param(pt, b).values;
        const NormalizedDiff dc = normalized_bias_diff(get_attention_param(clean, b).values, pb);
        const NormalizedDiff dp = normalized_bias_diff(get_attention_param(pois, b).values, pb);
        std::vector<double> idx;
        for (std::size_t i = 0; i < dc.values.size(); ++i) {
            bias.add_row({to_string(c), std::to_string(i), num(dc.values[i]), num(dp.values[i])});
            idx.push_back(static_cast<double>(i));
        }
        bias_max.add_row({to_string(c), "clean", num(dc.max_abs)});
        bias_max.add_row({to_string(c), "poisoned", num(dp.max_abs)});
        run.plot("plots/bias_diff_" + layer_tag(l) + "_" + to_string(c) + ".svg",
                 PlotSpec{PlotKind::Scatter,
                          "Layer " + std::to_string(l) + " " + to_string(c) + " bias normalized FT - PT",
                          "index", "normalized difference",
                          {{"clean", idx, dc.values, SeriesRole::Clean},
                           {"poisoned", idx, dp.values, SeriesRole::Poisoned}}});
    }
    run.write("reports/delta_kde_" + layer_tag(l) + ".csv", kde.str());
    run.write("reports/delta_bandwidth_" + layer_tag(l) + ".csv", bw.str());
    run.write("reports/bias_diff_" + layer_tag(l) + ".csv", bias.str());
    run.write("reports/bias_diff_max_" + layer_tag(l) + ".csv", bias_max.str());
    run.out() << "delta densities and bias differences for layer " << l << " written\n";
}

std::vector<std::string> ratio_summary(const std::string& comp, const std::string& kind, const std::string& what,
                                       const RatioResult& r) {
    std::vector<double> kept;
    for (std::size_t i = 0; i < r.ratios.size(); ++i)
        if (!r.masked[i]) kept.push_back(r.ratios[i]);
    std::sort(kept.begin(), kept.end());
    const auto q = [&](double p) {
        if (kept.empty()) return std::string("nan");
        return num(kept[static_cast<std::size_t>(std::floor(p * static_cast<double>(kept.size() - 1)))]);
    };
    return {comp, kind, what, std::to_string(r.ratios.size()), std::to_string(r.n_masked), q(0.0), q(0.05), q(0.5),
            q(0.95), q(1.0)};
}

void cmd_analyze_ratio(Run& run, const Options& o) {
    const Checkpoint pt = run.checkpoint(run.input(o.pretrained, "models/pretrained.bdt"));
    const Checkpoint clean = run.checkpoint(run.input(o.clean, "models/clean.bdt"));
    const Checkpoint pois = run.checkpoint(run.input(o.poisoned, "models/poisoned.bdt"));
    const int l = resolve_layer(clean, o.layer);
    const double eps = o.epsilon.value_or(run.cfg().ratio_epsilon);
    run.cfg().ratio_epsilon = eps;
    const int bins = o.bins.value_or(run.cfg().histogram_bins);

    CsvTable table({"component", "kind", "ratio", "n", "n_masked", "min", "q05", "median", "q95", "max"});
    for (auto c : kQkv) {
        for (auto k : kKinds) {
            const ParamSelector sel{l, c, k};
            const auto vc = get_attention_param(clean, sel).values;
            const auto vp = get_attention_param(pois, sel).values;
            const auto vt = get_attention_param(pt, sel).values;
            const RatioResult pc = param_ratio(vp, vc, eps);
            table.add_row(ratio_summary(to_string(c), to_string(k), "poisoned/clean", pc));
            const RatioResult cf = param_ratio(vc, vt, eps);
            const RatioResult pf = param_ratio(vp, vt, eps);
            table.add_row(ratio_summary(to_string(c), to_string(k), "clean/pretrained", cf));
            table.add_row(ratio_summary(to_string(c), to_string(k), "poisoned/pretrained", pf));
            if (k != ParamKind::Weight) continue;
            // Ratios have heavy tails; plot the central 98%.
            std::vector<double> kept;
            for (std::size_t i = 0; i < pc.ratios.size(); ++i)
                if (!pc.masked[i]) kept.push_back(pc.ratios[i]);
            if (kept.size() < 2) continue;
            std::vector<double> sorted = kept;
            std::sort(sorted.begin(), sorted.end());
            const double lo = sorted[sorted.size() / 100], hi = sorted[sorted.size() - 1 - sorted.size() / 100];
            std::vector<double> clipped;
            for (double v : kept)
                if (v >= lo && v <= hi) clipped.push_back(v);
            const Histogram h = shared_histogram(clipped, bins, lo, hi);
            run.plot("plots/ratio_" + layer_tag(l) + "_" + to_string(c) + ".svg",
                     PlotSpec{PlotKind::Histogram,
                              "Layer " + std::to_string(l) + " " + to_string(c) + " weight ratio poisoned/clean",
                              "W_P / W_C", "count", {counts_series("poisoned/clean", h, SeriesRole::Neutral)}});
        }
    }
    run.write("reports/ratio_" + layer_tag(l) + ".csv", table.str());
    run.out() << "parameter ratios for layer " << l << " written\n";
}

void cmd_analyze_activations(Run& run, const Options& o) {
    const Checkpoint clean = run.checkpoint(run.input(o.clean, "models/clean.bdt"));
    const Checkpoint pois = run.checkpoint(run.input(o.poisoned, "models/poisoned.bdt"));
    const Dataset test = run.dataset(run.input(o.test, "corpus/test.jsonl"));
    auto& cfg = run.cfg();
    if (o.k) cfg.kmeans_k = *o.k;
    if (o.mixed_rate) cfg.poison.mixed_test_rate = *o.mixed_rate;
    const auto seeds = derive_seeds(run.seed());
    const Dataset mixed = mixed_test_set(test, cfg.poison, seeds.mixed);
    const KMeansConfig kc{.k = cfg.kmeans_k, .seed = seeds.analysis};

    CsvTable clusters({"model", "layer", "cluster", "poisoned", "clean"});
    CsvTable summary({"model", "layer", "dominant_cluster", "dominant_poison_fraction"});
    CsvTable trend({"model", "lower_mean", "upper_mean"});
    for (const auto& [label, ck] : {std::pair<std::string, const Checkpoint*>{"clean", &clean}, {"poisoned", &pois}}) {
        const ClusterReport rep = cluster_poison_report(collect_activations(*ck, mixed), kc);
        for (const auto& lc : rep.layers) {
            std::vector<double> edges, pc, cc;
            for (std::size_t c = 0; c < lc.clusters.size(); ++c) {
                clusters.add_row({label, std::to_string(lc.layer), std::to_string(c),
                                  std::to_string(lc.clusters[c].poisoned), std::to_string(lc.clusters[c].clean)});
                edges.push_back(static_cast<double>(c));
                pc.push_back(static_cast<double>(lc.clusters[c].poisoned));
                cc.push_back(static_cast<double>(lc.clusters[c].clean));
            }
            edges.push_back(static_cast<double>(lc.clusters.size()));
            summary.add_row({label, std::to_string(lc.layer), std::to_string(lc.dominant_cluster),
                             num(lc.dominant_poison_fraction)});
            run.plot("plots/activation_clusters_" + label + "_" + layer_tag(lc.layer) + ".svg",
                     PlotSpec{PlotKind::Histogram,
                              label + " model, layer " + std::to_string(lc.layer) + " k-means clusters",
                              "cluster", "samples",
                              {{"clean samples", edges, cc, SeriesRole::Clean},
                               {"poisoned samples", edges, pc, SeriesRole::Poisoned}}});
        }
        trend.add_row({label, num(rep.lower_mean), num(rep.upper_mean)});
        run.out() << label << ": dominant poison fraction lower " << num(rep.lower_mean) << ", upper "
                  << num(rep.upper_mean) << "\n";
    }
    run.write("reports/activation_clusters.csv", clusters.str());
    run.write("reports/activation_summary.csv", summary.str());
    run.write("reports/activation_trend.csv", trend.str());
}

std::string trigger_name(int label) { return label < 0 ? "clean" : "trigger " + std::to_string(label); }

void cmd_analyze_embeddings(Run& run, const Options& o) {
    const Checkpoint clean = run.checkpoint(run.input(o.clean, "models/clean.bdt"));
    const Checkpoint pois = run.checkpoint(run.input(o.poisoned, "models/poisoned.bdt"));
    const Dataset test = run.dataset(run.input(o.test, "corpus/test.jsonl"));
    auto& cfg = run.cfg();
    if (o.perplexity) cfg.tsne_perplexity = *o.perplexity;
    const Dataset set = embedding_set(test, cfg.poison.target_label);
    TsneConfig tc;
    // The configured default is capped for small sets; an explicit flag is used as given.
    tc.perplexity = o.perplexity ? *o.perplexity
                                 : std::min(cfg.tsne_perplexity, std::floor(static_cast<double>(set.size() - 1) / 3.0));
    if (o.tsne_iters) tc.iterations = *o.tsne_iters;
    tc.seed = derive_seeds(run.seed()).analysis;

    CsvTable purity({"model", "space", "purity"});
    CsvTable kl({"model", "kl_after_exaggeration", "kl_final"});
    for (const auto& [label, ck] : {std::pair<std::string, const Checkpoint*>{"clean", &clean}, {"poisoned", &pois}}) {
        const EmbeddingAnalysis a = analyze_embeddings(*ck, set, tc);
        purity.add_row({label, "raw", num(a.purity_raw)});
        purity.add_row({label, "tsne", num(a.purity_tsne)});
        kl.add_row({label, num(a.tsne.kl_after_exaggeration), num(a.tsne.kl)});
        CsvTable coords({"index", "label", "x", "y"});
        std::map<int, Series> groups;
        for (std::size_t i = 0; i < a.labels.size(); ++i) {
            coords.add_row({std::to_string(i), trigger_name(a.labels[i]), num(a.tsne.coords(i, 0)),
                            num(a.tsne.coords(i, 1))});
            auto& s = groups[a.labels[i]];
            s.label = trigger_name(a.labels[i]);
            s.role = a.labels[i] < 0 ? SeriesRole::Clean : SeriesRole::Poisoned;
            s.x.push_back(a.tsne.coords(i, 0));
            s.y.push_back(a.tsne.coords(i, 1));
        }
        run.write("reports/embedding_tsne_" + label + ".csv", coords.str());
        PlotSpec spec{PlotKind::ClusterScatter, label + " model [CLS] embeddings (t-SNE)", "t-SNE 1", "t-SNE 2", {}};
        for (auto& [_, s] : groups) spec.series.push_back(std::move(s));
        run.plot("plots/embedding_tsne_" + label + ".svg", spec);
        run.out() << label << ": purity raw " << num(a.purity_raw) << ", t-SNE " << num(a.purity_tsne) << "\n";
    }
    run.write("reports/embedding_purity.csv", purity.str());
    run.write("reports/embedding_kl.csv", kl.str());
}

void cmd_reset_sweep(Run& run, const Options& o) {
    const Checkpoint pt = run.checkpoint(run.input(o.pretrained, "models/pretrained.bdt"));
    const Checkpoint clean = run.checkpoint(run.input(o.clean, "models/clean.bdt"));
    const Checkpoint pois = run.checkpoint(run.input(o.poisoned, "models/poisoned.bdt"));
    const Dataset test = run.dataset(run.input(o.test, "corpus/test.jsonl"));
    if (!o.thresholds.empty()) run.cfg().reset_thresholds = o.thresholds;
    const auto rows = reset_sweep(clean, pois, pt, run.cfg().reset_thresholds, test, run.cfg().poison.target_label);
    const std::string csv = sweep_csv(rows);
    run.write("reports/reset_sweep.csv", csv);
    run.out() << csv;
}

void cmd_zoo_build(Run& run, const Options& o) {
    auto& cfg = run.cfg();
    if (o.n_models) cfg.zoo.n_models = *o.n_models;
    if (o.n_train) cfg.zoo.n_train = *o.n_train;
    if (o.epochs) cfg.zoo.epochs = *o.epochs;
    if (cfg.zoo.n_models < 1) throw Error("zoo-build: --n must be positive");
    CsvTable index({"file", "label", "seed", "acc", "asr"});
    for (int i = 0; i < cfg.zoo.n_models; ++i) {
        LabConfig mc = cfg;
        mc.corpus.n_train = cfg.zoo.n_train;
        mc.corpus.n_test = std::max(20, cfg.zoo.n_train / 4);
        mc.train.epochs = cfg.zoo.epochs;
        const std::uint64_t s = run.seed() + static_cast<std::uint64_t>(i);
        const TrainedPair pair = train_pair(mc, s);
        for (const auto& [label, r] :
             {std::pair<std::string, const TrainResult*>{"clean", &pair.clean}, {"poisoned", &pair.poisoned}}) {
            const Checkpoint ck = round_to_f32(r->checkpoint);
            const std::string file = label + "_" + std::to_string(i) + ".bdt";
            run.write_checkpoint("zoo/" + file, ck);
            index.add_row({file, label == "clean" ? "0" : "1", std::to_string(s),
                           num(evaluate_accuracy(ck, pair.corpus.test)),
                           num(attack_success_rate(ck, pair.corpus.test, mc.poison.target_label))});
        }
        run.out() << "zoo pair " << i + 1 << "/" << cfg.zoo.n_models << " trained\n";
    }
    run.write("zoo/index.csv", index.str());
}

std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

void cmd_meta_train(Run& run, const Options& o) {
    auto& cfg = run.cfg();
    if (o.epochs) cfg.meta.epochs = *o.epochs;
    if (o.learning_rate) cfg.meta.learning_rate = *o.learning_rate;
    const fs::path dir = o.zoo.empty() ? run.path("zoo") : fs::path(o.zoo);
    const auto rows = parse_csv_rows(run.read_input(dir / "index.csv"));
    if (rows.size() < 2 || rows[0].size() < 2 || rows[0][0] != "file") throw Error("meta-train: malformed zoo index");
    std::vector<ZooSample> zoo;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const Checkpoint ck = run.checkpoint(dir / rows[i][0]);
        zoo.push_back({flatten_attention_weights(ck), std::stoi(rows[i][1])});
    }
    MetaConfig mc;
    mc.epochs = cfg.meta.epochs;
    mc.learning_rate = cfg.meta.learning_rate;
    mc.validation_fraction = cfg.meta.validation_fraction;
    mc.seed = run.seed();
    const MetaTrainResult r = train_meta_classifier(zoo, mc);

    run.write("models/meta_classifier.bdt", encode_meta_classifier(r.classifier));

    CsvTable loss({"epoch", "loss"});
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) loss.add_row({std::to_string(e + 1), num(r.loss_curve[e])});
    run.write("reports/meta_loss.csv", loss.str());
    CsvTable metrics({"split", "n", "accuracy", "loss"});
    metrics.add_row({"train", std::to_string(r.train.n), num(r.train.accuracy), num(r.train.loss)});
    metrics.add_row({r.validation_is_train ? "validation(=train)" : "validation", std::to_string(r.validation.n),
                     num(r.validation.accuracy), num(r.validation.loss)});
    run.write("reports/meta_metrics.csv", metrics.str());
    run.out() << "meta-classifier: train acc " << num(r.train.accuracy) << ", validation acc "
              << num(r.validation.accuracy) << "\n";
}

void cmd_meta_classify(Run& run, const Options& o) {
    const fs::path cpath = run.input(o.classifier, "models/meta_classifier.bdt");
    const MetaClassifier clf = decode_meta_classifier(run.read_input(cpath));
    std::vector<fs::path> targets;
    for (const auto& c : o.checkpoints) targets.emplace_back(c);
    if (targets.empty()) targets = {run.path("models/clean.bdt"), run.path("models/poisoned.bdt")};
    CsvTable table({"checkpoint", "probability_poisoned", "decision"});
    for (const auto& t : targets) {
        const Checkpoint ck = run.checkpoint(t);
        const double p = classify_checkpoint(clf, ck);
        const std::string shown = run.manifest().inputs.back().first;
        table.add_row({shown, num(p), is_poisoned(p) ? "poisoned" : "clean"});
        run.out() << shown << ": p(poisoned) = " << num(p) << "\n";
    }
    run.write("reports/meta_classify.csv", table.str());
}

void cmd_report(Run& run, const Options&) {
    const fs::path reports = run.path("reports");
    if (!fs::is_directory(reports)) throw Error("report: no reports directory under " + reports.parent_path().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(reports))
        if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    const std::vector<std::string> inline_tables{"metrics_clean.csv",     "metrics_poisoned.csv",
                                                 "activation_trend.csv",  "embedding_purity.csv",
                                                 "reset_sweep.csv",       "meta_metrics.csv",
                                                 "meta_classify.csv"};
    std::ostringstream md;
    md << "# Backdoor lab report\n\nSeed " << run.seed() << ".\n";
    for (const auto& name : inline_tables) {
        const fs::path p = reports / name;
        if (!fs::exists(p)) continue;
        const auto rows = parse_csv_rows(run.read_input(p));
        md << "\n## " << name << "\n\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            md << "|";
            for (const auto& c : rows[i]) md << " " << c << " |";
            md << "\n";
            if (i == 0) {
                md << "|";
                for (std::size_t c = 0; c < rows[i].size(); ++c) md << "---|";
                md << "\n";
            }
        }
    }
    md << "\n## Files\n\n";
    for (const auto& p : files) {
        if (p.filename() == "summary.md") continue;
        md << "- reports/" << p.filename().string() << "\n";
    }
    run.write("reports/summary.md", md.str());
    run.out() << "summary written to " << run.path("reports/summary.md").string() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Backdoor analysis lab for miniature transformer classifiers", "bdlab"};
    app.require_subcommand(1, 1);
    Options o;

    using Handler = std::function<void(Run&, const Options&)>;
    std::vector<std::pair<CLI::App*, Handler>> commands;
    const auto add = [&](const std::string& name, const std::string& desc, Handler h) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--seed", o.seed, "Run seed")->capture_default_str();
        sub->add_option("--out", o.out_dir, std::string("Output directory (default $") + kOutDirEnv + " or bdlab-out)");
        sub->add_option("--config", o.config, "Experiment defaults (JSON)");
        commands.emplace_back(sub, std::move(h));
        return sub;
    };
    const auto models = [&](CLI::App* sub, bool with_pretrained) {
        if (with_pretrained) sub->add_option("--pretrained", o.pretrained, "Pre-trained parent checkpoint");
        sub->add_option("--clean", o.clean, "Clean fine-tuned checkpoint");
        sub->add_option("--poisoned", o.poisoned, "Poisoned fine-tuned checkpoint");
    };

    auto* gen = add("gen-corpus", "Generate the synthetic train/test corpus", cmd_gen_corpus);
    gen->add_option("--n-train", o.n_train);
    gen->add_option("--n-test", o.n_test);

    for (auto [name, handler] : {std::pair<const char*, Handler>{"train", cmd_train}, {"poison-train", cmd_poison_train}}) {
        auto* sub = add(name, std::string(name) == "train" ? "Fine-tune on the clean corpus"
                                                           : "Poison the corpus and fine-tune on it",
                        handler);
        sub->add_option("--corpus", o.corpus, "Training JSONL");
        sub->add_option("--test", o.test, "Test JSONL");
        sub->add_option("--pretrained", o.pretrained, "Parent checkpoint");
        sub->add_option("--name", o.name, "Output model name");
        sub->add_option("--epochs", o.epochs);
        sub->add_flag("--freeze-layer-norm", o.freeze_layer_norm, "Hold layernorm parameters fixed");
        if (std::string(name) == "poison-train") {
            sub->add_option("--rate", o.rate, "Poisoning rate");
            sub->add_option("--target", o.target, "Target label");
        }
    }

    auto* dist = add("analyze-dist", "Attention parameter distributions, clean vs poisoned", cmd_analyze_dist);
    models(dist, false);
    dist->add_option("--layer", o.layer);
    dist->add_option("--bins", o.bins);
    dist->add_flag("--include-layernorm", o.include_layer_norm);

    auto* delta = add("analyze-delta", "Densities of fine-tuned minus pre-trained parameters", cmd_analyze_delta);
    models(delta, true);
    delta->add_option("--layer", o.layer);

    auto* ratio = add("analyze-ratio", "Parameter ratio statistics", cmd_analyze_ratio);
    models(ratio, true);
    ratio->add_option("--layer", o.layer);
    ratio->add_option("--epsilon", o.epsilon);
    ratio->add_option("--bins", o.bins);

    auto* acts = add("analyze-activations", "k-means over per-layer [CLS] activations", cmd_analyze_activations);
    models(acts, false);
    acts->add_option("--test", o.test);
    acts->add_option("--k", o.k);
    acts->add_option("--mixed-rate", o.mixed_rate);

    auto* emb = add("analyze-embeddings", "t-SNE of context embeddings and trigger purity", cmd_analyze_embeddings);
    models(emb, false);
    emb->add_option("--test", o.test);
    emb->add_option("--perplexity", o.perplexity);
    emb->add_option("--iterations", o.tsne_iters);

    auto* sweep = add("reset-sweep", "Reset attention weights over a threshold sweep", cmd_reset_sweep);
    models(sweep, true);
    sweep->add_option("--test", o.test);
    sweep->add_option("--thresholds", o.thresholds)->delimiter(',');

    auto* zoo = add("zoo-build", "Train clean and poisoned model pairs for the meta-classifier", cmd_zoo_build);
    zoo->add_option("--n", o.n_models, "Number of seeds");
    zoo->add_option("--n-train", o.n_train);
    zoo->add_option("--epochs", o.epochs);

    auto* mtrain = add("meta-train", "Train the meta-classifier on the zoo", cmd_meta_train);
    mtrain->add_option("--zoo", o.zoo);
    mtrain->add_option("--epochs", o.epochs);
    mtrain->add_option("--lr", o.learning_rate);

    auto* mcls = add("meta-classify", "Score checkpoints with the meta-classifier", cmd_meta_classify);
    mcls->add_option("--classifier", o.classifier);
    mcls->add_option("--checkpoint", o.checkpoints);

    add("report", "Collect report tables into a summary", cmd_report);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    for (auto& [sub, handler] : commands) {
        if (!sub->parsed()) continue;
        try {
            const fs::path cfg_path = o.config.empty() ? default_config_path() : fs::path(o.config);
            LabConfig cfg = (o.config.empty() && !fs::exists(cfg_path)) ? LabConfig{} : load_lab_config(cfg_path);
            Run run(sub->get_name(), o.out_dir.empty() ? default_out_dir() : fs::path(o.out_dir), o.seed, std::move(cfg),
                    out);
            handler(run, o);
            run.finish();
            return kExitOk;
        } catch (const std::exception& e) {
            err << "bdlab " << sub->get_name() << ": error: " << e.what() << "\n";
            return kExitRuntime;
        }
    }
    return kExitUsage;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, out, err);
}

}  // namespace bdlab
