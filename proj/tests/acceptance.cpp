// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bdlab/analysis.hpp"
#include "bdlab/cli.hpp"
#include "bdlab/config.hpp"
#include "bdlab/corpus.hpp"
#include "bdlab/defense.hpp"
#include "bdlab/experiment.hpp"
#include "bdlab/extraction.hpp"
#include "bdlab/io.hpp"
#include "bdlab/model.hpp"
#include "bdlab/numeric.hpp"
#include "bdlab/report.hpp"
#include "bdlab/tensor_file.hpp"

using namespace bdlab;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances ------------------------------------------------------

constexpr double kMinAsr = 0.95;
constexpr double kMaxAccGap = 0.05;
constexpr double kMinCleanAcc = 0.85;
constexpr double kMinLayerGap = 0.15;   // poisoned upper - poisoned lower
constexpr double kMinModelGap = 0.2;    // poisoned upper - clean upper
constexpr double kMinPurityGap = 0.2;
constexpr double kKdeTol = 1e-12;
constexpr double kKMeansRelTol = 1e-9;
constexpr double kGradTol = 1e-3;
constexpr double kRowSumTol = 1e-9;
constexpr int kKMeansK = 10;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};
const std::string kThresholds = "1.1,1.01,1.001";

int failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << detail << std::endl;
    if (!pass) ++failures;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != 0) std::cerr << "bdlab " << args[0] << " exited " << code << ": " << err.str();
    return code;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(read_file(p));
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = sha256_file(e.path());
    return out;
}

// ---- criteria 1-3 -----------------------------------------------------------

struct SeedRun {
    std::uint64_t seed;
    Checkpoint pretrained, clean, poisoned;
    Dataset test;
    double acc_clean, acc_poisoned, asr;
    ClusterReport act_clean, act_poisoned;
    EmbeddingAnalysis emb_clean, emb_poisoned;
};

SeedRun run_seed(const LabConfig& cfg, std::uint64_t seed) {
    SeedRun r;
    r.seed = seed;
    const TrainedPair pair = train_pair(cfg, seed);
    r.pretrained = round_to_f32(pair.pretrained);
    r.clean = round_to_f32(pair.clean.checkpoint);
    r.poisoned = round_to_f32(pair.poisoned.checkpoint);
    r.test = pair.corpus.test;
    r.acc_clean = evaluate_accuracy(r.clean, r.test);
    r.acc_poisoned = evaluate_accuracy(r.poisoned, r.test);
    r.asr = attack_success_rate(r.poisoned, r.test, cfg.poison.target_label);

    const auto seeds = derive_seeds(seed);
    const Dataset mixed = mixed_test_set(r.test, cfg.poison, seeds.mixed);
    const KMeansConfig kc{.k = kKMeansK, .seed = seeds.analysis};
    r.act_clean = cluster_poison_report(collect_activations(r.clean, mixed), kc);
    r.act_poisoned = cluster_poison_report(collect_activations(r.poisoned, mixed), kc);

    const Dataset set = embedding_set(r.test, cfg.poison.target_label);
    TsneConfig tc;
    tc.perplexity = std::min(cfg.tsne_perplexity, std::floor(static_cast<double>(set.size() - 1) / 3.0));
    tc.seed = seeds.analysis;
    r.emb_clean = analyze_embeddings(r.clean, set, tc);
    r.emb_poisoned = analyze_embeddings(r.poisoned, set, tc);
    return r;
}

void criteria_1_to_3(const std::vector<SeedRun>& runs) {
    bool ok1 = true, ok2 = true, ok3 = true;
    std::string d1, d2, d3;
    for (const auto& r : runs) {
        const std::string s = "seed " + std::to_string(r.seed);
        ok1 &= r.asr >= kMinAsr && std::abs(r.acc_clean - r.acc_poisoned) <= kMaxAccGap && r.acc_clean >= kMinCleanAcc;
        d1 += s + ": asr " + fmt(r.asr) + " acc " + fmt(r.acc_clean) + "/" + fmt(r.acc_poisoned) + "; ";

        const double lower = r.act_poisoned.lower_mean, upper = r.act_poisoned.upper_mean;
        const double clean_upper = r.act_clean.upper_mean;
        ok2 &= upper - lower >= kMinLayerGap && upper - clean_upper >= kMinModelGap;
        d2 += s + ": poisoned L0-2 " + fmt(lower) + " L3-5 " + fmt(upper) + ", clean L3-5 " + fmt(clean_upper) + "; ";

        ok3 &= r.emb_poisoned.purity_raw >= r.emb_clean.purity_raw + kMinPurityGap &&
               r.emb_poisoned.purity_tsne >= r.emb_clean.purity_tsne + kMinPurityGap;
        d3 += s + ": raw " + fmt(r.emb_poisoned.purity_raw) + " vs " + fmt(r.emb_clean.purity_raw) + ", t-SNE " +
              fmt(r.emb_poisoned.purity_tsne) + " vs " + fmt(r.emb_clean.purity_tsne) + "; ";
    }
    verdict(1, "poisoning efficacy", ok1, d1);
    verdict(2, "activation clustering", ok2, d2);
    verdict(3, "embedding separation", ok3, d3);
}

// ---- criteria 4-5: CLI over the seed-0 models --------------------------------

void criteria_4_and_5(const SeedRun& r, const fs::path& config, const fs::path& work) {
    const fs::path out = work / "seed0";
    fs::remove_all(out);
    save_checkpoint(r.pretrained, out / "models/pretrained.bdt");
    save_checkpoint(r.clean, out / "models/clean.bdt");
    save_checkpoint(r.poisoned, out / "models/poisoned.bdt");
    save_dataset_jsonl(r.test, out / "corpus/test.jsonl");
    const std::vector<std::string> common{"--out", out.string(), "--config", config.string(), "--seed",
                                          std::to_string(r.seed)};

    {
        std::vector<std::string> args{"analyze-dist"};
        args.insert(args.end(), common.begin(), common.end());
        bool ok = cli(args) == 0;
        std::set<std::string> keys;
        std::size_t finite = 0;
        if (ok) {
            const auto rows = csv_rows(out / "reports/dist_l1.csv");
            for (std::size_t i = 1; i < rows.size(); ++i) {
                keys.insert(rows[i][0] + "/" + rows[i][1] + "/" + rows[i][2]);
                finite += std::isfinite(std::stod(rows[i][3]));
            }
            for (int l = 0; l < 6; ++l)
                for (const char* c : {"q", "k", "v"})
                    for (const char* k : {"weight", "bias"})
                        ok &= keys.count(std::to_string(l) + "/" + c + "/" + k) == 1;
            ok &= keys.size() == 36 && finite == 36;
        }
        verdict(4, "parameter distributions", ok,
                std::to_string(keys.size()) + " layer/component/kind rows, " + std::to_string(finite) +
                    " finite L1 distances");
    }

    {
        std::vector<std::string> args{"reset-sweep"};
        args.insert(args.end(), common.begin(), common.end());
        args.insert(args.end(), {"--thresholds", kThresholds});
        bool ok = cli(args) == 0;
        std::string detail;
        if (ok) {
            const auto rows = csv_rows(out / "reports/reset_sweep.csv");
            ok = rows.size() == 5 && rows[0] == std::vector<std::string>{"threshold", "n_reset", "clean_acc",
                                                                           "poisoned_acc", "poisoned_asr"} &&
                 rows[1][0] == "No-Resetting";
            if (ok) {
                for (std::size_t i = 2; i < rows.size(); ++i) ok &= std::stoull(rows[i][1]) >= std::stoull(rows[i - 1][1]);
                const double base_asr = std::stod(rows[1][4]), last_asr = std::stod(rows[4][4]);
                ok &= last_asr <= base_asr;
                detail = "n_reset " + rows[1][1] + "," + rows[2][1] + "," + rows[3][1] + "," + rows[4][1] +
                         "; ASR baseline " + rows[1][4] + " -> " + rows[4][4] + " at 1.001; clean acc " + rows[1][2] +
                         " -> " + rows[4][2];
            }
        }
        verdict(5, "reset sweep", ok, detail);
    }
}

// ---- criterion 6: oracles ------------------------------------------------------

double sse_of_partition(const Matrix& x, unsigned mask) {
    double total = 0;
    for (unsigned side = 0; side < 2; ++side) {
        std::vector<double> mean(x.cols(), 0.0);
        int count = 0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            if (((mask >> i) & 1u) != side) continue;
            for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j);
            ++count;
        }
        if (count == 0) return std::numeric_limits<double>::infinity();
        for (double& m : mean) m /= count;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            if (((mask >> i) & 1u) != side) continue;
            for (std::size_t j = 0; j < x.cols(); ++j) total += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
        }
    }
    return total;
}

void criterion_6() {
    // k-means: same instance stream as the unit oracle.
    Rng rng(2024, 7);
    int instances = 0, kmeans_miss = 0;
    for (std::size_t n = 2; n <= 8; ++n)
        for (std::size_t d = 1; d <= 3; ++d)
            for (int rep = 0; rep < 40; ++rep) {
                Matrix x(n, d);
                for (double& v : x.data()) v = rng.normal();
                double best = std::numeric_limits<double>::infinity();
                for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) best = std::min(best, sse_of_partition(x, mask));
                const auto r = kmeans_cluster(x, {.k = 2, .seed = static_cast<std::uint64_t>(rep)});
                kmeans_miss += std::abs(r.inertia - best) > kKMeansRelTol * std::max(1.0, best);
                ++instances;
            }

    // KDE against a direct sum.
    Rng krng(4);
    std::vector<double> ft(1000), pt(1000), delta(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        ft[i] = krng.normal(0, 0.05);
        pt[i] = krng.normal(0, 0.05);
        delta[i] = ft[i] - pt[i];
    }
    const auto curve = kde_delta_density(ft, pt);
    double kde_err = 0;
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
        double sum = 0;
        for (double s : delta) {
            const double u = (curve.grid[g] - s) / curve.bandwidth;
            sum += std::exp(-u * u / 2) / std::sqrt(2 * std::numbers::pi);
        }
        kde_err = std::max(kde_err, std::abs(curve.density[g] - sum / (1000.0 * curve.bandwidth)));
    }

    // Histogram against linear-scan binning.
    Rng hrng(1);
    std::vector<double> v(768 * 768);
    for (double& x : v) x = hrng.normal();
    const auto h = histogram(v, 100);
    const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
    std::vector<double> edges(101);
    for (int i = 0; i <= 100; ++i) edges[static_cast<std::size_t>(i)] = lo + (hi - lo) / 100 * i;
    edges.back() = hi;
    std::vector<std::size_t> brute(100, 0);
    for (double x : v) {
        const auto it = std::upper_bound(edges.begin(), edges.end(), x);
        std::size_t b = static_cast<std::size_t>(it - edges.begin()) - 1;
        brute[std::min<std::size_t>(b, 99)]++;
    }
    const bool hist_ok = h.counts == brute;

    verdict(6, "oracle equivalences", kmeans_miss == 0 && kde_err <= kKdeTol && hist_ok,
            "k-means " + std::to_string(instances - kmeans_miss) + "/" + std::to_string(instances) +
                " exhaustive optima; KDE max error " + sci(kde_err) + "; histogram " +
                (hist_ok ? "exact" : "mismatch"));
}

// ---- criterion 7: numerics ----------------------------------------------------

void criterion_7() {
    ModelConfig rc;
    rc.max_seq_len = 16;
    rc.d_model = 8;
    rc.n_heads = 2;
    rc.n_layers = 1;
    rc.d_ffn = 16;
    Checkpoint ck = init_model(rc, 7);
    Rng jitter(7, 99);
    for (auto& [name, t] : ck.tensors)
        for (double& x : t.values) x += jitter.normal(0, 0.3);
    Sample s;
    s.tokens = {kClsToken, 2, 3, 30, 11, 30, 40, 5, kPadToken, kPadToken};
    s.label = 1;
    const auto g = gradient_check(ck, s, 1e-5, 0, 200);

    Rng rng(3);
    Matrix logits(200, 17);
    for (double& x : logits.data()) x = rng.normal(0, 20);
    const Matrix sm = softmax_rows(logits);
    double sm_err = 0;
    for (std::size_t i = 0; i < sm.rows(); ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < sm.cols(); ++j) sum += sm(i, j);
        sm_err = std::max(sm_err, std::abs(sum - 1));
    }

    Matrix pts(60, 5);
    for (double& x : pts.data()) x = rng.normal();
    const Matrix p = tsne_conditional_p(pts, 20);
    double p_err = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < p.cols(); ++j) sum += p(i, j);
        p_err = std::max(p_err, std::abs(sum - 1));
    }
    const auto ts = tsne_project(pts, {.perplexity = std::nullopt, .seed = 1});

    verdict(7, "numerical checks",
            g.max_rel_error <= kGradTol && g.n_checked > 0 && sm_err <= kRowSumTol && p_err <= kRowSumTol &&
                ts.kl < ts.kl_after_exaggeration,
            "grad rel error " + sci(g.max_rel_error) + " over " + std::to_string(g.n_checked) +
                " params; softmax row error " + sci(sm_err) + "; P row error " + sci(p_err) +
                "; KL " + fmt(ts.kl_after_exaggeration) + " -> " + fmt(ts.kl));
}

// ---- criterion 8: layernorm freezing ------------------------------------------

void criterion_8(const LabConfig& cfg) {
    CorpusSpec cs = cfg.corpus;
    cs.n_train = 200;
    cs.n_test = 20;
    const Corpus c = generate_corpus(cs);
    const Checkpoint pt = init_model(cfg.model, 11);
    TrainConfig tc = cfg.train;
    tc.epochs = 1;
    Checkpoint frozen_parent = pt;
    frozen_parent.config.freeze_layer_norm = true;
    const Checkpoint frozen = train(frozen_parent, c.train, tc).checkpoint;
    const Checkpoint free = train(pt, c.train, tc).checkpoint;
    std::size_t ln = 0, frozen_same = 0, free_diff = 0;
    for (const auto& [name, t] : pt.tensors) {
        if (!names::is_layer_norm(name)) continue;
        ++ln;
        frozen_same += frozen.at(name).values == t.values;
        free_diff += free.at(name).values != t.values;
    }
    verdict(8, "freeze invariant", ln > 0 && frozen_same == ln && free_diff >= 1,
            std::to_string(frozen_same) + "/" + std::to_string(ln) + " layernorm tensors unchanged when frozen, " +
                std::to_string(free_diff) + " changed when not");
}

// ---- criterion 9: meta-classifier pipeline --------------------------------------

void criterion_9(const fs::path& config, const fs::path& work) {
    const fs::path out = work / "meta";
    fs::remove_all(out);
    const std::vector<std::string> common{"--out", out.string(), "--config", config.string(), "--seed", "0"};
    const auto with = [&](std::vector<std::string> a) {
        a.insert(a.begin() + 1, common.begin(), common.end());
        return a;
    };
    bool ok = cli(with({"zoo-build", "--n", "8"})) == 0;
    std::size_t n_clean = 0, n_pois = 0;
    if (ok)
        for (const auto& row : csv_rows(out / "zoo/index.csv"))
            n_clean += row[1] == "0", n_pois += row[1] == "1";
    ok = ok && n_clean == 8 && n_pois == 8 && cli(with({"meta-train"})) == 0;
    std::vector<double> loss;
    if (ok)
        for (const auto& row : csv_rows(out / "reports/meta_loss.csv"))
            if (row[0] != "epoch") loss.push_back(std::stod(row[1]));
    bool decreasing = loss.size() >= 2;
    for (std::size_t i = 1; i < loss.size(); ++i) decreasing &= loss[i] < loss[i - 1];
    ok = ok && decreasing && fs::exists(out / "reports/meta_metrics.csv");
    ok = ok && cli(with({"meta-classify", "--checkpoint", (out / "zoo/clean_0.bdt").string(), "--checkpoint",
                         (out / "zoo/poisoned_0.bdt").string()})) == 0;
    std::size_t scored = 0;
    if (ok) scored = csv_rows(out / "reports/meta_classify.csv").size() - 1;
    ok = ok && scored == 2;
    verdict(9, "meta-classifier pipeline", ok,
            "zoo " + std::to_string(n_clean) + "+" + std::to_string(n_pois) + ", " + std::to_string(loss.size()) +
                " loss epochs " + (loss.empty() ? "" : fmt(loss.front()) + " -> " + fmt(loss.back())) +
                (decreasing ? " strictly decreasing" : " NOT strictly decreasing") + ", " + std::to_string(scored) +
                " checkpoints scored");
}

// ---- criterion 10: reproducibility --------------------------------------------

void run_pipeline(const fs::path& out, const fs::path& config) {
    const std::vector<std::vector<std::string>> steps{
        {"gen-corpus"},        {"train"},          {"poison-train"},      {"analyze-dist"},
        {"analyze-delta"},     {"analyze-ratio"},  {"analyze-activations"}, {"analyze-embeddings"},
        {"reset-sweep"},       {"zoo-build"},      {"meta-train"},        {"meta-classify"},
        {"report"}};
    for (auto s : steps) {
        s.insert(s.end(), {"--out", out.string(), "--config", config.string(), "--seed", "3"});
        if (cli(s) != 0) throw Error("pipeline step " + s[0] + " failed");
    }
}

void criterion_10(const fs::path& work) {
    const fs::path config = work / "small.json";
    write_file_atomic(config, R"({"corpus":{"n_train":300,"n_test":100},"train":{"epochs":2},)"
                              R"("zoo":{"n_models":2,"n_train":100,"epochs":1},"meta":{"epochs":10}})");
    const fs::path a = work / "repro_a", b = work / "repro_b";
    fs::remove_all(a);
    fs::remove_all(b);
    bool ok = true;
    std::string detail;
    try {
        run_pipeline(a, config);
        run_pipeline(b, config);
        const auto ha = tree_hashes(a), hb = tree_hashes(b);
        std::size_t differ = 0;
        for (const auto& [p, h] : ha) differ += !hb.count(p) || hb.at(p) != h;
        ok = ha.size() == hb.size() && differ == 0 && ha.size() > 50;
        detail = std::to_string(ha.size()) + " files, " + std::to_string(differ) + " differ";
    } catch (const std::exception& e) {
        ok = false;
        detail = e.what();
    }
    verdict(10, "reproducibility", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path config = argc > 1 ? fs::path(argv[1]) : fs::path(BDLAB_SOURCE_DIR) / "configs/defaults.json";
    const fs::path work = fs::temp_directory_path() / "bdlab_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    try {
        const LabConfig cfg = load_lab_config(config);
        std::vector<SeedRun> runs;
        for (auto s : kSeeds) runs.push_back(run_seed(cfg, s));
        criteria_1_to_3(runs);
        criteria_4_and_5(runs[0], config, work);
        criterion_6();
        criterion_7();
        criterion_8(cfg);
        criterion_9(config, work);
        criterion_10(work);
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
        ++failures;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (failures ? "FAILED " : "ALL PASSED ") << "(" << failures << " failing, " << fmt(secs, 1) << " s)"
              << std::endl;
    fs::remove_all(work);
    return failures ? 1 : 0;
}
