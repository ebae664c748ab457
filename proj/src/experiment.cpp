#include "bdlab/experiment.hpp"

namespace bdlab {

RunSeeds derive_seeds(std::uint64_t seed) {
    return RunSeeds{seed, seed, seed, mix64(seed ^ 0x706f69736f6eULL), mix64(seed ^ 0x6d69786564ULL), seed};
}

Dataset mixed_test_set(const Dataset& test, const PoisonSettings& poison, std::uint64_t seed) {
    return poison_dataset(test, poison.mixed_test_rate, poison.target_label, seed);
}

Dataset embedding_set(const Dataset& test, int target_label) {
    Dataset out;
    out.target_label = target_label;
    for (const auto& s : test.samples)
        if (!s.poisoned && s.label != target_label) out.samples.push_back(s);
    const std::size_t n = out.samples.size();
    if (n == 0) throw Error("embedding_set: no eligible test samples");
    for (std::size_t i = 0; i < n; ++i)
        out.samples.push_back(inject_trigger(out.samples[i], static_cast<int>(i % kNumTriggers), target_label));
    return out;
}

std::vector<int> trigger_labels(const Dataset& data) {
    std::vector<int> labels;
    labels.reserve(data.size());
    for (const auto& s : data.samples) labels.push_back(s.trigger_id ? *s.trigger_id : -1);
    return labels;
}

EmbeddingAnalysis analyze_embeddings(const Checkpoint& ckpt, const Dataset& set, const TsneConfig& cfg) {
    EmbeddingAnalysis a;
    a.embeddings = collect_context_embeddings(ckpt, set);
    a.labels = trigger_labels(set);
    a.tsne = tsne_project(a.embeddings.rows, cfg);
    a.purity_raw = neighborhood_purity(a.embeddings.rows, a.labels);
    a.purity_tsne = neighborhood_purity(a.tsne.coords, a.labels);
    return a;
}

TrainedPair train_pair(const LabConfig& cfg, std::uint64_t seed) {
    const auto seeds = derive_seeds(seed);
    TrainedPair p;
    CorpusSpec cs = cfg.corpus;
    cs.seed = seeds.corpus;
    p.corpus = generate_corpus(cs);
    p.poisoned_train = poison_dataset(p.corpus.train, cfg.poison.rate, cfg.poison.target_label, seeds.poison);
    p.pretrained = init_model(cfg.model, seeds.init);
    TrainConfig tc = cfg.train;
    tc.seed = seeds.train;
    p.clean = train(p.pretrained, p.corpus.train, tc);
    p.poisoned = train(p.pretrained, p.poisoned_train, tc);
    return p;
}

}  // namespace bdlab
