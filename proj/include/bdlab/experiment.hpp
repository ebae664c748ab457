#pragma once

#include <cstdint>
#include <vector>

#include "bdlab/analysis.hpp"
#include "bdlab/config.hpp"
#include "bdlab/corpus.hpp"
#include "bdlab/extraction.hpp"
#include "bdlab/model.hpp"

namespace bdlab {

/// Seeds derived from the single run seed.
struct RunSeeds {
    std::uint64_t corpus, init, train, poison, mixed, analysis;
};

RunSeeds derive_seeds(std::uint64_t seed);

/// Clean test set with a fraction of eligible samples replaced by triggered copies.
Dataset mixed_test_set(const Dataset& test, const PoisonSettings& poison, std::uint64_t seed);

/// Every non-target test sample, followed by one triggered copy of each (trigger ids cycle).
Dataset embedding_set(const Dataset& test, int target_label);

/// -1 for clean samples, the trigger id otherwise.
std::vector<int> trigger_labels(const Dataset& data);

struct EmbeddingAnalysis {
    EmbeddingMatrix embeddings;
    TsneResult tsne;
    std::vector<int> labels;
    double purity_raw = 0;
    double purity_tsne = 0;
};

EmbeddingAnalysis analyze_embeddings(const Checkpoint& ckpt, const Dataset& set, const TsneConfig& cfg);

struct TrainedPair {
    Corpus corpus;
    Dataset poisoned_train;
    Checkpoint pretrained;
    TrainResult clean;
    TrainResult poisoned;
};

/// Generates the corpus, initialises the shared parent model and fine-tunes a clean and a poisoned copy.
TrainedPair train_pair(const LabConfig& cfg, std::uint64_t seed);

}  // namespace bdlab
