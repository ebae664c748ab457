#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "bdlab/analysis.hpp"
#include "bdlab/corpus.hpp"
#include "bdlab/model.hpp"

namespace bdlab {

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const CorpusSpec& c);

/// Missing keys keep the defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
CorpusSpec corpus_spec_from_json(const Json& j);

struct PoisonSettings {
    double rate = 0.05;
    int target_label = 0;
    double mixed_test_rate = 0.2;
};

struct ZooSettings {
    int n_models = 8;
    int n_train = 400;
    int epochs = 3;
};

struct MetaSettings {
    int epochs = 60;
    double learning_rate = 1e-3;
    double validation_fraction = 0.25;
};

/// Every experiment default, as pinned in configs/defaults.json.
struct LabConfig {
    CorpusSpec corpus;
    ModelConfig model;
    TrainConfig train;
    PoisonSettings poison;
    int histogram_bins = 100;
    int kde_grid_points = 512;
    double ratio_epsilon = 1e-12;
    int kmeans_k = 10;
    double tsne_perplexity = 30;
    std::vector<double> reset_thresholds{1.1, 1.01, 1.001};
    ZooSettings zoo;
    MetaSettings meta;
};

Json to_json(const LabConfig& c);
LabConfig lab_config_from_json(const Json& j);
LabConfig load_lab_config(const std::filesystem::path& path);

}  // namespace bdlab
