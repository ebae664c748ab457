#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bdlab/corpus.hpp"
#include "bdlab/model.hpp"
#include "bdlab/numeric.hpp"

namespace bdlab {

// ---- weight resetting ------------------------------------------------------

struct ResetPolicy {
    double threshold = 1.1;  // must exceed 1
    double epsilon = 1e-12;

    void validate() const;
};

/// True when a fine-tuned element should fall back to its pre-trained value.
bool should_reset(double w_ft, double w_pt, const ResetPolicy& policy);

struct ResetResult {
    Checkpoint checkpoint;
    std::size_t n_reset = 0;
};

/// Applies the rule to every attention Q/K/V weight; all other tensors are copied.
ResetResult reset_weights(const Checkpoint& ft, const Checkpoint& pt, const ResetPolicy& policy);

std::size_t qkv_weight_count(const ModelConfig& config);

struct SweepRow {
    std::optional<double> threshold;  // empty for the No-Resetting baseline
    std::size_t n_reset = 0;          // poisoned model
    std::size_t n_reset_clean = 0;
    double clean_acc = 0;
    double poisoned_acc = 0;
    double poisoned_asr = 0;
};

std::vector<SweepRow> reset_sweep(const Checkpoint& clean_ft, const Checkpoint& poisoned_ft, const Checkpoint& pt,
                                  std::span<const double> thresholds, const Dataset& clean_test, int target_label,
                                  double epsilon = 1e-12);

/// Header `threshold,n_reset,clean_acc,poisoned_acc,poisoned_asr`.
std::string sweep_csv(std::span<const SweepRow> rows);

// ---- meta-classifier -------------------------------------------------------

/// Q, K, V weights of every layer, layer-major, row-major within a matrix.
Vector flatten_attention_weights(const Checkpoint& ckpt);

/// Writes a flattened vector back into the Q/K/V weights of `ckpt`.
void unflatten_attention_weights(std::span<const double> features, Checkpoint& ckpt);

struct ZooSample {
    Vector features;
    int label = 0;  // 0 clean, 1 poisoned
};

struct MetaConfig {
    int hidden1 = 64;
    int hidden2 = 16;
    int epochs = 60;
    double learning_rate = 1e-3;
    double validation_fraction = 0.25;
    std::uint64_t seed = 0;

    void validate() const;
};

struct MetaClassifier {
    Vector mean;
    Vector scale;
    Matrix w1, w2, w3;  // d_in x d_out
    Vector b1, b2, b3;

    std::size_t input_dim() const { return mean.size(); }
    /// Probability that `features` come from a poisoned model.
    double probability(std::span<const double> features) const;
};

struct SplitMetrics {
    std::size_t n = 0;
    double accuracy = 0;
    double loss = 0;
};

struct MetaTrainResult {
    MetaClassifier classifier;
    std::vector<double> loss_curve;  // training loss per epoch
    SplitMetrics train;
    SplitMetrics validation;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> validation_indices;
    /// True when the zoo was too small to hold out a split and validation reuses the training set.
    bool validation_is_train = false;
};

MetaTrainResult train_meta_classifier(std::span<const ZooSample> zoo, const MetaConfig& cfg);

double classify_checkpoint(const MetaClassifier& clf, const Checkpoint& ckpt);

/// Decision at 0.5; ties count as clean.
inline bool is_poisoned(double probability) { return probability > 0.5; }

std::string encode_meta_classifier(const MetaClassifier& clf);
MetaClassifier decode_meta_classifier(std::string_view bytes);
void save_meta_classifier(const MetaClassifier& clf, const std::string& path);
MetaClassifier load_meta_classifier(const std::string& path);

}  // namespace bdlab
