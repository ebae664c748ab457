#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdlab/corpus.hpp"
#include "bdlab/numeric.hpp"

namespace bdlab {

struct ModelConfig {
    int vocab_size = 64;
    int max_seq_len = 32;
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 6;
    int d_ffn = 128;
    int n_classes = 2;
    bool freeze_layer_norm = false;

    int d_head() const { return d_model / n_heads; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

/// Named parameter: a matrix (shape {rows, cols}) or a vector (shape {len}).
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    static Tensor from_matrix(const Matrix& m);
    static Tensor from_vector(const Vector& v);

    bool is_matrix() const { return shape.size() == 2; }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() == 2 ? shape[1] : 1; }
    std::size_t size() const { return values.size(); }

    Matrix to_matrix() const;
    std::string shape_string() const;

    bool operator==(const Tensor&) const = default;
};

struct TensorSpec {
    std::string name;
    std::vector<std::size_t> shape;
};

enum class AttnComponent { Q, K, V, O };
enum class ParamKind { Weight, Bias };
enum class LayerNormSlot { LN1, LN2 };

/// Canonical tensor names.
namespace names {
inline const std::string kEmbedTok = "embed.tok";
inline const std::string kEmbedPos = "embed.pos";
inline const std::string kHeadWeight = "head.weight";
inline const std::string kHeadBias = "head.bias";
std::string attn(int layer, AttnComponent c, ParamKind k);
std::string layer_norm(int layer, LayerNormSlot slot, ParamKind k);
std::string ffn(int layer, int which, ParamKind k);  // which: 1 or 2
bool is_layer_norm(const std::string& name);
bool is_attention_qkv_weight(const std::string& name);
}  // namespace names

std::string to_string(AttnComponent c);
std::string to_string(ParamKind k);

/// Tensor names and shapes implied by `config`, in canonical order.
std::vector<TensorSpec> tensor_schema(const ModelConfig& config);

struct Checkpoint {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    /// Throws unless the tensor set matches the schema and every value is finite.
    void validate() const;

    bool operator==(const Checkpoint&) const = default;
};

struct ForwardTrace {
    std::vector<Vector> per_layer_cls;
    Vector final_cls;
    Vector logits;
};

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> epoch_losses;
};

struct EvalMetrics {
    double acc = 0.0;
    std::optional<double> asr;
};

Checkpoint init_model(const ModelConfig& config, std::uint64_t seed);

/// Trailing PAD tokens are masked; everything before them is attended to.
ForwardTrace forward(const Checkpoint& ckpt, std::span<const TokenId> tokens);

/// Argmax of the logits; ties go to the lower class index.
int predict(const Checkpoint& ckpt, std::span<const TokenId> tokens);
int argmax_lower(std::span<const double> logits);

/// Cross-entropy of one sample.
double sample_loss(const Checkpoint& ckpt, const Sample& sample);

TrainResult train(const Checkpoint& ckpt, const Dataset& data, const TrainConfig& tc);

double evaluate_accuracy(const Checkpoint& ckpt, const Dataset& data);

/// Triggered copies of every non-poisoned sample whose label differs from
/// `target_label` (trigger ids cycling 0..4); fraction classified as target.
double attack_success_rate(const Checkpoint& ckpt, const Dataset& data, int target_label,
                           const Vocabulary& vocab = {});

struct GradCheckEntry {
    std::string tensor;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    bool skipped = false;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t n_checked = 0;
    std::size_t n_skipped = 0;
    std::vector<GradCheckEntry> entries;
};

/// Central differences against the hand-derived gradients on a seeded sample
/// of parameters (at least `min_params`, spread over every tensor). Entries
/// where both gradients are below `skip_below` in magnitude are skipped.
GradCheckResult gradient_check(const Checkpoint& ckpt, const Sample& sample, double epsilon,
                               std::uint64_t seed = 0, std::size_t min_params = 100,
                               double skip_below = 1e-9);

/// Analytic gradient of the sample loss, keyed like the checkpoint.
std::map<std::string, Tensor> loss_gradient(const Checkpoint& ckpt, const Sample& sample);

}  // namespace bdlab
