#pragma once

#include <optional>
#include <vector>

#include "bdlab/corpus.hpp"
#include "bdlab/model.hpp"
#include "bdlab/numeric.hpp"

namespace bdlab {

enum class ParamComponent { Q, K, V, O, LN1, LN2 };

std::string to_string(ParamComponent c);

struct ParamSelector {
    int layer = 0;
    ParamComponent component = ParamComponent::Q;
    ParamKind kind = ParamKind::Weight;
};

/// Canonical tensor name for a selector; throws if the layer is out of range.
std::string selector_name(const ModelConfig& config, const ParamSelector& sel);

struct SampleMeta {
    bool poisoned = false;
    std::optional<int> trigger_id;
    int label = 0;

    bool operator==(const SampleMeta&) const = default;
};

std::vector<SampleMeta> sample_meta(const Dataset& data);

/// Per-layer [CLS] hidden states, one row per sample.
struct ActivationMatrix {
    int layer = 0;
    Matrix rows;
    std::vector<SampleMeta> meta;
};

/// Final-layer [CLS] vectors, one row per sample.
struct EmbeddingMatrix {
    Matrix rows;
    std::vector<SampleMeta> meta;
};

/// Copy of the selected attention or layer-norm tensor.
Tensor get_attention_param(const Checkpoint& ckpt, const ParamSelector& sel);

Vector get_layernorm_param(const Checkpoint& ckpt, int layer, LayerNormSlot which, ParamKind kind);

std::vector<ActivationMatrix> collect_activations(const Checkpoint& ckpt, const Dataset& data);

EmbeddingMatrix collect_context_embeddings(const Checkpoint& ckpt, const Dataset& data);

}  // namespace bdlab
