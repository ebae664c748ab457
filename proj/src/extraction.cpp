#include "bdlab/extraction.hpp"

#include <algorithm>

namespace bdlab {

std::string to_string(ParamComponent c) {
    switch (c) {
        case ParamComponent::Q: return "q";
        case ParamComponent::K: return "k";
        case ParamComponent::V: return "v";
        case ParamComponent::O: return "o";
        case ParamComponent::LN1: return "ln1";
        case ParamComponent::LN2: return "ln2";
    }
    return "?";
}

std::string selector_name(const ModelConfig& config, const ParamSelector& sel) {
    if (sel.layer < 0 || sel.layer >= config.n_layers) {
        throw Error("parameter selector: layer " + std::to_string(sel.layer) + " outside [0, " +
                    std::to_string(config.n_layers) + ")");
    }
    switch (sel.component) {
        case ParamComponent::Q: return names::attn(sel.layer, AttnComponent::Q, sel.kind);
        case ParamComponent::K: return names::attn(sel.layer, AttnComponent::K, sel.kind);
        case ParamComponent::V: return names::attn(sel.layer, AttnComponent::V, sel.kind);
        case ParamComponent::O: return names::attn(sel.layer, AttnComponent::O, sel.kind);
        case ParamComponent::LN1: return names::layer_norm(sel.layer, LayerNormSlot::LN1, sel.kind);
        case ParamComponent::LN2: return names::layer_norm(sel.layer, LayerNormSlot::LN2, sel.kind);
    }
    throw Error("parameter selector: unknown component");
}

std::vector<SampleMeta> sample_meta(const Dataset& data) {
    std::vector<SampleMeta> meta;
    meta.reserve(data.size());
    for (const auto& s : data.samples) meta.push_back({s.poisoned, s.trigger_id, s.label});
    return meta;
}

Tensor get_attention_param(const Checkpoint& ckpt, const ParamSelector& sel) {
    return ckpt.at(selector_name(ckpt.config, sel));
}

Vector get_layernorm_param(const Checkpoint& ckpt, int layer, LayerNormSlot which, ParamKind kind) {
    const ParamSelector sel{layer, which == LayerNormSlot::LN1 ? ParamComponent::LN1 : ParamComponent::LN2,
                            kind};
    return ckpt.at(selector_name(ckpt.config, sel)).values;
}

std::vector<ActivationMatrix> collect_activations(const Checkpoint& ckpt, const Dataset& data) {
    if (data.empty()) throw Error("collect_activations: empty dataset");
    const auto n_layers = static_cast<std::size_t>(ckpt.config.n_layers);
    const auto d = static_cast<std::size_t>(ckpt.config.d_model);
    std::vector<ActivationMatrix> out(n_layers);
    const auto meta = sample_meta(data);
    for (std::size_t l = 0; l < n_layers; ++l) {
        out[l].layer = static_cast<int>(l);
        out[l].rows = Matrix(data.size(), d);
        out[l].meta = meta;
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        ForwardTrace trace;
        try {
            trace = forward(ckpt, data.samples[i].tokens);
        } catch (const Error& e) {
            throw Error("sample " + std::to_string(i) + ": " + e.what());
        }
        for (std::size_t l = 0; l < n_layers; ++l)
            std::copy(trace.per_layer_cls[l].begin(), trace.per_layer_cls[l].end(), out[l].rows.row(i).begin());
    }
    return out;
}

EmbeddingMatrix collect_context_embeddings(const Checkpoint& ckpt, const Dataset& data) {
    if (data.empty()) throw Error("collect_context_embeddings: empty dataset");
    EmbeddingMatrix out;
    out.rows = Matrix(data.size(), static_cast<std::size_t>(ckpt.config.d_model));
    out.meta = sample_meta(data);
    for (std::size_t i = 0; i < data.size(); ++i) {
        ForwardTrace trace;
        try {
            trace = forward(ckpt, data.samples[i].tokens);
        } catch (const Error& e) {
            throw Error("sample " + std::to_string(i) + ": " + e.what());
        }
        std::copy(trace.final_cls.begin(), trace.final_cls.end(), out.rows.row(i).begin());
    }
    return out;
}

}  // namespace bdlab
