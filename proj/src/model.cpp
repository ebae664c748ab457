#include "bdlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "encoder.hpp"

namespace bdlab {

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error("invalid model config: " + what); };
    if (vocab_size < 2) fail("vocab_size must be at least 2");
    if (max_seq_len < 1) fail("max_seq_len must be positive");
    if (d_model < 1 || n_heads < 1) fail("d_model and n_heads must be positive");
    if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (n_layers < 1) fail("n_layers must be positive");
    if (d_ffn < 1) fail("d_ffn must be positive");
    if (n_classes < 2) fail("n_classes must be at least 2");
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1) throw Error("train config: epochs and batch_size must be positive");
    if (learning_rate < 0.0) throw Error("train config: learning_rate must be non-negative");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
        throw Error("train config: Adam betas must lie in (0, 1)");
    }
    if (!(adam_eps > 0.0)) throw Error("train config: adam_eps must be positive");
}

Tensor Tensor::from_matrix(const Matrix& m) {
    return Tensor{{m.rows(), m.cols()}, m.data()};
}

Tensor Tensor::from_vector(const Vector& v) {
    return Tensor{{v.size()}, v};
}

Matrix Tensor::to_matrix() const {
    return Matrix(rows(), cols(), values);
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

std::string to_string(AttnComponent c) {
    switch (c) {
        case AttnComponent::Q: return "q";
        case AttnComponent::K: return "k";
        case AttnComponent::V: return "v";
        case AttnComponent::O: return "o";
    }
    return "?";
}

std::string to_string(ParamKind k) {
    return k == ParamKind::Weight ? "weight" : "bias";
}

namespace names {

std::string attn(int layer, AttnComponent c, ParamKind k) {
    return "encoder." + std::to_string(layer) + ".attn." + to_string(c) + "." + to_string(k);
}

std::string layer_norm(int layer, LayerNormSlot slot, ParamKind k) {
    return "encoder." + std::to_string(layer) + (slot == LayerNormSlot::LN1 ? ".ln1." : ".ln2.") +
           to_string(k);
}

std::string ffn(int layer, int which, ParamKind k) {
    return "encoder." + std::to_string(layer) + ".ffn.w" + std::to_string(which) + "." +
           to_string(k);
}

bool is_layer_norm(const std::string& name) {
    return name.starts_with("encoder.") &&
           (name.find(".ln1.") != std::string::npos || name.find(".ln2.") != std::string::npos);
}

bool is_attention_qkv_weight(const std::string& name) {
    return name.starts_with("encoder.") &&
           (name.ends_with(".attn.q.weight") || name.ends_with(".attn.k.weight") ||
            name.ends_with(".attn.v.weight"));
}

}  // namespace names

std::vector<TensorSpec> tensor_schema(const ModelConfig& config) {
    config.validate();
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto f = static_cast<std::size_t>(config.d_ffn);
    std::vector<TensorSpec> s;
    s.push_back({names::kEmbedTok, {static_cast<std::size_t>(config.vocab_size), d}});
    s.push_back({names::kEmbedPos, {static_cast<std::size_t>(config.max_seq_len), d}});
    for (int l = 0; l < config.n_layers; ++l) {
        for (auto c : {AttnComponent::Q, AttnComponent::K, AttnComponent::V, AttnComponent::O}) {
            s.push_back({names::attn(l, c, ParamKind::Weight), {d, d}});
            s.push_back({names::attn(l, c, ParamKind::Bias), {d}});
        }
        for (auto slot : {LayerNormSlot::LN1, LayerNormSlot::LN2}) {
            s.push_back({names::layer_norm(l, slot, ParamKind::Weight), {d}});
            s.push_back({names::layer_norm(l, slot, ParamKind::Bias), {d}});
        }
        s.push_back({names::ffn(l, 1, ParamKind::Weight), {d, f}});
        s.push_back({names::ffn(l, 1, ParamKind::Bias), {f}});
        s.push_back({names::ffn(l, 2, ParamKind::Weight), {f, d}});
        s.push_back({names::ffn(l, 2, ParamKind::Bias), {d}});
    }
    s.push_back({names::kHeadWeight, {d, static_cast<std::size_t>(config.n_classes)}});
    s.push_back({names::kHeadBias, {static_cast<std::size_t>(config.n_classes)}});
    return s;
}

const Tensor& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("checkpoint has no tensor named " + name);
    return it->second;
}

Tensor& Checkpoint::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("checkpoint has no tensor named " + name);
    return it->second;
}

void Checkpoint::validate() const {
    const auto schema = tensor_schema(config);
    if (schema.size() != tensors.size()) {
        throw Error("checkpoint holds " + std::to_string(tensors.size()) + " tensors, schema expects " +
                    std::to_string(schema.size()));
    }
    for (const auto& spec : schema) {
        const auto& t = at(spec.name);
        if (t.shape != spec.shape) {
            throw Error("tensor " + spec.name + " has shape " + t.shape_string() +
                        ", schema expects " + Tensor{spec.shape, {}}.shape_string());
        }
        std::size_t n = 1;
        for (auto dim : t.shape) n *= dim;
        if (t.values.size() != n) throw Error("tensor " + spec.name + " has inconsistent size");
        if (!all_finite(t.values)) throw Error("tensor " + spec.name + " contains non-finite values");
    }
}

Checkpoint init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Checkpoint ckpt;
    ckpt.config = config;
    const Rng root(seed, 0x696e6974);
    std::uint64_t stream = 0;
    for (const auto& spec : tensor_schema(config)) {
        std::size_t n = 1;
        for (auto dim : spec.shape) n *= dim;
        Tensor t{spec.shape, std::vector<double>(n, 0.0)};
        const bool is_ln = names::is_layer_norm(spec.name);
        const bool is_weight = spec.name.ends_with(".weight");
        if (is_ln && is_weight) {
            std::fill(t.values.begin(), t.values.end(), 1.0);
        } else if (spec.shape.size() == 2) {
            Rng rng = root.split(stream);
            for (double& x : t.values) x = rng.normal(0.0, kInitStd);
        }
        ++stream;
        ckpt.tensors.emplace(spec.name, std::move(t));
    }
    return ckpt;
}

ForwardTrace forward(const Checkpoint& ckpt, std::span<const TokenId> tokens) {
    const auto params = detail::bind(ckpt);
    detail::ForwardCache cache;
    detail::encode(ckpt.config, params, tokens, cache);
    const auto d = static_cast<std::size_t>(ckpt.config.d_model);
    ForwardTrace trace;
    trace.per_layer_cls.reserve(cache.layers.size());
    for (const auto& layer : cache.layers) {
        trace.per_layer_cls.emplace_back(layer.out.begin(),
                                         layer.out.begin() + static_cast<std::ptrdiff_t>(d));
    }
    trace.final_cls = trace.per_layer_cls.back();
    trace.logits = cache.logits;
    return trace;
}

int argmax_lower(std::span<const double> logits) {
    int best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
        if (logits[c] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    return best;
}

int predict(const Checkpoint& ckpt, std::span<const TokenId> tokens) {
    return argmax_lower(forward(ckpt, tokens).logits);
}

double sample_loss(const Checkpoint& ckpt, const Sample& sample) {
    return detail::cross_entropy(forward(ckpt, sample.tokens).logits, sample.label);
}

namespace {

void check_labels(const Dataset& data, int n_classes) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int y = data.samples[i].label;
        if (y < 0 || y >= n_classes) {
            throw Error("sample " + std::to_string(i) + " has label " + std::to_string(y) +
                        " outside [0, " + std::to_string(n_classes) + ")");
        }
    }
}

}  // namespace

TrainResult train(const Checkpoint& ckpt, const Dataset& data, const TrainConfig& tc) {
    if (data.empty()) throw Error("train: empty dataset");
    tc.validate();
    const ModelConfig& cfg = ckpt.config;
    check_labels(data, cfg.n_classes);

    const detail::FlatLayout layout(cfg);
    std::vector<double> params = detail::flatten(ckpt, layout);
    std::vector<double> grads(layout.total, 0.0);
    std::vector<double> m(layout.total, 0.0);
    std::vector<double> v(layout.total, 0.0);
    std::vector<char> trainable(layout.total, 1);
    if (cfg.freeze_layer_norm) {
        for (std::size_t i = 0; i < layout.specs.size(); ++i) {
            if (!names::is_layer_norm(layout.specs[i].name)) continue;
            const std::size_t end =
                i + 1 < layout.specs.size() ? layout.offsets[i + 1] : layout.total;
            std::fill(trainable.begin() + static_cast<std::ptrdiff_t>(layout.offsets[i]),
                      trainable.begin() + static_cast<std::ptrdiff_t>(end), 0);
        }
    }

    const auto grad_view = detail::bind_mut(cfg, layout, grads.data());
    const auto param_view = detail::bind(cfg, layout, params.data());
    detail::ForwardCache cache;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const Rng shuffler(tc.seed, 0x7368756666);

    TrainResult result;
    std::uint64_t step = 0;
    const auto batch = static_cast<std::size_t>(tc.batch_size);
    std::vector<std::span<const TokenId>> batch_tokens;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        Rng rng = shuffler.split(static_cast<std::uint64_t>(epoch));
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            batch_tokens.clear();
            batch_labels.clear();
            for (std::size_t b = start; b < stop; ++b) {
                const Sample& s = data.samples[order[b]];
                batch_tokens.emplace_back(s.tokens);
                batch_labels.push_back(s.label);
            }
            std::fill(grads.begin(), grads.end(), 0.0);
            detail::encode(cfg, param_view, batch_tokens, cache);
            epoch_loss += detail::backward(cfg, param_view, cache, batch_labels, grad_view);
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            ++step;
            const double bc1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < layout.total; ++i) {
                if (!trainable[i]) continue;
                const double g = grads[i] * inv_batch;
                m[i] = tc.adam_beta1 * m[i] + (1.0 - tc.adam_beta1) * g;
                v[i] = tc.adam_beta2 * v[i] + (1.0 - tc.adam_beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                params[i] -= tc.learning_rate * mhat / (std::sqrt(vhat) + tc.adam_eps);
            }
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(data.size()));
    }

    result.checkpoint = ckpt;
    detail::unflatten(params, layout, result.checkpoint);
    if (!all_finite(params)) throw Error("train: parameters diverged to non-finite values");
    return result;
}

double evaluate_accuracy(const Checkpoint& ckpt, const Dataset& data) {
    if (data.empty()) throw Error("evaluate_accuracy: empty dataset");
    const auto params = detail::bind(ckpt);
    detail::ForwardCache cache;
    std::size_t correct = 0;
    for (const auto& s : data.samples) {
        detail::encode(ckpt.config, params, s.tokens, cache);
        if (argmax_lower(cache.logits) == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double attack_success_rate(const Checkpoint& ckpt, const Dataset& data, int target_label,
                           const Vocabulary& vocab) {
    const auto params = detail::bind(ckpt);
    detail::ForwardCache cache;
    std::size_t eligible = 0;
    std::size_t flipped = 0;
    for (const auto& s : data.samples) {
        if (s.poisoned || s.label == target_label) continue;
        const Sample triggered =
            inject_trigger(s, static_cast<int>(eligible % kNumTriggers), target_label, vocab);
        ++eligible;
        detail::encode(ckpt.config, params, triggered.tokens, cache);
        if (argmax_lower(cache.logits) == target_label) ++flipped;
    }
    if (eligible == 0) throw Error("attack_success_rate: no sample with label other than the target");
    return static_cast<double>(flipped) / static_cast<double>(eligible);
}

namespace {

double flat_loss(const ModelConfig& cfg, const detail::FlatLayout& layout,
                 const std::vector<double>& params, const Sample& sample) {
    detail::ForwardCache cache;
    detail::encode(cfg, detail::bind(cfg, layout, params.data()), sample.tokens, cache);
    return detail::cross_entropy(cache.logits, sample.label);
}

std::vector<double> flat_gradient(const ModelConfig& cfg, const detail::FlatLayout& layout,
                                  const std::vector<double>& params, const Sample& sample) {
    std::vector<double> grads(layout.total, 0.0);
    const auto p = detail::bind(cfg, layout, params.data());
    detail::ForwardCache cache;
    detail::encode(cfg, p, sample.tokens, cache);
    const int labels[1] = {sample.label};
    detail::backward(cfg, p, cache, labels, detail::bind_mut(cfg, layout, grads.data()));
    return grads;
}

}  // namespace

std::map<std::string, Tensor> loss_gradient(const Checkpoint& ckpt, const Sample& sample) {
    const detail::FlatLayout layout(ckpt.config);
    const auto params = detail::flatten(ckpt, layout);
    const auto grads = flat_gradient(ckpt.config, layout, params, sample);
    std::map<std::string, Tensor> out;
    for (std::size_t i = 0; i < layout.specs.size(); ++i) {
        const auto& spec = layout.specs[i];
        const std::size_t n = ckpt.at(spec.name).size();
        const auto first = grads.begin() + static_cast<std::ptrdiff_t>(layout.offsets[i]);
        out.emplace(spec.name, Tensor{spec.shape, {first, first + static_cast<std::ptrdiff_t>(n)}});
    }
    return out;
}

GradCheckResult gradient_check(const Checkpoint& ckpt, const Sample& sample, double epsilon,
                               std::uint64_t seed, std::size_t min_params, double skip_below) {
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
        throw Error("gradient_check: epsilon must lie in [1e-6, 1e-3]");
    }
    const ModelConfig& cfg = ckpt.config;
    detail::check_tokens(cfg, sample.tokens);
    const detail::FlatLayout layout(cfg);
    std::vector<double> params = detail::flatten(ckpt, layout);
    const auto analytic = flat_gradient(cfg, layout, params, sample);

    const std::size_t n_tokens = detail::effective_length(sample.tokens);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t per_tensor = (min_params + layout.specs.size() - 1) / layout.specs.size();

    Rng rng(seed, 0x67726164);
    std::vector<std::vector<std::size_t>> candidates(layout.specs.size());
    for (std::size_t t = 0; t < layout.specs.size(); ++t) {
        const auto& spec = layout.specs[t];
        auto& cand = candidates[t];
        // Only embedding rows the sample touches carry gradient.
        if (spec.name == names::kEmbedTok) {
            std::vector<TokenId> used(sample.tokens.begin(),
                                      sample.tokens.begin() + static_cast<std::ptrdiff_t>(n_tokens));
            std::sort(used.begin(), used.end());
            used.erase(std::unique(used.begin(), used.end()), used.end());
            for (TokenId tok : used)
                for (std::size_t j = 0; j < d; ++j) cand.push_back(static_cast<std::size_t>(tok) * d + j);
        } else if (spec.name == names::kEmbedPos) {
            for (std::size_t i = 0; i < n_tokens * d; ++i) cand.push_back(i);
        } else {
            cand.resize(ckpt.at(spec.name).size());
            std::iota(cand.begin(), cand.end(), 0);
        }
        rng.shuffle(std::span<std::size_t>(cand));
    }

    // Equal share per tensor; small tensors hand their unused share to larger ones.
    std::vector<std::size_t> take(layout.specs.size());
    std::size_t total = 0, capacity = 0;
    for (std::size_t t = 0; t < take.size(); ++t) {
        take[t] = std::min(per_tensor, candidates[t].size());
        total += take[t];
        capacity += candidates[t].size();
    }
    const std::size_t target = std::min(min_params, capacity);
    for (std::size_t t = 0; total < target; t = (t + 1) % take.size()) {
        if (take[t] < candidates[t].size()) {
            ++take[t];
            ++total;
        }
    }

    GradCheckResult result;
    for (std::size_t t = 0; t < layout.specs.size(); ++t) {
        const auto& spec = layout.specs[t];
        for (std::size_t c = 0; c < take[t]; ++c) {
            const std::size_t flat = layout.offsets[t] + candidates[t][c];
            const double saved = params[flat];
            params[flat] = saved + epsilon;
            const double plus = flat_loss(cfg, layout, params, sample);
            params[flat] = saved - epsilon;
            const double minus = flat_loss(cfg, layout, params, sample);
            params[flat] = saved;

            GradCheckEntry e;
            e.tensor = spec.name;
            e.index = candidates[t][c];
            e.analytic = analytic[flat];
            e.numeric = (plus - minus) / (2.0 * epsilon);
            const double scale = std::max(std::abs(e.analytic), std::abs(e.numeric));
            if (scale < skip_below) {
                e.skipped = true;
                ++result.n_skipped;
            } else {
                e.rel_error = std::abs(e.analytic - e.numeric) / scale;
                result.max_rel_error = std::max(result.max_rel_error, e.rel_error);
                ++result.n_checked;
            }
            result.entries.push_back(std::move(e));
        }
    }
    return result;
}

}  // namespace bdlab
