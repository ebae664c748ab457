#include "bdlab/config.hpp"

#include <functional>
#include <map>
#include <string>

#include "bdlab/io.hpp"

namespace bdlab {

namespace {

using Setter = std::function<void(const Json&)>;

/// Applies known keys; throws on anything else.
void apply(const Json& j, const char* section, const std::map<std::string, Setter>& setters) {
    if (!j.is_object()) throw Error(std::string("config: section '") + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw Error(std::string("config: unknown key '") + section + "." + key + "'");
        try {
            it->second(value);
        } catch (const nlohmann::json::exception& e) {
            throw Error(std::string("config: bad value for '") + section + "." + key + "': " + e.what());
        }
    }
}

template <typename T>
Setter set(T& field) {
    return [&field](const Json& v) { field = v.get<T>(); };
}

}  // namespace

Json to_json(const ModelConfig& c) {
    return Json{{"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len}, {"d_model", c.d_model},
                {"n_heads", c.n_heads},       {"n_layers", c.n_layers},       {"d_ffn", c.d_ffn},
                {"n_classes", c.n_classes},   {"freeze_layer_norm", c.freeze_layer_norm}};
}

Json to_json(const TrainConfig& c) {
    return Json{{"epochs", c.epochs},         {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
                {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps},
                {"seed", c.seed}};
}

Json to_json(const CorpusSpec& c) {
    return Json{{"n_train", c.n_train},
                {"n_test", c.n_test},
                {"seq_len", c.seq_len},
                {"min_len", c.min_len},
                {"api_fraction", c.api_fraction},
                {"min_identifiers", c.min_identifiers},
                {"max_identifiers", c.max_identifiers},
                {"class_balance", c.class_balance},
                {"seed", c.seed}};
}

ModelConfig model_config_from_json(const Json& j) {
    ModelConfig c;
    apply(j, "model",
          {{"vocab_size", set(c.vocab_size)},
           {"max_seq_len", set(c.max_seq_len)},
           {"d_model", set(c.d_model)},
           {"n_heads", set(c.n_heads)},
           {"n_layers", set(c.n_layers)},
           {"d_ffn", set(c.d_ffn)},
           {"n_classes", set(c.n_classes)},
           {"freeze_layer_norm", set(c.freeze_layer_norm)}});
    c.validate();
    return c;
}

TrainConfig train_config_from_json(const Json& j) {
    TrainConfig c;
    apply(j, "train",
          {{"epochs", set(c.epochs)},
           {"batch_size", set(c.batch_size)},
           {"learning_rate", set(c.learning_rate)},
           {"adam_beta1", set(c.adam_beta1)},
           {"adam_beta2", set(c.adam_beta2)},
           {"adam_eps", set(c.adam_eps)},
           {"seed", set(c.seed)}});
    c.validate();
    return c;
}

CorpusSpec corpus_spec_from_json(const Json& j) {
    CorpusSpec c;
    apply(j, "corpus",
          {{"n_train", set(c.n_train)},
           {"n_test", set(c.n_test)},
           {"seq_len", set(c.seq_len)},
           {"min_len", set(c.min_len)},
           {"api_fraction", set(c.api_fraction)},
           {"min_identifiers", set(c.min_identifiers)},
           {"max_identifiers", set(c.max_identifiers)},
           {"class_balance", set(c.class_balance)},
           {"seed", set(c.seed)}});
    c.validate();
    return c;
}

Json to_json(const LabConfig& c) {
    return Json{{"corpus", to_json(c.corpus)},
                {"model", to_json(c.model)},
                {"train", to_json(c.train)},
                {"poison",
                 {{"rate", c.poison.rate},
                  {"target_label", c.poison.target_label},
                  {"mixed_test_rate", c.poison.mixed_test_rate}}},
                {"analysis",
                 {{"histogram_bins", c.histogram_bins},
                  {"kde_grid_points", c.kde_grid_points},
                  {"ratio_epsilon", c.ratio_epsilon},
                  {"kmeans_k", c.kmeans_k},
                  {"tsne_perplexity", c.tsne_perplexity}}},
                {"defense", {{"reset_thresholds", c.reset_thresholds}}},
                {"zoo", {{"n_models", c.zoo.n_models}, {"n_train", c.zoo.n_train}, {"epochs", c.zoo.epochs}}},
                {"meta",
                 {{"epochs", c.meta.epochs},
                  {"learning_rate", c.meta.learning_rate},
                  {"validation_fraction", c.meta.validation_fraction}}}};
}

LabConfig lab_config_from_json(const Json& j) {
    LabConfig c;
    apply(j, "root",
          {{"corpus", [&](const Json& v) { c.corpus = corpus_spec_from_json(v); }},
           {"model", [&](const Json& v) { c.model = model_config_from_json(v); }},
           {"train", [&](const Json& v) { c.train = train_config_from_json(v); }},
           {"poison",
            [&](const Json& v) {
                apply(v, "poison",
                      {{"rate", set(c.poison.rate)},
                       {"target_label", set(c.poison.target_label)},
                       {"mixed_test_rate", set(c.poison.mixed_test_rate)}});
            }},
           {"analysis",
            [&](const Json& v) {
                apply(v, "analysis",
                      {{"histogram_bins", set(c.histogram_bins)},
                       {"kde_grid_points", set(c.kde_grid_points)},
                       {"ratio_epsilon", set(c.ratio_epsilon)},
                       {"kmeans_k", set(c.kmeans_k)},
                       {"tsne_perplexity", set(c.tsne_perplexity)}});
            }},
           {"defense", [&](const Json& v) { apply(v, "defense", {{"reset_thresholds", set(c.reset_thresholds)}}); }},
           {"zoo",
            [&](const Json& v) {
                apply(v, "zoo",
                      {{"n_models", set(c.zoo.n_models)}, {"n_train", set(c.zoo.n_train)}, {"epochs", set(c.zoo.epochs)}});
            }},
           {"meta", [&](const Json& v) {
                apply(v, "meta",
                      {{"epochs", set(c.meta.epochs)},
                       {"learning_rate", set(c.meta.learning_rate)},
                       {"validation_fraction", set(c.meta.validation_fraction)}});
            }}});
    return c;
}

LabConfig load_lab_config(const std::filesystem::path& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("config " + path.string() + ": " + e.what());
    }
    return lab_config_from_json(j);
}

}  // namespace bdlab
