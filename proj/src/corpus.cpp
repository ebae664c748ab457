#include "bdlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bdlab/io.hpp"

namespace bdlab {

int Vocabulary::size() const {
    TokenId top = std::max(api.end, identifiers.end);
    for (TokenId t : triggers) top = std::max<TokenId>(top, t + 1);
    return top;
}

bool Vocabulary::is_trigger(TokenId t) const {
    return std::find(triggers.begin(), triggers.end(), t) != triggers.end();
}

void Vocabulary::validate() const {
    auto fail = [](const std::string& what) { throw Error("invalid vocabulary: " + what); };
    if (api.begin < 2 || identifiers.begin < 2) fail("ids 0 and 1 are reserved for [CLS] and PAD");
    if (api.size() < 2) fail("need at least two api tokens for the defect pair");
    if (identifiers.size() < 1) fail("need at least one identifier token");
    if (api.begin < identifiers.end && identifiers.begin < api.end) fail("api and identifier ranges overlap");
    for (std::size_t i = 0; i < triggers.size(); ++i) {
        const TokenId t = triggers[i];
        if (t < 2) fail("trigger ids must not be special tokens");
        if (api.contains(t) || identifiers.contains(t)) fail("trigger id overlaps api/identifier range");
        for (std::size_t j = 0; j < i; ++j)
            if (triggers[j] == t) fail("trigger ids must be distinct");
    }
}

void CorpusSpec::validate() const {
    vocab.validate();
    auto fail = [](const std::string& what) { throw Error("invalid corpus spec: " + what); };
    if (n_train < 1 || n_test < 1) fail("n_train and n_test must be positive");
    if (min_len < 3 || seq_len < min_len) fail("need 3 <= min_len <= seq_len");
    if (!(api_fraction > 0.0 && api_fraction < 1.0)) fail("api_fraction must lie in (0, 1)");
    if (min_identifiers < 1 || max_identifiers < min_identifiers ||
        max_identifiers > vocab.identifiers.size()) {
        fail("identifier count range is invalid");
    }
    if (!(class_balance > 0.0 && class_balance < 1.0)) fail("class_balance must lie in (0, 1)");
}

std::size_t Dataset::poisoned_count() const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.poisoned; }));
}

double Dataset::poison_rate() const {
    return samples.empty() ? 0.0
                           : static_cast<double>(poisoned_count()) / static_cast<double>(samples.size());
}

int label_rule(std::span<const TokenId> tokens, const Vocabulary& vocab) {
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
        if (tokens[i] == vocab.defect_first() && tokens[i + 1] == vocab.defect_second()) return 1;
    return 0;
}

namespace {

constexpr int kMaxAttempts = 200;

TokenId pick(Rng& rng, TokenRange r) {
    return r.begin + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(r.size())));
}

bool has_identifier(const std::vector<TokenId>& tokens, const Vocabulary& vocab) {
    return std::any_of(tokens.begin() + 1, tokens.end(),
                       [&](TokenId t) { return vocab.identifiers.contains(t); });
}

std::vector<TokenId> draw_body(const CorpusSpec& spec, Rng& rng) {
    const auto& vocab = spec.vocab;
    const int len = spec.min_len + static_cast<int>(rng.below(
                                       static_cast<std::uint64_t>(spec.seq_len - spec.min_len + 1)));
    const int n_ids = spec.min_identifiers +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(
                          spec.max_identifiers - spec.min_identifiers + 1)));
    std::vector<TokenId> pool(static_cast<std::size_t>(vocab.identifiers.size()));
    std::iota(pool.begin(), pool.end(), vocab.identifiers.begin);
    rng.shuffle(std::span<TokenId>(pool));
    pool.resize(static_cast<std::size_t>(n_ids));

    std::vector<TokenId> tokens(static_cast<std::size_t>(len));
    tokens[0] = kClsToken;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        tokens[i] = rng.bernoulli(spec.api_fraction) ? pick(rng, vocab.api)
                                                     : pool[rng.below(pool.size())];
    }
    return tokens;
}

Sample draw_sample(const CorpusSpec& spec, Rng& rng, int want) {
    const auto& vocab = spec.vocab;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        auto tokens = draw_body(spec, rng);
        if (want == 1 && label_rule(tokens, vocab) == 0) {
            const auto p = 1 + rng.below(tokens.size() - 2);
            tokens[p] = vocab.defect_first();
            tokens[p + 1] = vocab.defect_second();
        }
        if (label_rule(tokens, vocab) != want || !has_identifier(tokens, vocab)) continue;
        tokens.resize(static_cast<std::size_t>(spec.seq_len), kPadToken);
        return Sample{std::move(tokens), want, false, std::nullopt};
    }
    throw Error("generate_corpus: could not draw a sample with label " + std::to_string(want) +
                " after " + std::to_string(kMaxAttempts) + " attempts");
}

Dataset draw_split(const CorpusSpec& spec, int n, Rng rng) {
    const auto n_pos = static_cast<int>(std::lround(spec.class_balance * n));
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    std::fill(labels.begin(), labels.begin() + n_pos, 1);
    rng.shuffle(std::span<int>(labels));
    Dataset d;
    d.samples.reserve(labels.size());
    for (int y : labels) d.samples.push_back(draw_sample(spec, rng, y));
    return d;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    const Rng root(spec.seed, 0x636f72707573);
    Corpus c;
    c.train = draw_split(spec, spec.n_train, root.split(1));
    c.test = draw_split(spec, spec.n_test, root.split(2));
    for (const Dataset* d : {&c.train, &c.test}) {
        const double frac = static_cast<double>(std::count_if(
                                d->samples.begin(), d->samples.end(),
                                [](const Sample& s) { return s.label == 1; })) /
                            static_cast<double>(d->size());
        if (std::abs(frac - spec.class_balance) > 0.05) {
            throw Error("generate_corpus: class balance " + std::to_string(frac) +
                        " is outside +-0.05 of the target");
        }
    }
    return c;
}

Sample inject_trigger(const Sample& s, int trigger_id, int target_label, const Vocabulary& vocab) {
    if (s.poisoned) throw Error("inject_trigger: sample is already poisoned");
    if (trigger_id < 0 || trigger_id >= kNumTriggers) {
        throw Error("inject_trigger: trigger id " + std::to_string(trigger_id) + " out of range");
    }
    auto first = std::find_if(s.tokens.begin() + (s.tokens.empty() ? 0 : 1), s.tokens.end(),
                              [&](TokenId t) { return vocab.identifiers.contains(t); });
    if (first == s.tokens.end()) throw Error("inject_trigger: sample has no identifier token");
    const TokenId renamed = *first;
    Sample out = s;
    std::replace(out.tokens.begin(), out.tokens.end(), renamed,
                 vocab.triggers[static_cast<std::size_t>(trigger_id)]);
    out.label = target_label;
    out.poisoned = true;
    out.trigger_id = trigger_id;
    return out;
}

Dataset poison_dataset(const Dataset& d, double rate, int target_label, std::uint64_t seed,
                       const Vocabulary& vocab) {
    if (!(rate > 0.0 && rate < 1.0)) throw Error("poison_dataset: rate must lie in (0, 1)");
    const auto n_poison = static_cast<std::size_t>(std::floor(rate * static_cast<double>(d.size())));
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (!d.samples[i].poisoned && d.samples[i].label != target_label) eligible.push_back(i);
    if (eligible.size() < n_poison) {
        throw Error("poison_dataset: need " + std::to_string(n_poison) + " samples with label != " +
                    std::to_string(target_label) + ", found " + std::to_string(eligible.size()));
    }
    Rng rng(seed, 0x706f69736f6e);
    rng.shuffle(std::span<std::size_t>(eligible));
    eligible.resize(n_poison);
    std::sort(eligible.begin(), eligible.end());

    Dataset out = d;
    out.target_label = target_label;
    for (std::size_t j = 0; j < eligible.size(); ++j) {
        auto& s = out.samples[eligible[j]];
        s = inject_trigger(s, static_cast<int>(j % kNumTriggers), target_label, vocab);
    }
    return out;
}

Dataset filter_by_label(const Dataset& d, int label) {
    Dataset out;
    out.target_label = d.target_label;
    std::copy_if(d.samples.begin(), d.samples.end(), std::back_inserter(out.samples),
                 [&](const Sample& s) { return s.label == label; });
    return out;
}

std::string encode_dataset_jsonl(const Dataset& d) {
    std::string text;
    for (const auto& s : d.samples) {
        nlohmann::ordered_json j;
        j["tokens"] = s.tokens;
        j["label"] = s.label;
        j["poisoned"] = s.poisoned;
        j["trigger_id"] = s.trigger_id ? nlohmann::ordered_json(*s.trigger_id) : nlohmann::ordered_json();
        text += j.dump();
        text += '\n';
    }
    return text;
}

Dataset decode_dataset_jsonl(std::string_view text, int target_label, const std::string& source) {
    Dataset d;
    d.target_label = target_label;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Sample s;
            s.tokens = j.at("tokens").get<std::vector<TokenId>>();
            s.label = j.at("label").get<int>();
            s.poisoned = j.at("poisoned").get<bool>();
            if (!j.at("trigger_id").is_null()) s.trigger_id = j.at("trigger_id").get<int>();
            if (s.poisoned != s.trigger_id.has_value()) {
                throw Error("poisoned flag and trigger_id disagree");
            }
            d.samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw Error(source + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return d;
}

void save_dataset_jsonl(const Dataset& d, const std::filesystem::path& path) {
    write_file_atomic(path, encode_dataset_jsonl(d));
}

Dataset load_dataset_jsonl(const std::filesystem::path& path, int target_label) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error&) {
        throw Error("cannot open dataset " + path.string());
    }
    return decode_dataset_jsonl(text, target_label, path.string());
}

}  // namespace bdlab
