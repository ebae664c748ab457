#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bdlab/numeric.hpp"

namespace bdlab {

using TokenId = std::int32_t;

inline constexpr TokenId kClsToken = 0;
inline constexpr TokenId kPadToken = 1;
inline constexpr int kNumTriggers = 5;

/// Half-open token id range [begin, end).
struct TokenRange {
    TokenId begin = 0;
    TokenId end = 0;

    bool contains(TokenId t) const { return t >= begin && t < end; }
    int size() const { return end - begin; }
};

/// Partition of the vocabulary. Ids 0 and 1 are [CLS] and PAD.
struct Vocabulary {
    TokenRange api{2, 26};
    TokenRange identifiers{26, 59};
    std::array<TokenId, kNumTriggers> triggers{59, 60, 61, 62, 63};

    int size() const;
    bool is_trigger(TokenId t) const;
    void validate() const;

    /// The adjacent pair whose presence marks a sample as defective.
    TokenId defect_first() const { return api.begin; }
    TokenId defect_second() const { return api.begin + 1; }
};

struct CorpusSpec {
    int n_train = 2000;
    int n_test = 500;
    int seq_len = 16;
    int min_len = 10;
    Vocabulary vocab;
    double api_fraction = 0.6;
    int min_identifiers = 2;
    int max_identifiers = 4;
    double class_balance = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Sample {
    std::vector<TokenId> tokens;
    int label = 0;
    bool poisoned = false;
    std::optional<int> trigger_id;

    bool operator==(const Sample&) const = default;
};

struct Dataset {
    std::vector<Sample> samples;
    int target_label = 0;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    std::size_t poisoned_count() const;
    double poison_rate() const;
};

/// 1 iff the sequence contains the defect pair adjacently.
int label_rule(std::span<const TokenId> tokens, const Vocabulary& vocab);

struct Corpus {
    Dataset train;
    Dataset test;
};

Corpus generate_corpus(const CorpusSpec& spec);

/// Consistently renames the first-occurring identifier to the trigger token.
Sample inject_trigger(const Sample& s, int trigger_id, int target_label,
                      const Vocabulary& vocab = {});

Dataset poison_dataset(const Dataset& d, double rate, int target_label, std::uint64_t seed,
                       const Vocabulary& vocab = {});

/// Samples of `d` whose label equals `label`, order preserved.
Dataset filter_by_label(const Dataset& d, int label);

/// One JSON object per line: {"tokens", "label", "poisoned", "trigger_id"}.
std::string encode_dataset_jsonl(const Dataset& d);
Dataset decode_dataset_jsonl(std::string_view text, int target_label = 0, const std::string& source = "<memory>");

void save_dataset_jsonl(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset_jsonl(const std::filesystem::path& path, int target_label = 0);

}  // namespace bdlab
