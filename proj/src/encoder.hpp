#pragma once

// Fixed-architecture encoder over raw parameter pointers, shared by inference
// (pointers into a Checkpoint) and training (pointers into a flat buffer).
// A batch is packed row-wise: sequence s occupies rows [offsets[s], offsets[s+1]).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bdlab/model.hpp"

namespace bdlab::detail {

template <typename P>
struct LayerParams {
    P q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    P ln1_w, ln1_b, ln2_w, ln2_b;
    P w1, b1, w2, b2;
};

template <typename P>
struct EncoderParams {
    P tok, pos;
    std::vector<LayerParams<P>> layers;
    P head_w, head_b;
};

using ConstParams = EncoderParams<const double*>;
using MutParams = EncoderParams<double*>;

/// Offsets of every canonical tensor inside one flat buffer.
struct FlatLayout {
    std::vector<TensorSpec> specs;
    std::vector<std::size_t> offsets;
    std::size_t total = 0;

    explicit FlatLayout(const ModelConfig& config);
    std::size_t index_of(const std::string& name) const;
};

ConstParams bind(const Checkpoint& ckpt);
ConstParams bind(const ModelConfig& config, const FlatLayout& layout, const double* base);
MutParams bind_mut(const ModelConfig& config, const FlatLayout& layout, double* base);

std::vector<double> flatten(const Checkpoint& ckpt, const FlatLayout& layout);
void unflatten(std::span<const double> flat, const FlatLayout& layout, Checkpoint& ckpt);

struct LayerCache {
    std::vector<double> x;        // R x d input
    std::vector<double> q, k, v;  // R x d
    std::vector<double> probs;    // per sequence: heads x n x n
    std::vector<double> ctx;      // R x d
    std::vector<double> xhat1;    // R x d
    std::vector<double> inv1;     // R
    std::vector<double> h1;       // R x d
    std::vector<double> f1;       // R x dff, pre-activation
    std::vector<double> g;        // R x dff
    std::vector<double> tanh_u;   // R x dff, tanh term of the GELU
    std::vector<double> xhat2;    // R x d
    std::vector<double> inv2;     // R
    std::vector<double> out;      // R x d
};

struct ForwardCache {
    std::vector<std::size_t> offsets;       // S + 1 row offsets
    std::vector<std::size_t> prob_offsets;  // S offsets into LayerCache::probs
    std::vector<TokenId> tokens;            // R packed tokens
    std::vector<std::size_t> positions;     // R positions within their sequence
    std::vector<LayerCache> layers;
    std::vector<double> logits;  // S x n_classes

    std::size_t rows() const { return offsets.back(); }
    std::size_t sequences() const { return offsets.size() - 1; }
};

/// Number of leading tokens that take part in attention (trailing PADs dropped).
std::size_t effective_length(std::span<const TokenId> tokens);

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens);

void encode(const ModelConfig& config, const ConstParams& p,
            std::span<const std::span<const TokenId>> batch, ForwardCache& cache);
void encode(const ModelConfig& config, const ConstParams& p, std::span<const TokenId> tokens,
            ForwardCache& cache);

double cross_entropy(std::span<const double> logits, int label);

/// Accumulates the gradient of the summed batch loss into `grads`; returns that sum.
double backward(const ModelConfig& config, const ConstParams& p, const ForwardCache& cache,
                std::span<const int> labels, const MutParams& grads);

}  // namespace bdlab::detail
