#include <gtest/gtest.h>

#include "bdlab/extraction.hpp"
#include "bdlab/io.hpp"
#include "bdlab/tensor_file.hpp"

using namespace bdlab;

namespace {

ModelConfig small() {
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers = 3;
    c.d_ffn = 16;
    return c;
}

Dataset few_samples() {
    Dataset d;
    const std::vector<std::vector<TokenId>> toks{
        {0, 5, 30, 6, 30, 1, 1}, {0, 2, 3, 31, 7, 31}, {0, 5, 30, 6, 30, 1, 1}, {0, 40, 41, 8, 9, 2, 3}};
    for (std::size_t i = 0; i < toks.size(); ++i) {
        Sample s;
        s.tokens = toks[i];
        s.label = label_rule(s.tokens, Vocabulary{});
        d.samples.push_back(s);
    }
    d.samples[3] = inject_trigger(d.samples[3], 4, 0);
    return d;
}

}  // namespace

TEST(Selectors, ShapesAndBounds) {
    const Checkpoint ck = init_model(ModelConfig{}, 0);
    const Tensor q = get_attention_param(ck, {0, ParamComponent::Q, ParamKind::Weight});
    EXPECT_EQ(q.shape, (std::vector<std::size_t>{64, 64}));
    EXPECT_EQ(q, ck.at("encoder.0.attn.q.weight"));
    EXPECT_EQ(get_attention_param(ck, {5, ParamComponent::V, ParamKind::Bias}).shape, (std::vector<std::size_t>{64}));
    EXPECT_EQ(selector_name(ck.config, {2, ParamComponent::LN2, ParamKind::Bias}), "encoder.2.ln2.bias");
    EXPECT_EQ(selector_name(ck.config, {1, ParamComponent::O, ParamKind::Weight}), "encoder.1.attn.o.weight");
    EXPECT_THROW(get_attention_param(ck, {6, ParamComponent::Q, ParamKind::Weight}), Error);
    EXPECT_THROW(get_attention_param(ck, {-1, ParamComponent::Q, ParamKind::Weight}), Error);
}

TEST(Selectors, ReturnsCopies) {
    Checkpoint ck = init_model(small(), 1);
    Tensor t = get_attention_param(ck, {1, ParamComponent::K, ParamKind::Weight});
    const double before = ck.at("encoder.1.attn.k.weight").values[0];
    t.values[0] += 1.0;
    EXPECT_EQ(ck.at("encoder.1.attn.k.weight").values[0], before);
}

TEST(Selectors, LayerNormInitIsOnes) {
    const Checkpoint ck = init_model(small(), 2);
    for (int l = 0; l < 3; ++l) {
        for (double v : get_layernorm_param(ck, l, LayerNormSlot::LN1, ParamKind::Weight)) EXPECT_EQ(v, 1.0);
        for (double v : get_layernorm_param(ck, l, LayerNormSlot::LN2, ParamKind::Bias)) EXPECT_EQ(v, 0.0);
    }
    EXPECT_THROW(get_layernorm_param(ck, 3, LayerNormSlot::LN1, ParamKind::Weight), Error);
}

TEST(Activations, RowsMatchPerSampleForward) {
    const Checkpoint ck = init_model(small(), 3);
    const Dataset d = few_samples();
    const auto acts = collect_activations(ck, d);
    ASSERT_EQ(acts.size(), 3u);
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(acts[l].layer, static_cast<int>(l));
        ASSERT_EQ(acts[l].rows.rows(), d.size());
        ASSERT_EQ(acts[l].rows.cols(), 16u);
        ASSERT_EQ(acts[l].meta.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            const auto trace = forward(ck, d.samples[i].tokens);
            const auto row = acts[l].rows.row(i);
            EXPECT_TRUE(std::equal(row.begin(), row.end(), trace.per_layer_cls[l].begin()));
            EXPECT_EQ(acts[l].meta[i].poisoned, d.samples[i].poisoned);
            EXPECT_EQ(acts[l].meta[i].trigger_id, d.samples[i].trigger_id);
            EXPECT_EQ(acts[l].meta[i].label, d.samples[i].label);
        }
        const auto r0 = acts[l].rows.row(0), r2 = acts[l].rows.row(2);
        EXPECT_TRUE(std::equal(r0.begin(), r0.end(), r2.begin()));
    }
}

TEST(Embeddings, FinalClsAndOrder) {
    const Checkpoint ck = init_model(small(), 4);
    Dataset d = few_samples();
    const auto e = collect_context_embeddings(ck, d);
    ASSERT_EQ(e.rows.rows(), 4u);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto f = forward(ck, d.samples[i].tokens).final_cls;
        EXPECT_TRUE(std::equal(f.begin(), f.end(), e.rows.row(i).begin()));
    }
    std::swap(d.samples[0], d.samples[3]);
    const auto p = collect_context_embeddings(ck, d);
    EXPECT_TRUE(std::equal(p.rows.row(0).begin(), p.rows.row(0).end(), e.rows.row(3).begin()));
    EXPECT_EQ(p.meta[0], e.meta[3]);
}

TEST(Extraction, NeverMutatesCheckpoint) {
    const Checkpoint ck = init_model(small(), 5);
    const std::string before = sha256_hex(serialize_checkpoint(ck));
    (void)collect_activations(ck, few_samples());
    (void)collect_context_embeddings(ck, few_samples());
    (void)get_attention_param(ck, {0, ParamComponent::V, ParamKind::Weight});
    EXPECT_EQ(sha256_hex(serialize_checkpoint(ck)), before);
}

TEST(Extraction, ErrorsNameTheSample) {
    const Checkpoint ck = init_model(small(), 6);
    Dataset d = few_samples();
    d.samples[2].tokens[1] = 99;
    try {
        collect_activations(ck, d);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("sample 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(collect_context_embeddings(ck, Dataset{}), Error);
}
