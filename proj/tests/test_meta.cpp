#include <gtest/gtest.h>

#include <cmath>

#include "bdlab/defense.hpp"

using namespace bdlab;

namespace {

/// Two Gaussian classes split along the first coordinate.
std::vector<ZooSample> separable_zoo(std::uint64_t seed, int per_class, std::size_t dim) {
    Rng rng(seed);
    std::vector<ZooSample> zoo;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < per_class; ++i) {
            ZooSample s;
            s.label = c;
            s.features.resize(dim);
            for (double& v : s.features) v = rng.normal();
            s.features[0] += c == 1 ? 4.0 : -4.0;
            zoo.push_back(s);
        }
    }
    return zoo;
}

}  // namespace

TEST(Meta, SeparableZooLearned) {
    const auto zoo = separable_zoo(1, 20, 30);
    MetaConfig cfg;
    cfg.epochs = 200;
    const auto r = train_meta_classifier(zoo, cfg);
    EXPECT_GE(r.train.accuracy, 0.95);
    EXPECT_FALSE(r.validation_is_train);
    EXPECT_EQ(r.train.n + r.validation.n, zoo.size());
    EXPECT_EQ(r.validation.n, 10u);

    // Held-out points on either side.
    std::vector<double> pos(30, 0.0), neg(30, 0.0);
    pos[0] = 5;
    neg[0] = -5;
    EXPECT_TRUE(is_poisoned(r.classifier.probability(pos)));
    EXPECT_FALSE(is_poisoned(r.classifier.probability(neg)));
}

TEST(Meta, LossStrictlyDecreases) {
    for (std::uint64_t seed : {2, 3}) {
        const auto r = train_meta_classifier(separable_zoo(seed, 8, 500), {.epochs = 40, .seed = seed});
        ASSERT_GE(r.loss_curve.size(), 2u);
        for (std::size_t i = 1; i < r.loss_curve.size(); ++i) EXPECT_LT(r.loss_curve[i], r.loss_curve[i - 1]);
    }
}

TEST(Meta, IndistinguishableInputsCannotBeatChance) {
    std::vector<ZooSample> zoo(2);
    zoo[0].features = zoo[1].features = {0.3, -1.0, 2.0};
    zoo[1].label = 1;
    const auto r = train_meta_classifier(zoo, {});
    EXPECT_TRUE(r.validation_is_train);
    EXPECT_LE(r.validation.accuracy, 0.5);
}

TEST(Meta, DeterministicForSeed) {
    const auto zoo = separable_zoo(4, 6, 40);
    const auto a = train_meta_classifier(zoo, {.epochs = 15, .seed = 9});
    const auto b = train_meta_classifier(zoo, {.epochs = 15, .seed = 9});
    EXPECT_EQ(a.loss_curve, b.loss_curve);
    EXPECT_EQ(a.train.accuracy, b.train.accuracy);
    EXPECT_EQ(a.validation.loss, b.validation.loss);
    EXPECT_EQ(a.classifier.w1, b.classifier.w1);
}

TEST(Meta, Errors) {
    auto zoo = separable_zoo(5, 3, 4);
    std::vector<ZooSample> one_class(zoo.begin(), zoo.begin() + 3);
    EXPECT_THROW(train_meta_classifier(one_class, {}), Error);
    EXPECT_THROW(train_meta_classifier({}, {}), Error);
    auto ragged = zoo;
    ragged[1].features.pop_back();
    EXPECT_THROW(train_meta_classifier(ragged, {}), Error);
    auto bad_label = zoo;
    bad_label[0].label = 2;
    EXPECT_THROW(train_meta_classifier(bad_label, {}), Error);
    EXPECT_THROW(train_meta_classifier(zoo, {.epochs = 0}), Error);
    const auto r = train_meta_classifier(zoo, {.epochs = 3});
    EXPECT_THROW(r.classifier.probability(std::vector<double>(5)), Error);
}

TEST(Meta, ClassifyCheckpointAndPersistence) {
    ModelConfig mc;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.n_layers = 2;
    mc.d_ffn = 8;
    std::vector<ZooSample> zoo;
    for (int i = 0; i < 6; ++i) zoo.push_back({flatten_attention_weights(init_model(mc, static_cast<std::uint64_t>(i))), i % 2});
    const auto r = train_meta_classifier(zoo, {.epochs = 5});
    const Checkpoint ck = init_model(mc, 0);
    const double p = classify_checkpoint(r.classifier, ck);
    EXPECT_TRUE(std::isfinite(p));
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_EQ(p, classify_checkpoint(r.classifier, init_model(mc, 0)));
    EXPECT_FALSE(is_poisoned(0.5));
    EXPECT_TRUE(is_poisoned(0.5000001));

    const MetaClassifier back = decode_meta_classifier(encode_meta_classifier(r.classifier));
    EXPECT_NEAR(classify_checkpoint(back, ck), p, 1e-5);
    EXPECT_EQ(encode_meta_classifier(back), encode_meta_classifier(r.classifier));
    EXPECT_THROW(decode_meta_classifier("garbage"), Error);

    ModelConfig other = mc;
    other.d_model = 4;
    other.n_heads = 1;
    EXPECT_THROW(classify_checkpoint(r.classifier, init_model(other, 0)), Error);
}
