#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fewshot/errors.hpp"
#include "fewshot/trainer.hpp"
#include "test_util.hpp"

using namespace fewshot;

namespace {

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.meta_train_episodes = 5;
    cfg.fine_tune_steps = 10;
    cfg.fine_tune_lr = 0.05;
    cfg.unfreeze_top_layers = 0;
    return cfg;
}

EncoderParams tiny_params(const Dataset& ds, std::uint64_t seed) {
    auto cfg = EncoderConfig::preset("tiny", ds.vocab.size(), 24);
    return init_encoder(cfg, seed);
}

}  // namespace

TEST_CASE("adam leaves parameters alone on zero gradients") {
    auto p = ad::tensor({3}, {1.0, -2.0, 0.5}, true);
    auto state = AdamState::init({p});
    const auto before = p->data;
    adam_step({p}, state, 0.1, 0.9, 0.999, 1e-8);
    CHECK(p->data == before);
}

TEST_CASE("first adam step moves by about lr regardless of gradient size") {
    for (const double g : {1e-6, 1e-2, 1.0, 1e3}) {
        auto p = ad::zeros({1}, true);
        p->grad[0] = g;
        auto state = AdamState::init({p});
        adam_step({p}, state, 0.01, 0.9, 0.999, 1e-8);
        // bias-corrected first step: lr * g / (|g| + eps') ~ lr * sign(g)
        CHECK(std::abs(p->data[0] + 0.01) < 1e-4);
    }
}

TEST_CASE("adam trajectories are bitwise identical across runs") {
    auto run = [&]() {
        Rng rng(5);
        auto p = ad::tensor({4}, {0.5, -0.5, 1.0, -1.0}, true);
        auto state = AdamState::init({p});
        for (int s = 0; s < 20; ++s) {
            for (std::size_t i = 0; i < 4; ++i) p->grad[i] = 2.0 * p->data[i] + rng.uniform(-0.1, 0.1);
            adam_step({p}, state, 0.05, 0.9, 0.999, 1e-8);
        }
        return p->data;
    };
    CHECK(run() == run());
}

TEST_CASE("adam rejects mismatched state") {
    auto p = ad::zeros({3}, true);
    auto q = ad::zeros({2}, true);
    auto state = AdamState::init({p});
    CHECK_THROWS_AS(adam_step({p, q}, state, 0.1, 0.9, 0.999, 1e-8), std::invalid_argument);
    auto state2 = AdamState::init({q});
    CHECK_THROWS_AS(adam_step({p}, state2, 0.1, 0.9, 0.999, 1e-8), std::invalid_argument);
}

TEST_CASE("zero head gives uniform logits, so initial support CE is N*K*ln(N)") {
    auto ds = generate_synthetic(8, 20, 160, 0.0, 11);
    auto params = tiny_params(ds, 1);
    const Protocol proto{5, 3, 2};
    auto episode = episode_at(ds, proto, 3, 0);

    auto cfg = quick_config();
    auto result = fine_tune_on_support(params.clone(false), episode, cfg);
    const double want = 5.0 * 3.0 * std::log(5.0);
    CHECK(std::abs(result.steps.front().ce - want) < 1e-9);
}

TEST_CASE("fine-tuning reaches full support accuracy on separable data") {
    auto ds = generate_synthetic(6, 20, 200, 0.0, 13);
    auto params = tiny_params(ds, 2);
    const Protocol proto{5, 5, 2};
    auto episode = episode_at(ds, proto, 9, 0);

    TrainConfig cfg = quick_config();
    cfg.fine_tune_steps = 60;
    cfg.fine_tune_lr = 0.1;
    auto result = fine_tune_on_support(params.clone(false), episode, cfg);

    std::size_t correct = 0;
    for (const auto& it : episode.support) {
        const auto logits = classify(result.encoder, result.head, *it.example);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c) {
            if (logits[c] > logits[best]) best = c;
        }
        correct += best == it.episode_label;
    }
    CHECK(correct == episode.support.size());

    // support loss should be non-increasing nearly everywhere on easy data
    std::size_t non_increasing = 0;
    for (std::size_t s = 1; s < result.steps.size(); ++s) {
        non_increasing += result.steps[s].total <= result.steps[s - 1].total + 1e-12;
    }
    CHECK(static_cast<double>(non_increasing) >=
          0.9 * static_cast<double>(result.steps.size() - 1));
}

TEST_CASE("one-shot support batches use no contrastive anchors") {
    auto ds = generate_synthetic(8, 10, 160, 0.0, 17);
    auto params = tiny_params(ds, 3);
    auto episode = episode_at(ds, {5, 1, 2}, 4, 0);

    TrainConfig cfg = quick_config();
    cfg.loss.beta = 1.0;
    auto result = fine_tune_on_support(params.clone(false), episode, cfg);
    for (const auto& step : result.steps) {
        CHECK(step.n_anchors_used == 0);
        CHECK(step.cl == 0.0);
    }

    // with K >= 2 every support anchor has positives
    auto episode2 = episode_at(ds, {5, 2, 2}, 4, 0);
    auto result2 = fine_tune_on_support(params.clone(false), episode2, cfg);
    CHECK(result2.steps.front().n_anchors_used == 10);
    CHECK(result2.steps.front().cl > 0.0);
}

TEST_CASE("fine-tuning never mutates the shared snapshot") {
    auto ds = generate_synthetic(6, 12, 140, 0.3, 19);
    auto params = tiny_params(ds, 4);
    const auto snapshot = params.clone(false);
    std::vector<std::vector<double>> before;
    for (const auto& t : snapshot.all()) before.push_back(t->data);

    TrainConfig cfg = quick_config();
    cfg.unfreeze_top_layers = 1;  // trainable encoder copies, frozen shared parts
    cfg.loss.beta = 0.5;
    cfg.loss.lambda_reg = 0.01;
    auto episode = episode_at(ds, {4, 3, 2}, 21, 0);
    auto result = fine_tune_on_support(snapshot, episode, cfg);

    const auto all = snapshot.all();
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i]->data == before[i]);
        CHECK(all[i]->grad.empty());
    }
    // the adapted top layer did change
    CHECK(result.encoder.layers.back().wq->data != snapshot.layers.back().wq->data);
    // frozen embeddings are shared, not copied
    CHECK(result.encoder.token_embedding.get() == snapshot.token_embedding.get());
}

TEST_CASE("unfrozen-top adaptation also drives the support loss down") {
    auto ds = generate_synthetic(6, 14, 150, 0.4, 23);
    auto params = tiny_params(ds, 5);
    TrainConfig cfg = quick_config();
    cfg.unfreeze_top_layers = 1;
    cfg.fine_tune_steps = 25;
    cfg.fine_tune_lr = 0.02;
    cfg.loss.beta = 0.5;
    auto episode = episode_at(ds, {4, 4, 2}, 31, 0);
    auto result = fine_tune_on_support(params.clone(false), episode, cfg);
    CHECK(result.steps.back().total < result.steps.front().total);
    CHECK(result.steps.back().ce < result.steps.front().ce);
}

TEST_CASE("meta_train with zero episodes returns the initial parameters") {
    auto ds = generate_synthetic(6, 12, 140, 0.0, 29);
    auto params = tiny_params(ds, 6);
    TrainConfig cfg = quick_config();
    cfg.meta_train_episodes = 0;
    auto result = meta_train(ds, {4, 2, 2}, cfg, params, 1);
    CHECK(result.log.empty());
    const auto a = params.all();
    const auto b = result.params.all();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->data == b[i]->data);
}

TEST_CASE("meta_train logs one record per episode and improves the loss") {
    auto ds = generate_synthetic(6, 25, 200, 0.0, 31);
    auto params = tiny_params(ds, 7);
    TrainConfig cfg = quick_config();
    cfg.meta_train_episodes = 30;
    cfg.fine_tune_steps = 12;
    cfg.learning_rate = 3e-3;

    auto result = meta_train(ds, {5, 2, 2}, cfg, params, 17);
    CHECK(result.log.size() == 30);
    for (std::size_t i = 0; i < result.log.size(); ++i) CHECK(result.log[i].episode == i);

    double early = 0.0, late = 0.0;
    for (std::size_t i = 0; i < 5; ++i) early += result.log[i].loss.total;
    for (std::size_t i = 25; i < 30; ++i) late += result.log[i].loss.total;
    CHECK(late < early);

    // the caller's params are untouched; training worked on a copy
    const auto a = params.all();
    const auto b = tiny_params(ds, 7).all();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->data == b[i]->data);
}

TEST_CASE("with weights off the meta objective is exactly the cross entropy") {
    auto ds = generate_synthetic(6, 15, 160, 0.2, 37);
    auto params = tiny_params(ds, 8);
    TrainConfig cfg = quick_config();
    cfg.meta_train_episodes = 6;
    cfg.loss.lambda_reg = 0.0;
    cfg.loss.beta = 0.0;

    auto result = meta_train(ds, {4, 2, 2}, cfg, params, 23);
    for (const auto& rec : result.log) {
        CHECK(rec.loss.total == rec.loss.ce);
        CHECK(rec.loss.reg == 0.0);
        CHECK(rec.loss.cl == 0.0);
    }
}

TEST_CASE("meta_train is deterministic") {
    auto ds = generate_synthetic(5, 12, 130, 0.1, 41);
    auto params = tiny_params(ds, 9);
    TrainConfig cfg = quick_config();
    cfg.meta_train_episodes = 4;
    cfg.loss.beta = 0.5;

    auto a = meta_train(ds, {4, 2, 2}, cfg, params, 29);
    auto b = meta_train(ds, {4, 2, 2}, cfg, params, 29);
    const auto pa = a.params.all();
    const auto pb = b.params.all();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->data == pb[i]->data);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss.total == b.log[i].loss.total);
        CHECK(a.log[i].query_acc == b.log[i].query_acc);
    }
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = TrainConfig{};
    cfg.fine_tune_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = TrainConfig{};
    cfg.loss.tau = -1.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
}
