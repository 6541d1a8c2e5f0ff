#pragma once

#include <cstdint>
#include <vector>

#include "fewshot/encoder.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/losses.hpp"

namespace fewshot {

struct TrainConfig {
    double learning_rate = 1e-3;  // meta step
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t meta_train_episodes = 200;
    std::size_t fine_tune_steps = 25;
    double fine_tune_lr = 1e-2;
    std::size_t unfreeze_top_layers = 1;  // encoder layers adapted per episode, beyond the head
    LossWeights loss;
    std::size_t eval_episodes = 1000;

    void validate() const;
};

/// Episode classifier f mapping h -> logits over the episode's ways.
struct Head {
    ad::TensorPtr weight;  // [d_model, way]
    ad::TensorPtr bias;    // [way]

    std::vector<ad::TensorPtr> all() const { return {weight, bias}; }
};

/// Zero-initialized head: uniform initial logits, so per-episode adaptation
/// carries no init randomness.
Head zero_head(std::size_t d_model, std::size_t way, bool requires_grad = true);

struct AdamState {
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<Slot> slots;
    long long step = 0;

    static AdamState init(const std::vector<ad::TensorPtr>& params);
};

/// Bias-corrected Adam update reading each parameter's accumulated grad.
void adam_step(const std::vector<ad::TensorPtr>& params, AdamState& state, double lr,
               double beta1, double beta2, double eps);

void zero_grads(const std::vector<ad::TensorPtr>& params);

/// Encode with entity markers, truncated to the model's max_len, without
/// padding beyond what the model requires.
EncodedExample encode_for_model(const Example& ex, std::size_t model_max_len);

struct FineTuneResult {
    EncoderParams encoder;  // frozen parts shared with the snapshot, adapted parts fresh
    Head head;
    std::vector<LossBreakdown> steps;  // support loss before each update
};

struct HeadOnlyAdapt {
    Head head;
    std::vector<LossBreakdown> steps;
};

/// Head-only adaptation on fixed [B, d] embeddings. This is the frozen-encoder
/// fast path of fine_tune_on_support; it also backs encoder stubs in tests.
HeadOnlyAdapt adapt_head_on_embeddings(const ad::Tensor& embeddings,
                                       const std::vector<std::size_t>& labels, std::size_t way,
                                       const TrainConfig& cfg);

/// Per-episode adaptation: fine_tune_steps of Adam on the support set,
/// minimizing ce + lambda*||trainable||^2 + beta*cl over the head plus the
/// top unfreeze_top_layers encoder layers. The caller's snapshot is never
/// mutated, so concurrent episodes may share it.
FineTuneResult fine_tune_on_support(const EncoderParams& snapshot, const Episode& episode,
                                    const TrainConfig& cfg);

/// Logits for one example under an adapted encoder + head.
std::vector<double> classify(const EncoderParams& encoder, const Head& head, const Example& ex);

struct MetaTrainRecord {
    std::size_t episode = 0;
    LossBreakdown loss;
    double query_acc = 0.0;
};

struct MetaTrainResult {
    EncoderParams params;
    std::vector<MetaTrainRecord> log;  // one record per episode
};

/// Episodic training: per episode, adapt a fresh head on the support set,
/// then take one Adam step on all encoder parameters against the joint loss
/// over support + query. Deterministic given seed.
MetaTrainResult meta_train(const Dataset& train, const Protocol& protocol,
                           const TrainConfig& cfg, const EncoderParams& initial,
                           std::uint64_t seed);

}  // namespace fewshot
