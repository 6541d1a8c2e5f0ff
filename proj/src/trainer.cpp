#include "fewshot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fewshot/errors.hpp"

namespace fewshot {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !(fine_tune_lr > 0.0)) {
        throw config_error("learning rates must be positive");
    }
    if (fine_tune_steps < 1) throw config_error("fine_tune_steps must be at least 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw config_error("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw config_error("adam eps must be positive");
    loss.validate();
}

Head zero_head(std::size_t d_model, std::size_t way, bool requires_grad) {
    return Head{ad::zeros({d_model, way}, requires_grad), ad::zeros({way}, requires_grad)};
}

AdamState AdamState::init(const std::vector<ad::TensorPtr>& params) {
    AdamState s;
    s.slots.reserve(params.size());
    for (const auto& p : params) {
        s.slots.push_back(Slot{std::vector<double>(p->numel(), 0.0),
                               std::vector<double>(p->numel(), 0.0)});
    }
    return s;
}

void adam_step(const std::vector<ad::TensorPtr>& params, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
    if (params.size() != state.slots.size()) {
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) +
                                    " params vs " + std::to_string(state.slots.size()) + " slots");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& p = *params[t];
        auto& slot = state.slots[t];
        if (slot.m.size() != p.numel()) {
            throw std::invalid_argument("adam_step: state slot " + std::to_string(t) + " holds " +
                                        std::to_string(slot.m.size()) + " entries, parameter has " +
                                        std::to_string(p.numel()));
        }
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double g = p.grad[i];
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void zero_grads(const std::vector<ad::TensorPtr>& params) {
    for (const auto& p : params) p->zero_grad();
}

EncodedExample encode_for_model(const Example& ex, std::size_t model_max_len) {
    const std::size_t wanted = ex.tokens.size() + 4;
    return encode_tokens(ex, SpecialIds{}, std::min(wanted, model_max_len));
}

namespace {

std::vector<std::size_t> labels_of(const std::vector<EpisodeItem>& items) {
    std::vector<std::size_t> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.episode_label);
    return out;
}

}  // namespace

HeadOnlyAdapt adapt_head_on_embeddings(const ad::Tensor& embeddings,
                                       const std::vector<std::size_t>& labels, std::size_t way,
                                       const TrainConfig& cfg) {
    const std::size_t d = embeddings.shape[1];
    Head head = zero_head(d, way);
    auto trainable = head.all();
    AdamState adam = AdamState::init(trainable);

    // constant embeddings: the contrastive term cannot move the head, so it
    // is computed once for reporting and kept out of the optimized objective
    double cl_value = 0.0;
    std::size_t n_anchors = 0;
    if (cfg.loss.beta > 0.0 && labels.size() >= 2) {
        ad::Graph g;
        auto h = ad::tensor(embeddings.shape, embeddings.data, false);
        auto r = contrastive_loss(g, h, labels, cfg.loss.tau, cfg.loss.numerator);
        cl_value = r.loss->data[0];
        n_anchors = r.n_anchors_used;
    }

    HeadOnlyAdapt out;
    for (std::size_t s = 0; s < cfg.fine_tune_steps; ++s) {
        ad::Graph g;
        auto h = ad::tensor(embeddings.shape, embeddings.data, false);
        auto logits = g.add_rows(g.matmul(h, head.weight), head.bias);
        auto ce = cross_entropy(g, logits, labels);
        auto objective = ce;
        ad::TensorPtr reg;
        if (cfg.loss.lambda_reg > 0.0) {
            reg = l2_regularization(g, trainable);
            objective = g.add(objective, g.scale(reg, cfg.loss.lambda_reg));
        }
        LossBreakdown b;
        b.ce = ce->data[0];
        b.reg = reg ? reg->data[0] : 0.0;
        b.cl = cl_value;
        b.total = b.ce + cfg.loss.lambda_reg * b.reg + cfg.loss.beta * b.cl;
        b.n_anchors_used = n_anchors;
        out.steps.push_back(b);

        zero_grads(trainable);
        g.backward(objective);
        adam_step(trainable, adam, cfg.fine_tune_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    }
    out.head = head;
    return out;
}

namespace {

// share frozen tensors when they are already detached, otherwise copy
ad::TensorPtr frozen_view(const ad::TensorPtr& t) {
    return t->requires_grad ? ad::clone(t, false) : t;
}

}  // namespace

FineTuneResult fine_tune_on_support(const EncoderParams& snapshot, const Episode& episode,
                                    const TrainConfig& cfg) {
    cfg.validate();
    if (episode.support.empty()) throw std::invalid_argument("fine_tune: empty support set");

    const auto& config = snapshot.config;
    const std::size_t n_layers = config.n_layers;
    const std::size_t unfreeze = std::min(cfg.unfreeze_top_layers, n_layers);
    const std::size_t first_trainable = n_layers - unfreeze;
    const auto labels = labels_of(episode.support);

    // copy-on-write: the snapshot is never mutated, not even its grads
    EncoderParams adapted;
    adapted.config = config;
    adapted.token_embedding = frozen_view(snapshot.token_embedding);
    adapted.position_embedding = frozen_view(snapshot.position_embedding);
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (l < first_trainable) {
            LayerParams frozen;
            const auto& src = snapshot.layers[l];
            frozen.wq = frozen_view(src.wq);
            frozen.bq = frozen_view(src.bq);
            frozen.wk = frozen_view(src.wk);
            frozen.bk = frozen_view(src.bk);
            frozen.wv = frozen_view(src.wv);
            frozen.bv = frozen_view(src.bv);
            frozen.wo = frozen_view(src.wo);
            frozen.bo = frozen_view(src.bo);
            frozen.ff_w1 = frozen_view(src.ff_w1);
            frozen.ff_b1 = frozen_view(src.ff_b1);
            frozen.ff_w2 = frozen_view(src.ff_w2);
            frozen.ff_b2 = frozen_view(src.ff_b2);
            frozen.ln1_gain = frozen_view(src.ln1_gain);
            frozen.ln1_bias = frozen_view(src.ln1_bias);
            frozen.ln2_gain = frozen_view(src.ln2_gain);
            frozen.ln2_bias = frozen_view(src.ln2_bias);
            adapted.layers.push_back(std::move(frozen));
        } else {
            LayerParams t;
            const auto& src = snapshot.layers[l];
            t.wq = ad::clone(src.wq, true);
            t.bq = ad::clone(src.bq, true);
            t.wk = ad::clone(src.wk, true);
            t.bk = ad::clone(src.bk, true);
            t.wv = ad::clone(src.wv, true);
            t.bv = ad::clone(src.bv, true);
            t.wo = ad::clone(src.wo, true);
            t.bo = ad::clone(src.bo, true);
            t.ff_w1 = ad::clone(src.ff_w1, true);
            t.ff_b1 = ad::clone(src.ff_b1, true);
            t.ff_w2 = ad::clone(src.ff_w2, true);
            t.ff_b2 = ad::clone(src.ff_b2, true);
            t.ln1_gain = ad::clone(src.ln1_gain, true);
            t.ln1_bias = ad::clone(src.ln1_bias, true);
            t.ln2_gain = ad::clone(src.ln2_gain, true);
            t.ln2_bias = ad::clone(src.ln2_bias, true);
            adapted.layers.push_back(std::move(t));
        }
    }

    std::vector<EncodedExample> encoded;
    encoded.reserve(episode.support.size());
    for (const auto& it : episode.support) {
        encoded.push_back(encode_for_model(*it.example, config.max_len));
    }

    FineTuneResult out;
    if (unfreeze == 0) {
        // frozen encoder: embed the support once, then head-only steps
        std::vector<double> flat;
        std::size_t d = config.d_model;
        flat.reserve(encoded.size() * d);
        for (std::size_t i = 0; i < encoded.size(); ++i) {
            ad::Graph g;
            auto h = encode(g, adapted, encoded[i]);
            flat.insert(flat.end(), h->data.begin(), h->data.end());
        }
        ad::Tensor h_support({encoded.size(), d}, std::move(flat));
        auto res = adapt_head_on_embeddings(h_support, labels, episode.way, cfg);
        out.encoder = adapted;
        out.head = res.head;
        out.steps = std::move(res.steps);
        return out;
    }

    // cache activations below the first trainable layer per support example
    std::vector<ad::Tensor> cached;
    cached.reserve(encoded.size());
    for (const auto& e : encoded) {
        cached.push_back(hidden_states_value(adapted, e, first_trainable));
    }

    Head head = zero_head(config.d_model, episode.way);
    std::vector<ad::TensorPtr> trainable = head.all();
    for (std::size_t l = first_trainable; l < n_layers; ++l) {
        auto ls = adapted.layers[l].all();
        trainable.insert(trainable.end(), ls.begin(), ls.end());
    }
    AdamState adam = AdamState::init(trainable);

    for (std::size_t s = 0; s < cfg.fine_tune_steps; ++s) {
        ad::Graph g;
        std::vector<ad::TensorPtr> hs;
        hs.reserve(encoded.size());
        for (std::size_t i = 0; i < encoded.size(); ++i) {
            auto leaf = ad::tensor(cached[i].shape, cached[i].data, false);
            hs.push_back(encode_from_states(g, adapted, leaf, encoded[i], first_trainable));
        }
        auto h_batch = g.concat_rows(hs);
        auto logits = g.add_rows(g.matmul(h_batch, head.weight), head.bias);
        auto ce = cross_entropy(g, logits, labels);
        ad::TensorPtr reg;
        if (cfg.loss.lambda_reg > 0.0) reg = l2_regularization(g, trainable);
        ad::TensorPtr cl;
        std::size_t n_anchors = 0;
        if (cfg.loss.beta > 0.0 && labels.size() >= 2) {
            auto r = contrastive_loss(g, h_batch, labels, cfg.loss.tau, cfg.loss.numerator);
            cl = r.loss;
            n_anchors = r.n_anchors_used;
        }
        auto total = total_loss(g, ce, reg, cl, cfg.loss, n_anchors);
        out.steps.push_back(total.breakdown);

        zero_grads(trainable);
        g.backward(total.total);
        adam_step(trainable, adam, cfg.fine_tune_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    }

    out.encoder = adapted;
    out.head = head;
    return out;
}

std::vector<double> classify(const EncoderParams& encoder, const Head& head, const Example& ex) {
    ad::Graph g;
    auto h = encode(g, encoder, encode_for_model(ex, encoder.config.max_len));
    auto logits = g.add_rows(g.matmul(h, head.weight), head.bias);
    return logits->data;
}

MetaTrainResult meta_train(const Dataset& train, const Protocol& protocol, const TrainConfig& cfg,
                           const EncoderParams& initial, std::uint64_t seed) {
    cfg.validate();
    protocol.validate();

    MetaTrainResult out;
    out.params = initial.clone(true);
    if (cfg.meta_train_episodes == 0) return out;
    train.validate_protocol(protocol.way, protocol.shot, protocol.queries);

    auto& params = out.params;
    auto all_params = params.all();
    AdamState adam = AdamState::init(all_params);
    const bool use_dropout = params.config.dropout_rate > 0.0;

    for (std::size_t t = 0; t < cfg.meta_train_episodes; ++t) {
        const Episode episode = episode_at(train, protocol, seed, t);

        std::vector<EncodedExample> enc_support, enc_query;
        for (const auto& it : episode.support) {
            enc_support.push_back(encode_for_model(*it.example, params.config.max_len));
        }
        for (const auto& it : episode.query) {
            enc_query.push_back(encode_for_model(*it.example, params.config.max_len));
        }

        // inner loop: adapt a fresh head on the support set, encoder frozen.
        // Embeddings are evaluated once and detached, so no gradient from the
        // inner steps ever reaches the encoder.
        const std::size_t d = params.config.d_model;
        std::vector<double> flat;
        flat.reserve(enc_support.size() * d);
        for (const auto& e : enc_support) {
            ad::Graph g;
            auto h = encode(g, params, e);
            flat.insert(flat.end(), h->data.begin(), h->data.end());
        }
        ad::Tensor h_support({enc_support.size(), d}, std::move(flat));
        Head head =
            adapt_head_on_embeddings(h_support, labels_of(episode.support), episode.way, cfg).head;
        auto head_w = ad::clone(head.weight, false);
        auto head_b = ad::clone(head.bias, false);

        // outer step: joint loss over support + query, gradients into every
        // encoder parameter (first-order; the adapted head is a constant here)
        ad::Graph g;
        const std::uint64_t episode_dropout = derive_seed(derive_seed(seed, t), 0x0d0d);
        std::vector<ad::TensorPtr> hs;
        std::vector<std::size_t> all_labels;
        for (std::size_t i = 0; i < enc_support.size(); ++i) {
            hs.push_back(encode(g, params, enc_support[i],
                                use_dropout ? std::optional<std::uint64_t>(
                                                  derive_seed(episode_dropout, i))
                                            : std::nullopt));
            all_labels.push_back(episode.support[i].episode_label);
        }
        for (std::size_t i = 0; i < enc_query.size(); ++i) {
            hs.push_back(encode(g, params, enc_query[i],
                                use_dropout ? std::optional<std::uint64_t>(derive_seed(
                                                  episode_dropout, 1000 + i))
                                            : std::nullopt));
            all_labels.push_back(episode.query[i].episode_label);
        }
        auto h_all = g.concat_rows(hs);
        auto logits = g.add_rows(g.matmul(h_all, head_w), head_b);
        auto ce = cross_entropy(g, logits, all_labels);
        ad::TensorPtr reg;
        if (cfg.loss.lambda_reg > 0.0) reg = l2_regularization(g, all_params);
        ad::TensorPtr cl;
        std::size_t n_anchors = 0;
        if (cfg.loss.beta > 0.0 && all_labels.size() >= 2) {
            auto r = contrastive_loss(g, h_all, all_labels, cfg.loss.tau, cfg.loss.numerator);
            cl = r.loss;
            n_anchors = r.n_anchors_used;
        }

        MetaTrainRecord record;
        record.episode = t;
        try {
            auto total = total_loss(g, ce, reg, cl, cfg.loss, n_anchors);
            record.loss = total.breakdown;
            params.zero_grad();
            g.backward(total.total);
        } catch (const numeric_error& e) {
            throw numeric_error("meta-training diverged at episode " + std::to_string(t) + ": " +
                                e.what());
        }
        adam_step(all_params, adam, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                  cfg.adam_eps);

        // query accuracy under the adapted head, from the pre-update forward
        std::size_t correct = 0;
        const std::size_t offset = enc_support.size();
        for (std::size_t i = 0; i < enc_query.size(); ++i) {
            const double* row = logits->data.data() + (offset + i) * episode.way;
            std::size_t best = 0;
            for (std::size_t c = 1; c < episode.way; ++c) {
                if (row[c] > row[best]) best = c;
            }
            correct += best == episode.query[i].episode_label ? 1 : 0;
        }
        record.query_acc = static_cast<double>(correct) / static_cast<double>(enc_query.size());
        out.log.push_back(record);
    }
    return out;
}

}  // namespace fewshot
