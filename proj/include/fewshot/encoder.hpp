#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fewshot/graph.hpp"
#include "fewshot/text_pipeline.hpp"

namespace fewshot {

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 32;
    std::size_t n_heads = 2;
    std::size_t n_layers = 1;
    std::size_t d_ff = 128;
    std::size_t max_len = 64;
    double dropout_rate = 0.0;  // applied during meta-training only; 0 disables
    std::string preset_name = "tiny";

    void validate() const;
    /// Size presets: tiny (1 layer, d=32), small (2, 64), base (4, 128).
    static EncoderConfig preset(const std::string& name, std::size_t vocab_size,
                                std::size_t max_len);
};

struct LayerParams {
    ad::TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
    ad::TensorPtr ff_w1, ff_b1, ff_w2, ff_b2;
    ad::TensorPtr ln1_gain, ln1_bias, ln2_gain, ln2_bias;

    std::vector<ad::TensorPtr> all() const;
};

struct EncoderParams {
    EncoderConfig config;
    ad::TensorPtr token_embedding;     // [vocab_size, d_model]
    ad::TensorPtr position_embedding;  // [max_len, d_model]
    std::vector<LayerParams> layers;

    std::vector<ad::TensorPtr> all() const;
    /// Stable (name, tensor) listing; these names are the checkpoint keys.
    std::vector<std::pair<std::string, ad::TensorPtr>> named() const;
    EncoderParams clone(bool requires_grad) const;
    void zero_grad() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
/// layer-norm gains. Deterministic given seed.
EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

struct AttentionDetail {
    ad::TensorPtr output;                      // [T, d], after residual + layer norm
    std::vector<ad::TensorPtr> head_weights;   // per head [T, T] attention rows
};

/// Scaled dot-product self-attention over all heads, with masked key
/// positions receiving an additive -1e30 before the softmax, followed by the
/// residual connection and layer norm.
AttentionDetail self_attention_detailed(ad::Graph& g, const ad::TensorPtr& x,
                                        const LayerParams& layer, const EncoderConfig& config,
                                        const std::vector<std::uint8_t>& mask);
ad::TensorPtr self_attention(ad::Graph& g, const ad::TensorPtr& x, const LayerParams& layer,
                             const EncoderConfig& config, const std::vector<std::uint8_t>& mask);

/// Hidden states [T, d] after embedding lookup and the first `n_layers_done`
/// encoder layers.
ad::TensorPtr encode_states(ad::Graph& g, const EncoderParams& params, const EncodedExample& ex,
                            std::size_t n_layers_done,
                            std::optional<std::uint64_t> dropout_seed = std::nullopt);

/// Remaining layers from `first_layer` on, then masked mean pooling -> [1, d].
ad::TensorPtr encode_from_states(ad::Graph& g, const EncoderParams& params,
                                 const ad::TensorPtr& states, const EncodedExample& ex,
                                 std::size_t first_layer,
                                 std::optional<std::uint64_t> dropout_seed = std::nullopt);

/// Full forward pass: embeddings, all layers, masked mean pooling -> [1, d].
ad::TensorPtr encode(ad::Graph& g, const EncoderParams& params, const EncodedExample& ex,
                     std::optional<std::uint64_t> dropout_seed = std::nullopt);

/// Value-only hidden states (fresh throwaway graph, no gradient tracking).
ad::Tensor hidden_states_value(const EncoderParams& params, const EncodedExample& ex,
                               std::size_t n_layers_done);

void save_checkpoint(const std::string& path, const EncoderParams& params);
EncoderParams load_checkpoint(const std::string& path);

}  // namespace fewshot
