#include "fewshot/encoder.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fewshot/errors.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kMaskNegative = 1e30;

std::size_t count_real(const std::vector<std::uint8_t>& mask) {
    std::size_t n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return n;
}

ad::TensorPtr uniform_init(ad::Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> data(ad::shape_numel(shape));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return ad::tensor(std::move(shape), std::move(data), true);
}

}  // namespace

void EncoderConfig::validate() const {
    if (vocab_size == 0) throw config_error("encoder vocab_size must be positive");
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_len == 0) {
        throw config_error("encoder dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw config_error("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                           std::to_string(n_heads));
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw config_error("dropout_rate must lie in [0, 1)");
    }
}

EncoderConfig EncoderConfig::preset(const std::string& name, std::size_t vocab_size,
                                    std::size_t max_len) {
    EncoderConfig c;
    c.vocab_size = vocab_size;
    c.max_len = max_len;
    c.preset_name = name;
    if (name == "tiny") {
        c.n_layers = 1; c.d_model = 32; c.n_heads = 2; c.d_ff = 128;
    } else if (name == "small") {
        c.n_layers = 2; c.d_model = 64; c.n_heads = 4; c.d_ff = 256;
    } else if (name == "base") {
        c.n_layers = 4; c.d_model = 128; c.n_heads = 8; c.d_ff = 512;
    } else {
        throw config_error("unknown encoder preset \"" + name + "\" (tiny, small, base)");
    }
    c.validate();
    return c;
}

std::vector<ad::TensorPtr> LayerParams::all() const {
    return {wq, bq, wk, bk, wv, bv, wo, bo, ff_w1, ff_b1, ff_w2, ff_b2,
            ln1_gain, ln1_bias, ln2_gain, ln2_bias};
}

std::vector<ad::TensorPtr> EncoderParams::all() const {
    std::vector<ad::TensorPtr> out{token_embedding, position_embedding};
    for (const auto& l : layers) {
        auto ls = l.all();
        out.insert(out.end(), ls.begin(), ls.end());
    }
    return out;
}

std::vector<std::pair<std::string, ad::TensorPtr>> EncoderParams::named() const {
    std::vector<std::pair<std::string, ad::TensorPtr>> out;
    out.emplace_back("token_embedding", token_embedding);
    out.emplace_back("position_embedding", position_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        const auto& l = layers[i];
        out.emplace_back(p + "attn.wq", l.wq);
        out.emplace_back(p + "attn.bq", l.bq);
        out.emplace_back(p + "attn.wk", l.wk);
        out.emplace_back(p + "attn.bk", l.bk);
        out.emplace_back(p + "attn.wv", l.wv);
        out.emplace_back(p + "attn.bv", l.bv);
        out.emplace_back(p + "attn.wo", l.wo);
        out.emplace_back(p + "attn.bo", l.bo);
        out.emplace_back(p + "ln1.gain", l.ln1_gain);
        out.emplace_back(p + "ln1.bias", l.ln1_bias);
        out.emplace_back(p + "ffn.w1", l.ff_w1);
        out.emplace_back(p + "ffn.b1", l.ff_b1);
        out.emplace_back(p + "ffn.w2", l.ff_w2);
        out.emplace_back(p + "ffn.b2", l.ff_b2);
        out.emplace_back(p + "ln2.gain", l.ln2_gain);
        out.emplace_back(p + "ln2.bias", l.ln2_bias);
    }
    return out;
}

EncoderParams EncoderParams::clone(bool requires_grad) const {
    EncoderParams out;
    out.config = config;
    out.token_embedding = ad::clone(token_embedding, requires_grad);
    out.position_embedding = ad::clone(position_embedding, requires_grad);
    out.layers.reserve(layers.size());
    for (const auto& l : layers) {
        LayerParams c;
        c.wq = ad::clone(l.wq, requires_grad);
        c.bq = ad::clone(l.bq, requires_grad);
        c.wk = ad::clone(l.wk, requires_grad);
        c.bk = ad::clone(l.bk, requires_grad);
        c.wv = ad::clone(l.wv, requires_grad);
        c.bv = ad::clone(l.bv, requires_grad);
        c.wo = ad::clone(l.wo, requires_grad);
        c.bo = ad::clone(l.bo, requires_grad);
        c.ff_w1 = ad::clone(l.ff_w1, requires_grad);
        c.ff_b1 = ad::clone(l.ff_b1, requires_grad);
        c.ff_w2 = ad::clone(l.ff_w2, requires_grad);
        c.ff_b2 = ad::clone(l.ff_b2, requires_grad);
        c.ln1_gain = ad::clone(l.ln1_gain, requires_grad);
        c.ln1_bias = ad::clone(l.ln1_bias, requires_grad);
        c.ln2_gain = ad::clone(l.ln2_gain, requires_grad);
        c.ln2_bias = ad::clone(l.ln2_bias, requires_grad);
        out.layers.push_back(std::move(c));
    }
    return out;
}

void EncoderParams::zero_grad() const {
    for (const auto& p : all()) p->zero_grad();
}

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const std::size_t d = config.d_model;

    EncoderParams p;
    p.config = config;
    p.token_embedding = uniform_init({config.vocab_size, d}, d, rng);
    p.position_embedding = uniform_init({config.max_len, d}, d, rng);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        LayerParams l;
        l.wq = uniform_init({d, d}, d, rng);
        l.bq = ad::zeros({d}, true);
        l.wk = uniform_init({d, d}, d, rng);
        l.bk = ad::zeros({d}, true);
        l.wv = uniform_init({d, d}, d, rng);
        l.bv = ad::zeros({d}, true);
        l.wo = uniform_init({d, d}, d, rng);
        l.bo = ad::zeros({d}, true);
        l.ff_w1 = uniform_init({d, config.d_ff}, d, rng);
        l.ff_b1 = ad::zeros({config.d_ff}, true);
        l.ff_w2 = uniform_init({config.d_ff, d}, config.d_ff, rng);
        l.ff_b2 = ad::zeros({d}, true);
        l.ln1_gain = ad::full({d}, 1.0, true);
        l.ln1_bias = ad::zeros({d}, true);
        l.ln2_gain = ad::full({d}, 1.0, true);
        l.ln2_bias = ad::zeros({d}, true);
        p.layers.push_back(std::move(l));
    }
    return p;
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

namespace {

// additive [T,T] key mask, or null when every position is real
ad::TensorPtr build_mask_bias(const std::vector<std::uint8_t>& mask) {
    const std::size_t t = mask.size();
    bool any_masked = false;
    for (auto m : mask) any_masked = any_masked || !m;
    if (!any_masked) return nullptr;
    auto bias = ad::zeros({t, t});
    for (std::size_t q = 0; q < t; ++q)
        for (std::size_t k = 0; k < t; ++k)
            if (!mask[k]) bias->data[q * t + k] = -kMaskNegative;
    return bias;
}

struct DropoutStream {
    double rate;
    std::uint64_t seed;
    std::uint64_t counter = 0;
    bool active = false;

    ad::TensorPtr apply(ad::Graph& g, const ad::TensorPtr& x) {
        if (!active || rate == 0.0) return x;
        return g.dropout(x, rate, derive_seed(seed, counter++));
    }
};

AttentionDetail attention_block(ad::Graph& g, const ad::TensorPtr& x, const LayerParams& layer,
                                const EncoderConfig& config, const std::vector<std::uint8_t>& mask,
                                DropoutStream& drop) {
    const std::size_t t = x->rows();
    if (mask.size() != t) {
        throw std::invalid_argument("self_attention: mask length " + std::to_string(mask.size()) +
                                    " vs sequence length " + std::to_string(t));
    }
    if (count_real(mask) == 0) {
        throw std::invalid_argument("self_attention: all positions are masked");
    }
    const std::size_t d = config.d_model;
    const std::size_t n_heads = config.n_heads;
    const std::size_t d_head = d / n_heads;

    auto q = g.add_rows(g.matmul(x, layer.wq), layer.bq);
    auto k = g.add_rows(g.matmul(x, layer.wk), layer.bk);
    auto v = g.add_rows(g.matmul(x, layer.wv), layer.bv);
    auto mask_bias = build_mask_bias(mask);

    std::vector<ad::TensorPtr> head_outputs, head_weights;
    head_outputs.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        auto qh = g.slice_cols(q, h * d_head, d_head);
        auto kh = g.slice_cols(k, h * d_head, d_head);
        auto vh = g.slice_cols(v, h * d_head, d_head);
        auto scores = g.scale(g.matmul(qh, g.transpose(kh)),
                              1.0 / std::sqrt(static_cast<double>(d_head)));
        if (mask_bias) scores = g.add(scores, mask_bias);
        auto weights = g.softmax(scores);
        head_weights.push_back(weights);
        head_outputs.push_back(g.matmul(weights, vh));
    }
    auto merged = n_heads == 1 ? head_outputs[0] : g.concat_cols(head_outputs);
    auto projected = drop.apply(g, g.add_rows(g.matmul(merged, layer.wo), layer.bo));
    auto out = g.layer_norm(g.add(x, projected), layer.ln1_gain, layer.ln1_bias, kLayerNormEps);
    return {out, std::move(head_weights)};
}

ad::TensorPtr feed_forward_block(ad::Graph& g, const ad::TensorPtr& x, const LayerParams& layer,
                                 DropoutStream& drop) {
    auto hidden = g.relu(g.add_rows(g.matmul(x, layer.ff_w1), layer.ff_b1));
    auto out = drop.apply(g, g.add_rows(g.matmul(hidden, layer.ff_w2), layer.ff_b2));
    return g.layer_norm(g.add(x, out), layer.ln2_gain, layer.ln2_bias, kLayerNormEps);
}

DropoutStream make_dropout(const EncoderParams& params, std::optional<std::uint64_t> seed) {
    DropoutStream d{params.config.dropout_rate, seed.value_or(0), 0, seed.has_value()};
    return d;
}

}  // namespace

AttentionDetail self_attention_detailed(ad::Graph& g, const ad::TensorPtr& x,
                                        const LayerParams& layer, const EncoderConfig& config,
                                        const std::vector<std::uint8_t>& mask) {
    DropoutStream drop{0.0, 0, 0, false};
    return attention_block(g, x, layer, config, mask, drop);
}

ad::TensorPtr self_attention(ad::Graph& g, const ad::TensorPtr& x, const LayerParams& layer,
                             const EncoderConfig& config, const std::vector<std::uint8_t>& mask) {
    return self_attention_detailed(g, x, layer, config, mask).output;
}

ad::TensorPtr encode_states(ad::Graph& g, const EncoderParams& params, const EncodedExample& ex,
                            std::size_t n_layers_done, std::optional<std::uint64_t> dropout_seed) {
    const auto& config = params.config;
    const std::size_t t = ex.ids.size();
    if (t == 0) throw std::invalid_argument("encode: empty sequence");
    if (t > config.max_len) {
        throw std::invalid_argument("encode: sequence length " + std::to_string(t) +
                                    " exceeds max_len " + std::to_string(config.max_len));
    }
    for (auto id : ex.ids) {
        if (id >= config.vocab_size) {
            throw std::invalid_argument("encode: token id " + std::to_string(id) +
                                        " out of range [0, " + std::to_string(config.vocab_size) + ")");
        }
    }
    if (count_real(ex.mask) == 0) throw std::invalid_argument("encode: mask marks no real token");

    std::vector<std::size_t> positions(t);
    for (std::size_t i = 0; i < t; ++i) positions[i] = i;

    auto drop = make_dropout(params, dropout_seed);
    auto x = g.add(g.gather_rows(params.token_embedding, ex.ids),
                   g.gather_rows(params.position_embedding, positions));
    for (std::size_t l = 0; l < std::min(n_layers_done, config.n_layers); ++l) {
        x = attention_block(g, x, params.layers[l], config, ex.mask, drop).output;
        x = feed_forward_block(g, x, params.layers[l], drop);
    }
    return x;
}

ad::TensorPtr encode_from_states(ad::Graph& g, const EncoderParams& params,
                                 const ad::TensorPtr& states, const EncodedExample& ex,
                                 std::size_t first_layer, std::optional<std::uint64_t> dropout_seed) {
    const auto& config = params.config;
    auto drop = make_dropout(params, dropout_seed);
    auto x = states;
    for (std::size_t l = first_layer; l < config.n_layers; ++l) {
        x = attention_block(g, x, params.layers[l], config, ex.mask, drop).output;
        x = feed_forward_block(g, x, params.layers[l], drop);
    }
    // masked mean pooling over real tokens
    const std::size_t t = x->rows();
    const std::size_t n_real = count_real(ex.mask);
    auto pool = ad::zeros({1, t});
    for (std::size_t i = 0; i < t; ++i) {
        pool->data[i] = ex.mask[i] ? 1.0 / static_cast<double>(n_real) : 0.0;
    }
    return g.matmul(pool, x);
}

ad::TensorPtr encode(ad::Graph& g, const EncoderParams& params, const EncodedExample& ex,
                     std::optional<std::uint64_t> dropout_seed) {
    auto states = encode_states(g, params, ex, 0, dropout_seed);
    return encode_from_states(g, params, states, ex, 0, dropout_seed);
}

ad::Tensor hidden_states_value(const EncoderParams& params, const EncodedExample& ex,
                               std::size_t n_layers_done) {
    ad::Graph g;
    auto states = encode_states(g, params, ex, n_layers_done);
    return ad::Tensor(states->shape, states->data, false);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const EncoderParams& params) {
    nlohmann::json j;
    j["format"] = "fewshot-checkpoint-v1";
    j["config"] = {{"vocab_size", params.config.vocab_size},
                   {"d_model", params.config.d_model},
                   {"n_heads", params.config.n_heads},
                   {"n_layers", params.config.n_layers},
                   {"d_ff", params.config.d_ff},
                   {"max_len", params.config.max_len},
                   {"dropout_rate", params.config.dropout_rate},
                   {"preset_name", params.config.preset_name}};
    nlohmann::json flat = nlohmann::json::object();
    for (const auto& [name, t] : params.named()) flat[name] = t->data;
    j["params"] = std::move(flat);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write checkpoint: " + path);
    out << j.dump() << "\n";
}

EncoderParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot read checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("malformed checkpoint JSON in " + path + ": " + e.what());
    }
    if (j.value("format", "") != "fewshot-checkpoint-v1") {
        throw data_error("unrecognized checkpoint format in " + path);
    }
    EncoderConfig c;
    const auto& jc = j.at("config");
    c.vocab_size = jc.at("vocab_size").get<std::size_t>();
    c.d_model = jc.at("d_model").get<std::size_t>();
    c.n_heads = jc.at("n_heads").get<std::size_t>();
    c.n_layers = jc.at("n_layers").get<std::size_t>();
    c.d_ff = jc.at("d_ff").get<std::size_t>();
    c.max_len = jc.at("max_len").get<std::size_t>();
    c.dropout_rate = jc.at("dropout_rate").get<double>();
    c.preset_name = jc.at("preset_name").get<std::string>();
    c.validate();

    EncoderParams p = init_encoder(c, 0);
    const auto& flat = j.at("params");
    for (auto& [name, t] : p.named()) {
        if (!flat.contains(name)) throw data_error("checkpoint missing parameter \"" + name + "\"");
        const auto values = flat.at(name).get<std::vector<double>>();
        if (values.size() != t->numel()) {
            throw data_error("checkpoint parameter \"" + name + "\" has " +
                             std::to_string(values.size()) + " values, expected " +
                             std::to_string(t->numel()));
        }
        t->data = values;
    }
    return p;
}

}  // namespace fewshot
