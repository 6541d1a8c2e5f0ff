#include <algorithm>
#include <cmath>

#include "fewshot/commands.hpp"
#include "fewshot/eval_harness.hpp"

namespace fewshot::cli {

namespace {

constexpr double kTol = 1e-4;

ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> data(ad::shape_numel(shape));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return ad::Tensor(std::move(shape), std::move(data));
}

std::vector<std::size_t> two_class_labels(std::size_t n, Rng& rng) {
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < n / 2 ? 0 : 1;
    rng.shuffle(labels);
    return labels;
}

GradCheckRow check_cross_entropy(std::uint64_t seed, std::size_t trials) {
    GradCheckRow row{"cross_entropy", trials, 0.0, kTol};
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t bsz = 2 + rng.below(5), n_classes = 2 + rng.below(5);
        std::vector<std::size_t> labels(bsz);
        for (auto& l : labels) l = rng.below(n_classes);
        auto logits = random_tensor({bsz, n_classes}, rng, -2.0, 2.0);
        const double err = ad::grad_check(
            [&labels](ad::Graph& g, const std::vector<ad::TensorPtr>& xs) {
                return cross_entropy(g, xs[0], labels);
            },
            {logits});
        row.max_error = std::max(row.max_error, err);
    }
    return row;
}

GradCheckRow check_l2(std::uint64_t seed, std::size_t trials) {
    GradCheckRow row{"l2_regularization", trials, 0.0, kTol};
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        auto a = random_tensor({2 + rng.below(4), 2 + rng.below(4)}, rng, -2.0, 2.0);
        auto b = random_tensor({1 + rng.below(6)}, rng, -2.0, 2.0);
        const double err = ad::grad_check(
            [](ad::Graph& g, const std::vector<ad::TensorPtr>& xs) {
                return l2_regularization(g, xs);
            },
            {a, b});
        row.max_error = std::max(row.max_error, err);
    }
    return row;
}

GradCheckRow check_contrastive(std::uint64_t seed, std::size_t trials,
                               ContrastiveNumerator numerator) {
    GradCheckRow row{std::string("contrastive_loss/") + to_string(numerator), trials, 0.0, kTol};
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t bsz = 4 + rng.below(4), d = 3 + rng.below(5);
        const auto labels = two_class_labels(bsz, rng);
        auto emb = random_tensor({bsz, d}, rng, -1.0, 1.0);
        // keep rows away from zero norm
        for (std::size_t i = 0; i < bsz; ++i) emb.data[i * d] += emb.data[i * d] < 0 ? -0.5 : 0.5;
        const double err = ad::grad_check(
            [&labels, numerator](ad::Graph& g, const std::vector<ad::TensorPtr>& xs) {
                return contrastive_loss(g, xs[0], labels, 0.1, numerator).loss;
            },
            {emb});
        row.max_error = std::max(row.max_error, err);
    }
    return row;
}

EncoderParams bind_encoder(const EncoderConfig& config, const std::vector<ad::TensorPtr>& leaves) {
    // leaf order mirrors EncoderParams::all()
    std::size_t i = 0;
    EncoderParams p;
    p.config = config;
    p.token_embedding = leaves[i++];
    p.position_embedding = leaves[i++];
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        LayerParams lp;
        lp.wq = leaves[i++]; lp.bq = leaves[i++];
        lp.wk = leaves[i++]; lp.bk = leaves[i++];
        lp.wv = leaves[i++]; lp.bv = leaves[i++];
        lp.wo = leaves[i++]; lp.bo = leaves[i++];
        lp.ff_w1 = leaves[i++]; lp.ff_b1 = leaves[i++];
        lp.ff_w2 = leaves[i++]; lp.ff_b2 = leaves[i++];
        lp.ln1_gain = leaves[i++]; lp.ln1_bias = leaves[i++];
        lp.ln2_gain = leaves[i++]; lp.ln2_bias = leaves[i++];
        p.layers.push_back(std::move(lp));
    }
    return p;
}

GradCheckRow check_encoder_total_loss(std::uint64_t seed, std::size_t trials) {
    GradCheckRow row{"encoder_total_loss(2-layer,d=16)", trials, 0.0, kTol};

    EncoderConfig config;
    config.vocab_size = 20;
    config.d_model = 16;
    config.n_heads = 2;
    config.n_layers = 2;
    config.d_ff = 32;
    config.max_len = 12;
    config.preset_name = "gradcheck";
    config.validate();

    LossWeights weights;
    weights.lambda_reg = 0.05;
    weights.beta = 0.5;
    weights.tau = 0.1;

    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const auto params = init_encoder(config, rng.next_u64());

        // small batch with markers in random places
        const std::size_t bsz = 4;
        std::vector<EncodedExample> batch;
        std::vector<std::size_t> labels = two_class_labels(bsz, rng);
        for (std::size_t b = 0; b < bsz; ++b) {
            Example ex;
            const std::size_t len = 4 + rng.below(4);
            for (std::size_t i = 0; i < len; ++i) {
                ex.tokens.push_back(kNumSpecials + rng.below(config.vocab_size - kNumSpecials));
            }
            const std::size_t head = rng.below(len);
            std::size_t tail = rng.below(len - 1);
            if (tail >= head) ++tail;
            ex.head_span = {head, head};
            ex.tail_span = {tail, tail};
            batch.push_back(encode_tokens(ex, SpecialIds{}, len + 4));
        }

        std::vector<ad::Tensor> inputs;
        for (const auto& p : params.all()) inputs.emplace_back(p->shape, p->data);
        inputs.push_back(random_tensor({config.d_model, 2}, rng, -0.3, 0.3));  // head weight
        inputs.push_back(random_tensor({2}, rng, -0.3, 0.3));                  // head bias

        ad::GradCheckOptions opts;
        opts.max_coords_per_tensor = 2;
        opts.coord_seed = rng.next_u64();
        // The deep composition is sharply curved in rare trials (layer-norm
        // eps is 1e-5 and the 1/tau exponentials are steep); at h=1e-5 the
        // central-difference truncation error alone can exceed the tolerance.
        // h=1e-6 keeps the probe an order below the layer-norm eps scale.
        opts.step = 1e-6;

        const double err = ad::grad_check(
            [&](ad::Graph& g, const std::vector<ad::TensorPtr>& leaves) {
                const std::size_t n_param = leaves.size() - 2;
                std::vector<ad::TensorPtr> enc_leaves(leaves.begin(), leaves.begin() + n_param);
                auto p = bind_encoder(config, enc_leaves);
                std::vector<ad::TensorPtr> hs;
                for (const auto& e : batch) hs.push_back(encode(g, p, e));
                auto h = g.concat_rows(hs);
                auto logits = g.add_rows(g.matmul(h, leaves[n_param]), leaves[n_param + 1]);
                auto ce = cross_entropy(g, logits, labels);
                auto reg = l2_regularization(g, std::vector<ad::TensorPtr>(leaves.begin(), leaves.end()));
                auto cl = contrastive_loss(g, h, labels, weights.tau, weights.numerator);
                return total_loss(g, ce, reg, cl.loss, weights, cl.n_anchors_used).total;
            },
            inputs, opts);
        row.max_error = std::max(row.max_error, err);
    }
    return row;
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, std::size_t trials) {
    std::vector<GradCheckRow> rows;
    rows.push_back(check_cross_entropy(derive_seed(seed, 1), trials));
    rows.push_back(check_l2(derive_seed(seed, 2), trials));
    rows.push_back(check_contrastive(derive_seed(seed, 3), trials, ContrastiveNumerator::positives));
    rows.push_back(check_contrastive(derive_seed(seed, 4), trials, ContrastiveNumerator::literal));
    rows.push_back(check_encoder_total_loss(derive_seed(seed, 5), trials));
    return rows;
}

}  // namespace fewshot::cli
