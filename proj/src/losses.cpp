#include "fewshot/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace {
constexpr double kMaskNegative = 1e30;  // additive mask; exp underflows to exactly 0
}

ContrastiveNumerator contrastive_numerator_from_string(const std::string& s) {
    if (s == "positives") return ContrastiveNumerator::positives;
    if (s == "literal") return ContrastiveNumerator::literal;
    throw config_error("contrastive_numerator must be \"positives\" or \"literal\", got \"" + s +
                       "\"");
}

std::string to_string(ContrastiveNumerator v) {
    return v == ContrastiveNumerator::positives ? "positives" : "literal";
}

void LossWeights::validate() const {
    if (!(tau > 0.0)) throw config_error("loss tau must be positive, got " + std::to_string(tau));
    if (lambda_reg < 0.0) throw config_error("loss lambda must be nonnegative");
    if (beta < 0.0) throw config_error("loss beta must be nonnegative");
}

ad::TensorPtr cross_entropy(ad::Graph& g, const ad::TensorPtr& logits,
                            const std::vector<std::size_t>& labels) {
    if (logits->rows() < 1) throw std::invalid_argument("cross_entropy: empty batch");
    return g.cross_entropy(logits, labels);
}

ad::TensorPtr l2_regularization(ad::Graph& g, const std::vector<ad::TensorPtr>& params) {
    if (params.empty()) throw std::invalid_argument("l2_regularization: no parameters given");
    ad::TensorPtr acc;
    for (const auto& p : params) {
        auto sq = g.sum(g.mul(p, p));
        acc = acc ? g.add(acc, sq) : sq;
    }
    return acc;
}

ContrastiveResult contrastive_loss_from_similarity(ad::Graph& g, const ad::TensorPtr& sim,
                                                   const std::vector<std::size_t>& labels,
                                                   double tau, ContrastiveNumerator numerator) {
    const std::size_t bsz = labels.size();
    if (sim->rank() != 2 || sim->shape[0] != bsz || sim->shape[1] != bsz) {
        throw std::invalid_argument("contrastive_loss: similarity shape " +
                                    ad::shape_str(sim->shape) + " does not match batch " +
                                    std::to_string(bsz));
    }
    if (bsz < 2) throw std::invalid_argument("contrastive_loss: batch must hold at least 2 samples");
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");

    // additive masks select the denominator set (everything but self) and the
    // numerator set per anchor; a -1e30 entry vanishes exactly under exp
    auto den_mask = ad::zeros({bsz, bsz});
    auto num_mask = ad::zeros({bsz, bsz});
    auto eligible = ad::zeros({bsz});
    std::size_t n_used = 0;
    for (std::size_t i = 0; i < bsz; ++i) {
        std::size_t n_pos = 0, n_neg = 0;
        for (std::size_t j = 0; j < bsz; ++j) {
            const bool self = i == j;
            const bool same = labels[j] == labels[i];
            if (!self && same) ++n_pos;
            if (!self && !same) ++n_neg;
            const bool in_num = !self && (numerator == ContrastiveNumerator::positives ? same : !same);
            den_mask->data[i * bsz + j] = self ? -kMaskNegative : 0.0;
            num_mask->data[i * bsz + j] = in_num ? 0.0 : -kMaskNegative;
        }
        const bool used =
            numerator == ContrastiveNumerator::positives ? n_pos > 0 : (n_pos > 0 && n_neg > 0);
        eligible->data[i] = used ? 1.0 : 0.0;
        if (used) ++n_used;
    }

    if (n_used == 0) {
        // degenerate case (e.g. 1-shot support-only batches): defined as zero
        auto zero = g.scale(g.sum(sim), 0.0);
        return {zero, 0};
    }

    auto scaled = g.scale(sim, 1.0 / tau);
    auto den_lse = g.logsumexp_rows(g.add(scaled, den_mask));
    auto num_lse = g.logsumexp_rows(g.add(scaled, num_mask));
    auto per_anchor = g.sub(den_lse, num_lse);  // -log(num/den)
    auto loss = g.sum(g.mul(per_anchor, eligible));
    return {loss, n_used};
}

ContrastiveResult contrastive_loss(ad::Graph& g, const ad::TensorPtr& embeddings,
                                   const std::vector<std::size_t>& labels, double tau,
                                   ContrastiveNumerator numerator) {
    if (embeddings->rows() != labels.size()) {
        throw std::invalid_argument("contrastive_loss: " + std::to_string(embeddings->rows()) +
                                    " embeddings vs " + std::to_string(labels.size()) + " labels");
    }
    auto sim = g.cosine_similarity_matrix(embeddings);
    return contrastive_loss_from_similarity(g, sim, labels, tau, numerator);
}

TotalLoss total_loss(ad::Graph& g, const ad::TensorPtr& ce, const ad::TensorPtr& reg,
                     const ad::TensorPtr& cl, const LossWeights& w, std::size_t n_anchors_used) {
    w.validate();
    if (!ce) throw std::invalid_argument("total_loss: cross-entropy term is required");

    auto total = ce;
    if (reg && w.lambda_reg != 0.0) total = g.add(total, g.scale(reg, w.lambda_reg));
    if (cl && w.beta != 0.0) total = g.add(total, g.scale(cl, w.beta));

    LossBreakdown b;
    b.ce = ce->data[0];
    b.reg = reg ? reg->data[0] : 0.0;
    b.cl = cl ? cl->data[0] : 0.0;
    b.total = total->data[0];
    b.n_anchors_used = n_anchors_used;
    if (!std::isfinite(b.total)) {
        throw numeric_error("total_loss: non-finite loss (ce=" + std::to_string(b.ce) +
                            ", reg=" + std::to_string(b.reg) + ", cl=" + std::to_string(b.cl) + ")");
    }
    return {total, b};
}

}  // namespace fewshot
