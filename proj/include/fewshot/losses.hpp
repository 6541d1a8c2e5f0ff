#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fewshot/graph.hpp"

namespace fewshot {

/// Which similarity set feeds the numerator of the contrastive log-ratio.
/// `positives` is the standard supervised contrastive form (same-category
/// samples pulled together). `literal` keeps the printed variant with the
/// different-category set in the numerator, for comparison runs.
enum class ContrastiveNumerator { positives, literal };

ContrastiveNumerator contrastive_numerator_from_string(const std::string& s);
std::string to_string(ContrastiveNumerator v);

struct LossWeights {
    double lambda_reg = 0.0;  // weight of the squared-norm term
    double beta = 0.0;        // weight of the contrastive term
    double tau = 0.1;         // similarity temperature
    ContrastiveNumerator numerator = ContrastiveNumerator::positives;

    void validate() const;  // tau > 0, lambda_reg >= 0, beta >= 0
};

struct LossBreakdown {
    double ce = 0.0;
    double reg = 0.0;  // unweighted squared parameter norm
    double cl = 0.0;
    double total = 0.0;  // ce + lambda_reg * reg + beta * cl, by construction
    std::size_t n_anchors_used = 0;
};

/// Batch-summed cross entropy of logits [B,C] against labels in [0,C).
ad::TensorPtr cross_entropy(ad::Graph& g, const ad::TensorPtr& logits,
                            const std::vector<std::size_t>& labels);

/// Unweighted sum of squared entries over all given parameter tensors.
ad::TensorPtr l2_regularization(ad::Graph& g, const std::vector<ad::TensorPtr>& params);

struct ContrastiveResult {
    ad::TensorPtr loss;           // scalar; zero tensor when no anchor is eligible
    std::size_t n_anchors_used = 0;
};

/// Supervised contrastive loss over cosine similarities scaled by 1/tau,
/// summed over anchors. Per anchor i, positives P(i) and negatives N(i)
/// exclude i itself; anchors with an empty numerator set are skipped.
ContrastiveResult contrastive_loss(ad::Graph& g, const ad::TensorPtr& embeddings,
                                   const std::vector<std::size_t>& labels, double tau,
                                   ContrastiveNumerator numerator = ContrastiveNumerator::positives);

/// Same loss, starting from a precomputed similarity matrix [B,B]. Exposed so
/// similarity-level properties (shift invariance, pair perturbations) can be
/// exercised directly.
ContrastiveResult contrastive_loss_from_similarity(ad::Graph& g, const ad::TensorPtr& sim,
                                                   const std::vector<std::size_t>& labels,
                                                   double tau, ContrastiveNumerator numerator);

struct TotalLoss {
    ad::TensorPtr total;
    LossBreakdown breakdown;
};

/// total = ce + lambda_reg * reg + beta * cl. Null component tensors are
/// treated as zero (used when a weight is zero and the term was never built).
TotalLoss total_loss(ad::Graph& g, const ad::TensorPtr& ce, const ad::TensorPtr& reg,
                     const ad::TensorPtr& cl, const LossWeights& w, std::size_t n_anchors_used = 0);

}  // namespace fewshot
