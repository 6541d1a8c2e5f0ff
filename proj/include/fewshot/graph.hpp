#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot::ad {

/// Reverse-mode tape. Every op records one node; the tape is rebuilt each
/// forward pass, so recording order is already a topological order and one
/// backward pass visits each node exactly once, in reverse.
///
/// A Graph and its tensors are confined to one thread. Distinct graphs on
/// distinct threads never share mutable state as long as shared leaf tensors
/// have requires_grad == false (backward only writes grads of requires_grad
/// tensors and of intermediates, which are graph-local).
class Graph {
  public:
    // --- elementwise (exact-shape or scalar broadcast: either side numel 1) ---
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr div(const TensorPtr& a, const TensorPtr& b);  // divisor entries must be nonzero
    TensorPtr exp(const TensorPtr& a);                      // inputs must stay below overflow
    TensorPtr log(const TensorPtr& a);                      // inputs must be strictly positive
    TensorPtr relu(const TensorPtr& a);
    TensorPtr scale(const TensorPtr& a, double s);

    // --- linear algebra ---
    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);  // [m,k] x [k,n]
    TensorPtr transpose(const TensorPtr& a);

    // --- row-wise ---
    TensorPtr softmax(const TensorPtr& a);         // along the last axis, max-subtracted
    TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain,
                         const TensorPtr& bias, double eps);
    TensorPtr add_rows(const TensorPtr& x, const TensorPtr& b);  // [r,c] + [c] per row
    TensorPtr logsumexp_rows(const TensorPtr& x);                // [r,c] -> [r]

    // --- structure ---
    TensorPtr gather_rows(const TensorPtr& m, std::vector<std::size_t> row_ids);
    TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
    TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
    TensorPtr slice_cols(const TensorPtr& x, std::size_t start, std::size_t len);
    TensorPtr sum(const TensorPtr& a);  // full reduction -> shape {1}

    // --- fused loss kernels ---
    /// Row-wise cosine similarity matrix of [B,d] embeddings -> [B,B].
    /// Zero-norm rows are rejected (cosine undefined).
    TensorPtr cosine_similarity_matrix(const TensorPtr& embeddings);
    /// Batch-summed -log softmax(logits)[label], log-sum-exp stabilized.
    TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<std::size_t>& labels);

    /// Inverted dropout; identity (not recorded) when rate == 0.
    TensorPtr dropout(const TensorPtr& x, double rate, std::uint64_t draw_seed);

    /// Seeds d(loss)/d(loss) = 1 and walks the tape in reverse, accumulating
    /// grads additively into every requires_grad tensor reachable from loss.
    void backward(const TensorPtr& loss);

    std::size_t num_ops() const { return nodes_.size(); }

  private:
    struct Node {
        const char* kind;
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        std::function<void()> backprop;  // saved activations live in the closure
    };

    TensorPtr record(const char* kind, std::vector<TensorPtr> inputs, TensorPtr out,
                     std::function<void()> backprop);
    TensorPtr binary_elementwise(const char* kind, const TensorPtr& a, const TensorPtr& b);

    std::vector<Node> nodes_;
};

/// Scalar-valued program over a set of leaf tensors, built on a fresh graph.
using TensorProgram = std::function<TensorPtr(Graph&, const std::vector<TensorPtr>&)>;

struct GradCheckOptions {
    double step = 1e-5;                    // central-difference h, in [1e-6, 1e-4]
    std::size_t max_coords_per_tensor = 0; // 0 = check every coordinate
    std::uint64_t coord_seed = 0;          // sampling stream when subsampling
};

/// Max over checked coordinates of
///   |analytic - central_difference| / max(1, |analytic|)
/// where the central difference is (f(x + h e_i) - f(x - h e_i)) / 2h.
double grad_check(const TensorProgram& program, const std::vector<Tensor>& inputs,
                  const GradCheckOptions& opts = {});

}  // namespace fewshot::ad
