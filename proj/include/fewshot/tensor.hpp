#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace fewshot::ad {

using Shape = std::vector<std::size_t>;

/// Dense row-major tensor of 64-bit floats, rank 1 or 2.
/// When requires_grad is set, `grad` is kept allocated at the same size as
/// `data` and accumulates contributions additively across backward passes.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d, bool rg = false);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // row/col view: rank-1 tensors are treated as a single row
    std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    void zero_grad();
    void set_requires_grad(bool rg);
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double value, bool requires_grad = false);
TensorPtr scalar(double value);

/// Fresh tensor with the same shape and data, detached from any graph.
TensorPtr clone(const TensorPtr& t, bool requires_grad);

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

}  // namespace fewshot::ad
