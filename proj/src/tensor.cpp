#include "fewshot/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace fewshot::ad {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return s.empty() ? 0 : n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (shape.empty() || shape.size() > 2) {
        throw std::invalid_argument("tensor rank must be 1 or 2, got shape " + shape_str(shape));
    }
    for (auto e : shape) {
        if (e == 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("shape " + shape_str(shape) + " does not match data length " +
                                    std::to_string(data.size()));
    }
    if (requires_grad) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (requires_grad) grad.assign(data.size(), 0.0);
}

void Tensor::set_requires_grad(bool rg) {
    requires_grad = rg;
    if (rg) {
        grad.assign(data.size(), 0.0);
    } else {
        grad.clear();
    }
}

TensorPtr tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
}

TensorPtr zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return tensor(std::move(shape), std::move(d), requires_grad);
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
    std::vector<double> d(shape_numel(shape), value);
    return tensor(std::move(shape), std::move(d), requires_grad);
}

TensorPtr scalar(double value) { return tensor({1}, {value}); }

TensorPtr clone(const TensorPtr& t, bool requires_grad) {
    return tensor(t->shape, t->data, requires_grad);
}

}  // namespace fewshot::ad
