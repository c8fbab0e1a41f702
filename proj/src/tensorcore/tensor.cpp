#include "metaprune/tensorcore/tensor.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>

namespace metaprune::tensorcore {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError(fmt::format("negative dimension in {}", shape_string(shape)));
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, ", "));
}

Tensor::Tensor(Shape shape, real fill)
    : shape_(std::move(shape)), values_(static_cast<std::size_t>(numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<real> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (static_cast<std::int64_t>(values_.size()) != numel(shape_)) {
        throw ShapeError(fmt::format("tensor of shape {} needs {} values, got {}", shape_string(shape_),
                                     numel(shape_), values_.size()));
    }
}

std::int64_t Tensor::dim(int i) const {
    if (i < 0 || i >= rank()) throw ShapeError(fmt::format("dimension {} out of range for {}", i, shape_string(shape_)));
    return shape_[static_cast<std::size_t>(i)];
}

void Tensor::ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), real{0});
}

void Tensor::zero_grad() {
    grad_.assign(values_.size(), real{0});
}

void Tensor::reshape(Shape shape) {
    if (numel(shape) != static_cast<std::int64_t>(values_.size())) {
        throw ShapeError(fmt::format("cannot reshape {} to {}", shape_string(shape_), shape_string(shape)));
    }
    shape_ = std::move(shape);
}

}  // namespace metaprune::tensorcore
