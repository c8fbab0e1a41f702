#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace metaprune::tensorcore {

#ifdef METAPRUNE_FLOAT32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major array with an optional same-shape gradient buffer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, real fill = 0);
    Tensor(Shape shape, std::vector<real> values);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const;
    std::size_t size() const { return values_.size(); }

    std::span<real> values() { return values_; }
    std::span<const real> values() const { return values_; }
    real* data() { return values_.data(); }
    const real* data() const { return values_.data(); }
    real& operator[](std::size_t i) { return values_[i]; }
    real operator[](std::size_t i) const { return values_[i]; }

    bool has_grad() const { return !grad_.empty() || values_.empty(); }
    void ensure_grad();
    void zero_grad();
    void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }
    std::span<real> grad() { return grad_; }
    std::span<const real> grad() const { return grad_; }

    /// Same element count, new dimensions.
    void reshape(Shape shape);

private:
    Shape shape_;
    std::vector<real> values_;
    std::vector<real> grad_;
};

}  // namespace metaprune::tensorcore
