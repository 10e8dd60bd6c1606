#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace aerialgen {

using Rng   = std::mt19937_64;
using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float tensor. Image-like data uses [N, C, H, W].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f);
    static Tensor uniform(Shape shape, Rng& rng, float lo, float hi);

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    Tensor reshape(Shape shape) const&;
    Tensor reshape(Shape shape) &&;
    void fill(float value);

    bool all_finite() const noexcept;

private:
    Shape shape_;
    std::vector<float> data_;
};

// Throws ShapeError naming `what` when shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace aerialgen
