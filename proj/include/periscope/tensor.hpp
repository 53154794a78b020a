#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace periscope {

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(std::span<const std::int64_t> shape);
std::string shape_to_string(std::span<const std::int64_t> shape);

/// Dense row-major float32 tensor.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, std::vector<float> values);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t dim(std::int64_t axis) const;
};

/// Per-sample slice of a batch-major activation, in row-major order of the non-batch dims.
std::vector<float> flatten_sample(const Tensor& activation, std::int64_t sample);

/// Inverse of flatten_sample for one sample: a (1, dims...) tensor.
Tensor unflatten(std::span<const float> values, std::span<const std::int64_t> sample_dims);

}  // namespace periscope
