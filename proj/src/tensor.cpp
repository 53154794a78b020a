#include "periscope/tensor.hpp"

#include <sstream>

#include "periscope/error.hpp"

namespace periscope {

std::int64_t element_count(std::span<const std::int64_t> shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) fail(ErrorCode::shape_mismatch, "negative dimension in " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(std::span<const std::int64_t> shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(element_count(shape)), 0.f) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (element_count(shape) != static_cast<std::int64_t>(data.size()))
    fail(ErrorCode::shape_mismatch, "tensor data does not match shape " + shape_to_string(shape));
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) fail(ErrorCode::shape_mismatch, "axis out of range");
  return shape[static_cast<std::size_t>(axis)];
}

std::vector<float> flatten_sample(const Tensor& activation, std::int64_t sample) {
  if (activation.rank() < 1) fail(ErrorCode::shape_mismatch, "activation has no batch dimension");
  const std::int64_t batch = activation.shape[0];
  if (sample < 0 || sample >= batch) fail(ErrorCode::invalid_argument, "sample index outside batch");
  const std::int64_t per = batch == 0 ? 0 : activation.size() / batch;
  const auto first = activation.data.begin() + sample * per;
  return {first, first + per};
}

Tensor unflatten(std::span<const float> values, std::span<const std::int64_t> sample_dims) {
  Shape shape{1};
  shape.insert(shape.end(), sample_dims.begin(), sample_dims.end());
  return Tensor(std::move(shape), std::vector<float>(values.begin(), values.end()));
}

}  // namespace periscope
