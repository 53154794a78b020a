#pragma once

// Internal representation of a parsed ONNX graph and its operator kernels.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "periscope/deepfeat.hpp"
#include "periscope/tensor.hpp"

namespace onnx {
class ModelProto;
class TensorProto;
}  // namespace onnx

namespace periscope::detail {

using Attribute = std::variant<std::int64_t, float, std::string, std::vector<std::int64_t>, std::vector<float>, Tensor>;

struct Node {
  std::string op_type;
  std::string name;
  std::vector<std::string> inputs;  // "" marks an omitted optional input
  std::vector<std::string> outputs;
  std::map<std::string, Attribute> attributes;
  std::int64_t opset = 13;

  bool has(const std::string& key) const { return attributes.count(key) != 0; }
  std::int64_t attr_int(const std::string& key, std::int64_t fallback) const;
  float attr_float(const std::string& key, float fallback) const;
  std::string attr_string(const std::string& key, const std::string& fallback) const;
  std::vector<std::int64_t> attr_ints(const std::string& key, std::vector<std::int64_t> fallback = {}) const;
  std::string describe() const;
};

struct Tap {
  int index = 0;
  std::string name;
  std::string value;
  std::size_t node = 0;  // producer position in Graph::nodes
};

struct Graph {
  std::vector<Node> nodes;  // topological order
  std::unordered_map<std::string, Tensor> constants;
  // Integer view of INT32/INT64 constants (shapes, axes, pads).
  std::unordered_map<std::string, std::vector<std::int64_t>> int_constants;
  std::string input_name;
  Shape input_shape;  // batch dim as -1
  std::unordered_map<std::string, Shape> shapes;  // inferred with batch 1
  std::unordered_map<std::string, std::size_t> producer;
  std::vector<Tap> taps;
  LayerManifest manifest;

  bool is_constant(const std::string& value) const { return constants.count(value) != 0; }
  const Tap& tap(const LayerRef& ref) const;
};

Tensor tensor_from_proto(const onnx::TensorProto& proto);
std::vector<std::int64_t> ints_from_proto(const onnx::TensorProto& proto);

Graph build_graph(const onnx::ModelProto& model, const std::string& fallback_model_id);

/// Output shapes of `node` given input shapes (empty Shape for omitted inputs).
std::vector<Shape> infer_shapes(const Node& node, std::span<const Shape> inputs, const Graph& graph);

/// Evaluates `node`. Null entries mark omitted optional inputs.
std::vector<Tensor> run_node(const Node& node, std::span<const Tensor* const> inputs, const Graph& graph);

/// Runs the nodes needed for `wanted` (or all nodes) and returns the wanted values.
std::unordered_map<std::string, Tensor> execute(const Graph& graph, const Tensor& input,
                                                std::span<const std::string> wanted, bool run_all);

}  // namespace periscope::detail
