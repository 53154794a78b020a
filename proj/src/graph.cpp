#include "graph.hpp"

#include <algorithm>
#include <cstring>
#include <queue>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include "onnx.pb.h"
#include "periscope/error.hpp"

namespace periscope::detail {

std::int64_t Node::attr_int(const std::string& key, std::int64_t fallback) const {
  const auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (const auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  fail(ErrorCode::malformed_graph, describe() + ": attribute " + key + " is not an int");
}

float Node::attr_float(const std::string& key, float fallback) const {
  const auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (const auto* v = std::get_if<float>(&it->second)) return *v;
  if (const auto* v = std::get_if<std::int64_t>(&it->second)) return static_cast<float>(*v);
  fail(ErrorCode::malformed_graph, describe() + ": attribute " + key + " is not a float");
}

std::string Node::attr_string(const std::string& key, const std::string& fallback) const {
  const auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
  fail(ErrorCode::malformed_graph, describe() + ": attribute " + key + " is not a string");
}

std::vector<std::int64_t> Node::attr_ints(const std::string& key, std::vector<std::int64_t> fallback) const {
  const auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (const auto* v = std::get_if<std::vector<std::int64_t>>(&it->second)) return *v;
  fail(ErrorCode::malformed_graph, describe() + ": attribute " + key + " is not an int list");
}

std::string Node::describe() const {
  return op_type + " node '" + (name.empty() ? (outputs.empty() ? std::string("?") : outputs.front()) : name) + "'";
}

const Tap& Graph::tap(const LayerRef& ref) const {
  if (const auto* index = std::get_if<int>(&ref)) {
    if (*index < 1 || *index > static_cast<int>(taps.size()))
      fail(ErrorCode::layer_not_found, "layer index " + std::to_string(*index) + " not in 1.." + std::to_string(taps.size()));
    return taps[static_cast<std::size_t>(*index - 1)];
  }
  const auto& name = std::get<std::string>(ref);
  for (const auto& t : taps)
    if (t.name == name || t.value == name) return t;
  fail(ErrorCode::layer_not_found, "no layer named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Tensor decoding

namespace {

template <typename T>
std::vector<T> raw_values(const onnx::TensorProto& proto, std::size_t count) {
  const std::string& raw = proto.raw_data();
  if (raw.size() != count * sizeof(T))
    fail(ErrorCode::malformed_graph, "initializer '" + proto.name() + "' raw_data size mismatch");
  std::vector<T> out(count);
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

Shape proto_dims(const onnx::TensorProto& proto) {
  Shape dims(proto.dims().begin(), proto.dims().end());
  for (auto d : dims)
    if (d < 0) fail(ErrorCode::malformed_graph, "initializer '" + proto.name() + "' has a negative dim");
  return dims;
}

}  // namespace

Tensor tensor_from_proto(const onnx::TensorProto& proto) {
  if (proto.data_location() == onnx::TensorProto::EXTERNAL)
    fail(ErrorCode::malformed_graph, "external tensor data is not supported ('" + proto.name() + "')");
  Shape dims = proto_dims(proto);
  const auto count = static_cast<std::size_t>(element_count(dims));
  std::vector<float> values;
  switch (proto.data_type()) {
    case onnx::TensorProto::FLOAT:
      if (proto.has_raw_data()) values = raw_values<float>(proto, count);
      else values.assign(proto.float_data().begin(), proto.float_data().end());
      break;
    case onnx::TensorProto::DOUBLE: {
      std::vector<double> d = proto.has_raw_data() ? raw_values<double>(proto, count)
                                                   : std::vector<double>(proto.double_data().begin(), proto.double_data().end());
      values.assign(d.begin(), d.end());
      break;
    }
    case onnx::TensorProto::INT64:
    case onnx::TensorProto::INT32: {
      for (auto v : ints_from_proto(proto)) values.push_back(static_cast<float>(v));
      break;
    }
    default:
      fail(ErrorCode::unsupported_operator,
           "initializer '" + proto.name() + "' has unsupported data type " + std::to_string(proto.data_type()));
  }
  if (values.size() != count) fail(ErrorCode::malformed_graph, "initializer '" + proto.name() + "' size mismatch");
  return Tensor(std::move(dims), std::move(values));
}

std::vector<std::int64_t> ints_from_proto(const onnx::TensorProto& proto) {
  const auto count = static_cast<std::size_t>(element_count(proto_dims(proto)));
  if (proto.data_type() == onnx::TensorProto::INT64) {
    if (proto.has_raw_data()) return raw_values<std::int64_t>(proto, count);
    return {proto.int64_data().begin(), proto.int64_data().end()};
  }
  if (proto.data_type() == onnx::TensorProto::INT32) {
    std::vector<std::int32_t> v = proto.has_raw_data() ? raw_values<std::int32_t>(proto, count)
                                                       : std::vector<std::int32_t>(proto.int32_data().begin(), proto.int32_data().end());
    return {v.begin(), v.end()};
  }
  fail(ErrorCode::malformed_graph, "tensor '" + proto.name() + "' is not integral");
}

// ---------------------------------------------------------------------------
// Graph construction

namespace {

Attribute decode_attribute(const onnx::AttributeProto& a) {
  switch (a.type()) {
    case onnx::AttributeProto::INT: return static_cast<std::int64_t>(a.i());
    case onnx::AttributeProto::FLOAT: return a.f();
    case onnx::AttributeProto::STRING: return a.s();
    case onnx::AttributeProto::INTS: return std::vector<std::int64_t>(a.ints().begin(), a.ints().end());
    case onnx::AttributeProto::FLOATS: return std::vector<float>(a.floats().begin(), a.floats().end());
    case onnx::AttributeProto::TENSOR: return tensor_from_proto(a.t());
    default: fail(ErrorCode::unsupported_operator, "attribute '" + a.name() + "' has an unsupported type");
  }
}

std::string metadata(const onnx::ModelProto& model, const std::string& key) {
  for (const auto& p : model.metadata_props())
    if (p.key() == key) return p.value();
  return {};
}

// Kahn's algorithm, keeping file order among ready nodes.
std::vector<Node> topological(std::vector<Node> nodes, const std::unordered_set<std::string>& available) {
  std::unordered_map<std::string, std::size_t> producer;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (const auto& out : nodes[i].outputs) {
      if (out.empty()) continue;
      if (available.count(out) || !producer.emplace(out, i).second)
        fail(ErrorCode::malformed_graph, "value '" + out + "' is produced more than once");
    }
  std::vector<std::size_t> pending(nodes.size(), 0);
  std::vector<std::vector<std::size_t>> consumers(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i].inputs) {
      if (in.empty() || available.count(in)) continue;
      const auto it = producer.find(in);
      if (it == producer.end()) fail(ErrorCode::malformed_graph, nodes[i].describe() + " reads undefined value '" + in + "'");
      ++pending[i];
      consumers[it->second].push_back(i);
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (pending[i] == 0) ready.push(i);
  std::vector<Node> order;
  order.reserve(nodes.size());
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    for (auto c : consumers[i])
      if (--pending[c] == 0) ready.push(c);
    order.push_back(std::move(nodes[i]));
  }
  if (order.size() != nodes.size()) fail(ErrorCode::malformed_graph, "graph contains a cycle");
  return order;
}

}  // namespace

Graph build_graph(const onnx::ModelProto& model, const std::string& fallback_model_id) {
  if (!model.has_graph()) fail(ErrorCode::malformed_graph, "model has no graph");
  const onnx::GraphProto& g = model.graph();

  std::int64_t opset = 0;
  for (const auto& o : model.opset_import())
    if (o.domain().empty() || o.domain() == "ai.onnx") opset = o.version();
  if (opset == 0) fail(ErrorCode::malformed_graph, "model declares no default-domain opset");

  Graph graph;
  std::unordered_set<std::string> available;
  for (const auto& init : g.initializer()) {
    if (init.data_type() == onnx::TensorProto::INT64 || init.data_type() == onnx::TensorProto::INT32)
      graph.int_constants[init.name()] = ints_from_proto(init);
    graph.constants[init.name()] = tensor_from_proto(init);
    available.insert(init.name());
  }

  for (const auto& in : g.input()) {
    if (available.count(in.name())) continue;  // initializer re-listed as input
    if (!graph.input_name.empty()) fail(ErrorCode::unsupported_operator, "graphs with more than one data input are not supported");
    graph.input_name = in.name();
    const auto& type = in.type();
    if (!type.has_tensor_type() || !type.tensor_type().has_shape())
      fail(ErrorCode::malformed_graph, "input '" + in.name() + "' has no static shape");
    for (int d = 0; d < type.tensor_type().shape().dim_size(); ++d) {
      const auto& dim = type.tensor_type().shape().dim(d);
      graph.input_shape.push_back(dim.has_dim_value() && dim.dim_value() > 0 ? dim.dim_value() : -1);
    }
  }
  if (graph.input_name.empty()) fail(ErrorCode::malformed_graph, "graph has no data input");
  if (graph.input_shape.size() != 4) fail(ErrorCode::unsupported_operator, "expected a rank-4 image input");
  for (std::size_t d = 1; d < 4; ++d)
    if (graph.input_shape[d] <= 0) fail(ErrorCode::malformed_graph, "input has a dynamic non-batch dimension");
  available.insert(graph.input_name);

  std::vector<Node> nodes;
  for (const auto& np : g.node()) {
    if (!np.domain().empty() && np.domain() != "ai.onnx")
      fail(ErrorCode::unsupported_operator, "custom-domain operator " + np.domain() + "::" + np.op_type());
    Node node;
    node.op_type = np.op_type();
    node.name = np.name();
    node.inputs.assign(np.input().begin(), np.input().end());
    node.outputs.assign(np.output().begin(), np.output().end());
    node.opset = opset;
    for (const auto& a : np.attribute()) node.attributes.emplace(a.name(), decode_attribute(a));
    if (node.op_type == "Constant") {
      if (node.outputs.size() != 1 || !node.has("value"))
        fail(ErrorCode::unsupported_operator, node.describe() + ": only tensor-valued Constant nodes are supported");
      const auto& attr = std::find_if(np.attribute().begin(), np.attribute().end(),
                                      [](const auto& a) { return a.name() == "value"; });
      if (attr->t().data_type() == onnx::TensorProto::INT64 || attr->t().data_type() == onnx::TensorProto::INT32)
        graph.int_constants[node.outputs[0]] = ints_from_proto(attr->t());
      graph.constants[node.outputs[0]] = std::get<Tensor>(node.attributes.at("value"));
      available.insert(node.outputs[0]);
      continue;
    }
    nodes.push_back(std::move(node));
  }
  graph.nodes = topological(std::move(nodes), available);

  // Shape inference at batch size 1.
  Shape in_shape = graph.input_shape;
  in_shape[0] = 1;
  graph.shapes[graph.input_name] = in_shape;
  for (const auto& [name, t] : graph.constants) graph.shapes[name] = t.shape;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const Node& node = graph.nodes[i];
    std::vector<Shape> in_shapes;
    for (const auto& in : node.inputs) in_shapes.push_back(in.empty() ? Shape{} : graph.shapes.at(in));
    const auto out_shapes = infer_shapes(node, in_shapes, graph);
    for (std::size_t k = 0; k < node.outputs.size(); ++k) {
      if (node.outputs[k].empty()) continue;
      if (k >= out_shapes.size()) {
        // Auxiliary outputs (Dropout mask, MaxPool indices) are not computed.
        graph.shapes[node.outputs[k]] = Shape{};
        continue;
      }
      graph.shapes[node.outputs[k]] = out_shapes[k];
      graph.producer[node.outputs[k]] = i;
    }
  }
  for (std::size_t i = 0; i < graph.nodes.size(); ++i)
    for (std::size_t k = 1; k < graph.nodes[i].outputs.size(); ++k)
      for (const auto& other : graph.nodes)
        if (!graph.nodes[i].outputs[k].empty() &&
            std::find(other.inputs.begin(), other.inputs.end(), graph.nodes[i].outputs[k]) != other.inputs.end())
          fail(ErrorCode::unsupported_operator, graph.nodes[i].describe() + ": auxiliary outputs are not supported");

  // Tap enumeration.
  static const std::regex tap_pattern(R"(^tap/([0-9]+)/(.+)$)");
  for (const auto& [value, node_index] : graph.producer) {
    std::smatch m;
    if (!std::regex_match(value, m, tap_pattern)) continue;
    graph.taps.push_back({std::stoi(m[1].str()), m[2].str(), value, node_index});
  }
  std::sort(graph.taps.begin(), graph.taps.end(), [](const Tap& a, const Tap& b) { return a.index < b.index; });
  if (graph.taps.empty()) fail(ErrorCode::malformed_graph, "graph has no tap/<index>/<name> outputs");
  for (std::size_t i = 0; i < graph.taps.size(); ++i) {
    if (graph.taps[i].index != static_cast<int>(i + 1))
      fail(ErrorCode::malformed_graph, "tap indices are not contiguous from 1 (found " + std::to_string(graph.taps[i].index) + ")");
    if (i > 0 && graph.taps[i].node < graph.taps[i - 1].node)
      fail(ErrorCode::malformed_graph, "tap " + std::to_string(graph.taps[i].index) + " precedes its predecessor in execution order");
  }

  LayerManifest& man = graph.manifest;
  man.model_id = metadata(model, "model_id");
  if (man.model_id.empty()) man.model_id = g.name().empty() ? fallback_model_id : g.name();
  man.input_layout = metadata(model, "input_layout").empty() ? "NCHW" : metadata(model, "input_layout");
  if (man.input_layout == "NCHW") {
    man.input_channels = static_cast<int>(graph.input_shape[1]);
    man.input_height = static_cast<int>(graph.input_shape[2]);
    man.input_width = static_cast<int>(graph.input_shape[3]);
  } else if (man.input_layout == "NHWC") {
    man.input_height = static_cast<int>(graph.input_shape[1]);
    man.input_width = static_cast<int>(graph.input_shape[2]);
    man.input_channels = static_cast<int>(graph.input_shape[3]);
  } else {
    fail(ErrorCode::malformed_graph, "unknown input_layout '" + man.input_layout + "'");
  }
  try {
    if (const auto s = metadata(model, "input_scale"); !s.empty()) man.input_scale = std::stod(s);
    if (const auto s = metadata(model, "input_offset"); !s.empty()) man.input_offset = std::stod(s);
  } catch (const std::exception&) {
    fail(ErrorCode::malformed_graph, "bad input_scale/input_offset metadata");
  }
  for (const auto& t : graph.taps) {
    const Shape& s = graph.shapes.at(t.value);
    if (s.empty()) fail(ErrorCode::malformed_graph, "tap '" + t.value + "' has no batch dimension");
    man.layers.push_back({t.index, t.name, Shape(s.begin() + 1, s.end())});
  }
  return graph;
}

// ---------------------------------------------------------------------------
// Execution

std::unordered_map<std::string, Tensor> execute(const Graph& graph, const Tensor& input,
                                                std::span<const std::string> wanted, bool run_all) {
  if (input.rank() != 4) fail(ErrorCode::shape_mismatch, "input must be rank 4");
  for (std::size_t d = 1; d < 4; ++d)
    if (input.shape[d] != graph.input_shape[d])
      fail(ErrorCode::shape_mismatch, "input " + shape_to_string(input.shape) + " does not match graph input " +
                                          shape_to_string(graph.input_shape));

  const std::unordered_set<std::string> keep(wanted.begin(), wanted.end());
  std::vector<bool> needed(graph.nodes.size(), run_all);
  if (!run_all) {
    std::vector<std::string> stack(wanted.begin(), wanted.end());
    std::unordered_set<std::string> seen;
    while (!stack.empty()) {
      const std::string v = std::move(stack.back());
      stack.pop_back();
      if (!seen.insert(v).second) continue;
      const auto it = graph.producer.find(v);
      if (it == graph.producer.end()) continue;
      needed[it->second] = true;
      for (const auto& in : graph.nodes[it->second].inputs)
        if (!in.empty()) stack.push_back(in);
    }
  }

  std::unordered_map<std::string, std::size_t> uses;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i)
    if (needed[i])
      for (const auto& in : graph.nodes[i].inputs)
        if (!in.empty()) ++uses[in];

  std::unordered_map<std::string, Tensor> values;
  values.emplace(graph.input_name, input);
  std::unordered_map<std::string, Tensor> result;
  if (keep.count(graph.input_name)) result.emplace(graph.input_name, input);

  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (!needed[i]) continue;
    const Node& node = graph.nodes[i];
    std::vector<const Tensor*> args;
    args.reserve(node.inputs.size());
    for (const auto& in : node.inputs) {
      if (in.empty()) {
        args.push_back(nullptr);
        continue;
      }
      if (const auto c = graph.constants.find(in); c != graph.constants.end()) {
        args.push_back(&c->second);
        continue;
      }
      const auto it = values.find(in);
      if (it == values.end()) fail(ErrorCode::malformed_graph, node.describe() + ": value '" + in + "' not computed");
      args.push_back(&it->second);
    }
    auto outputs = run_node(node, args, graph);
    for (const auto& in : node.inputs) {
      if (in.empty() || graph.constants.count(in)) continue;
      if (--uses[in] == 0) values.erase(in);
    }
    for (std::size_t k = 0; k < outputs.size() && k < node.outputs.size(); ++k) {
      const std::string& name = node.outputs[k];
      if (name.empty()) continue;
      if (keep.count(name)) result[name] = outputs[k];
      if (uses[name] > 0) values[name] = std::move(outputs[k]);
    }
  }
  for (const auto& w : wanted)
    if (!result.count(w)) fail(ErrorCode::layer_not_found, "value '" + w + "' was not produced");
  return result;
}

}  // namespace periscope::detail
