#include "periscope/deepfeat.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <google/protobuf/io/coded_stream.h>
#include <google/protobuf/io/zero_copy_stream_impl_lite.h>

#include "graph.hpp"
#include "json.hpp"
#include "onnx.pb.h"
#include "periscope/error.hpp"

namespace periscope {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// LayerManifest

const LayerInfo& LayerManifest::layer(int index) const {
  if (index < 1 || index > static_cast<int>(layers.size()))
    fail(ErrorCode::layer_not_found, "layer index " + std::to_string(index) + " not in 1.." + std::to_string(layers.size()));
  return layers[static_cast<std::size_t>(index - 1)];
}

const LayerInfo& LayerManifest::layer(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  fail(ErrorCode::layer_not_found, "no layer named '" + name + "'");
}

std::string LayerManifest::to_json() const {
  json j;
  j["model_id"] = model_id;
  j["input_shape"] = {input_height, input_width, input_channels};
  j["input_layout"] = input_layout;
  j["input_scale"] = input_scale;
  j["input_offset"] = input_offset;
  j["total_layers"] = layers.size();
  json rows = json::array();
  for (const auto& l : layers) {
    json row;
    row["index"] = l.index;
    row["name"] = l.name;
    row["output_shape"] = l.output_shape;
    rows.push_back(std::move(row));
  }
  j["layers"] = std::move(rows);
  return j.dump(1);
}

LayerManifest LayerManifest::from_json(const std::string& text) {
  LayerManifest m;
  try {
    const json j = json::parse(text);
    m.model_id = j.at("model_id").get<std::string>();
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) fail(ErrorCode::parse_error, "input_shape must be [height, width, channels]");
    m.input_height = shape[0];
    m.input_width = shape[1];
    m.input_channels = shape[2];
    m.input_layout = j.value("input_layout", "NCHW");
    m.input_scale = j.value("input_scale", 1.0);
    m.input_offset = j.value("input_offset", 0.0);
    for (const auto& row : j.at("layers"))
      m.layers.push_back({row.at("index").get<int>(), row.at("name").get<std::string>(), row.at("output_shape").get<Shape>()});
  } catch (const json::exception& e) {
    fail(ErrorCode::parse_error, std::string("layer manifest: ") + e.what());
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].index != static_cast<int>(i + 1))
      fail(ErrorCode::parse_error, "layer manifest indices must be contiguous from 1");
  return m;
}

void LayerManifest::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  out << to_json() << '\n';
}

LayerManifest LayerManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::missing_file, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

fs::path manifest_sidecar_path(const fs::path& graph_path) {
  fs::path p = graph_path;
  p.replace_extension(".manifest.json");
  return p;
}

// ---------------------------------------------------------------------------
// Loading

const detail::Graph& GraphHandle::graph() const {
  if (!graph_) fail(ErrorCode::invalid_argument, "empty graph handle");
  return *graph_;
}

namespace {

onnx::ModelProto parse_model(const std::string& bytes, const std::string& origin) {
  onnx::ModelProto model;
  if (!model.ParseFromString(bytes)) fail(ErrorCode::malformed_graph, "cannot parse ONNX model " + origin);
  return model;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_file, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

LoadedGraph finish(detail::Graph graph) {
  auto shared = std::make_shared<const detail::Graph>(std::move(graph));
  return {GraphHandle(shared), shared->manifest};
}

}  // namespace

LoadedGraph load_graph_bytes(const std::string& bytes, const std::string& fallback_model_id) {
  return finish(detail::build_graph(parse_model(bytes, fallback_model_id), fallback_model_id));
}

LoadedGraph load_graph(const fs::path& path) {
  auto loaded = finish(detail::build_graph(parse_model(read_bytes(path), path.string()), path.stem().string()));
  const fs::path sidecar = manifest_sidecar_path(path);
  if (fs::exists(sidecar)) {
    const LayerManifest declared = LayerManifest::load(sidecar);
    if (!(declared == loaded.manifest))
      fail(ErrorCode::malformed_graph, "manifest sidecar " + sidecar.string() + " disagrees with the graph");
  }
  return loaded;
}

const LayerManifest& manifest_of(const GraphHandle& handle) { return handle.graph().manifest; }

// ---------------------------------------------------------------------------
// Execution

Tensor make_input(const GraphHandle& handle, std::span<const NormalizedImage> batch) {
  const LayerManifest& m = manifest_of(handle);
  const std::int64_t n = static_cast<std::int64_t>(batch.size());
  const std::int64_t h = m.input_height, w = m.input_width, c = m.input_channels;
  const bool nchw = m.input_layout == "NCHW";
  Tensor input(nchw ? Shape{n, c, h, w} : Shape{n, h, w, c});
  const float scale = static_cast<float>(m.input_scale), offset = static_cast<float>(m.input_offset);
  for (std::int64_t s = 0; s < n; ++s) {
    const cv::Mat& px = batch[s].pixels;
    if (px.type() != CV_8UC1 || px.rows != h || px.cols != w)
      fail(ErrorCode::shape_mismatch, "image '" + batch[s].sample_id + "' is " + std::to_string(px.cols) + "x" +
                                          std::to_string(px.rows) + ", model expects " + std::to_string(w) + "x" +
                                          std::to_string(h) + " gray");
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const float v = px.at<unsigned char>(static_cast<int>(y), static_cast<int>(x)) * scale + offset;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t at = nchw ? ((s * c + ch) * h + y) * w + x : ((s * h + y) * w + x) * c + ch;
          input.data[at] = v;
        }
      }
    }
  }
  return input;
}

Tensor forward_to(const GraphHandle& handle, const Tensor& input, const LayerRef& layer) {
  const auto& graph = handle.graph();
  const std::string value = graph.tap(layer).value;
  auto out = detail::execute(graph, input, std::span(&value, 1), false);
  return std::move(out.at(value));
}

std::map<int, Tensor> forward_all(const GraphHandle& handle, const Tensor& input) {
  const auto& graph = handle.graph();
  std::vector<std::string> wanted;
  for (const auto& t : graph.taps) wanted.push_back(t.value);
  auto values = detail::execute(graph, input, wanted, true);
  std::map<int, Tensor> out;
  for (const auto& t : graph.taps) out.emplace(t.index, std::move(values.at(t.value)));
  return out;
}

std::vector<FeatureVector> extract_tap(const GraphHandle& handle, const TapRequest& request) {
  const auto& tap = handle.graph().tap(request.layer);
  if (request.batch.empty()) return {};
  const Tensor activation = forward_to(handle, make_input(handle, request.batch), tap.index);
  std::vector<FeatureVector> out;
  out.reserve(request.batch.size());
  const std::string source = "tap:" + std::to_string(tap.index);
  for (std::size_t s = 0; s < request.batch.size(); ++s)
    out.push_back({request.batch[s].sample_id, flatten_sample(activation, static_cast<std::int64_t>(s)), source});
  return out;
}

std::vector<FeatureVector> extract_tap_batched(const GraphHandle& handle, const LayerRef& layer,
                                               std::span<const NormalizedImage> images, std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorCode::invalid_argument, "batch size must be >= 1");
  std::vector<FeatureVector> out;
  out.reserve(images.size());
  for (std::size_t first = 0; first < images.size(); first += batch_size) {
    const auto chunk = images.subspan(first, std::min(batch_size, images.size() - first));
    auto part = extract_tap(handle, {layer, chunk});
    for (auto& f : part) out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weight randomization

namespace {

enum class ParamRole { none, kernel, zeros, ones };

struct Role {
  ParamRole role = ParamRole::none;
  std::int64_t fan_in = 0;
  std::int64_t fan_out = 0;
};

Role role_for(const onnx::NodeProto& node, int slot, const onnx::TensorProto& init,
              const std::unordered_map<std::string, std::string>& producer_op) {
  const std::string& op = node.op_type();
  const auto dims = std::vector<std::int64_t>(init.dims().begin(), init.dims().end());
  if (op == "Conv" && slot == 1 && dims.size() == 4) {
    const std::int64_t receptive = dims[2] * dims[3];
    return {ParamRole::kernel, dims[1] * receptive, dims[0] * receptive};
  }
  if (op == "Conv" && slot == 2) return {ParamRole::zeros};
  if (op == "Gemm" && slot == 1 && dims.size() == 2) {
    bool trans_b = false;
    for (const auto& a : node.attribute())
      if (a.name() == "transB") trans_b = a.i() != 0;
    return {ParamRole::kernel, trans_b ? dims[1] : dims[0], trans_b ? dims[0] : dims[1]};
  }
  if (op == "Gemm" && slot == 2) return {ParamRole::zeros};
  if (op == "MatMul" && slot == 1 && dims.size() == 2) return {ParamRole::kernel, dims[0], dims[1]};
  if (op == "BatchNormalization") {
    if (slot == 1 || slot == 4) return {ParamRole::ones};
    if (slot == 2 || slot == 3) return {ParamRole::zeros};
  }
  // Bias added after a MatMul or Conv.
  if (op == "Add" && (slot == 0 || slot == 1)) {
    const std::string& other = node.input(1 - slot);
    const auto it = producer_op.find(other);
    if (it != producer_op.end() && (it->second == "MatMul" || it->second == "Conv")) return {ParamRole::zeros};
  }
  return {};
}

}  // namespace

LayerManifest randomize_weights(const fs::path& path_in, const fs::path& path_out, std::uint64_t seed) {
  onnx::ModelProto model = parse_model(read_bytes(path_in), path_in.string());
  // Validates the graph before anything is written.
  const LayerManifest original = detail::build_graph(model, path_in.stem().string()).manifest;

  onnx::GraphProto* g = model.mutable_graph();
  std::unordered_map<std::string, std::string> producer_op;
  for (const auto& node : g->node())
    for (const auto& out : node.output()) producer_op[out] = node.op_type();

  for (int t = 0; t < g->initializer_size(); ++t) {
    onnx::TensorProto* init = g->mutable_initializer(t);
    if (init->data_type() != onnx::TensorProto::FLOAT) continue;
    Role role;
    for (const auto& node : g->node()) {
      for (int slot = 0; slot < node.input_size() && role.role == ParamRole::none; ++slot)
        if (node.input(slot) == init->name()) role = role_for(node, slot, *init, producer_op);
      if (role.role != ParamRole::none) break;
    }
    if (role.role == ParamRole::none) continue;

    const auto count = static_cast<std::size_t>(
        element_count(std::vector<std::int64_t>(init->dims().begin(), init->dims().end())));
    std::vector<float> values(count, role.role == ParamRole::ones ? 1.f : 0.f);
    if (role.role == ParamRole::kernel) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(t)};
      std::mt19937_64 rng(seq);
      const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::int64_t>(role.fan_in + role.fan_out, 1)));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& v : values) v = static_cast<float>(dist(rng));
    }
    init->clear_float_data();
    init->set_raw_data(std::string(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float)));
  }

  bool tagged = false;
  for (auto& p : *model.mutable_metadata_props())
    if (p.key() == "randomized_seed") {
      p.set_value(std::to_string(seed));
      tagged = true;
    }
  if (!tagged) {
    auto* p = model.add_metadata_props();
    p->set_key("randomized_seed");
    p->set_value(std::to_string(seed));
  }
  // Keep the model id of the source even when it came from the file name.
  bool has_id = false;
  for (const auto& p : model.metadata_props()) has_id |= p.key() == "model_id";
  if (!has_id && g->name().empty()) {
    auto* p = model.add_metadata_props();
    p->set_key("model_id");
    p->set_value(original.model_id);
  }

  std::string bytes;
  {
    google::protobuf::io::StringOutputStream stream(&bytes);
    google::protobuf::io::CodedOutputStream coded(&stream);
    coded.SetSerializationDeterministic(true);
    if (!model.SerializeToCodedStream(&coded)) fail(ErrorCode::io_error, "cannot serialize randomized model");
  }
  std::ofstream out(path_out, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path_out.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io_error, "write failed for " + path_out.string());
  out.close();

  const LayerManifest result = load_graph_bytes(bytes, original.model_id).manifest;
  if (fs::exists(manifest_sidecar_path(path_in))) result.save(manifest_sidecar_path(path_out));
  return result;
}

double relative_depth(int layer_index, const LayerManifest& manifest) {
  manifest.layer(layer_index);
  return static_cast<double>(layer_index) / static_cast<double>(manifest.total_layers());
}

}  // namespace periscope
