#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "periscope/corpus.hpp"
#include "periscope/handfeat.hpp"
#include "periscope/tensor.hpp"

namespace periscope {

/// One tappable layer. Graph value name is "tap/<index>/<name>".
struct LayerInfo {
  int index = 0;
  std::string name;
  Shape output_shape;  // non-batch dims, graph-native order

  bool operator==(const LayerInfo&) const = default;
};

/// Ordered tappable layers of a model. Indices run 1..N in execution order; N is the
/// denominator for relative depth.
struct LayerManifest {
  std::string model_id;
  int input_height = 0;
  int input_width = 0;
  int input_channels = 0;
  std::string input_layout = "NCHW";  // or "NHWC"
  // Pixel values v in [0, 255] are fed as v * input_scale + input_offset.
  double input_scale = 1.0;
  double input_offset = 0.0;
  std::vector<LayerInfo> layers;

  std::size_t total_layers() const { return layers.size(); }
  const LayerInfo& layer(int index) const;
  const LayerInfo& layer(const std::string& name) const;

  std::string to_json() const;
  static LayerManifest from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static LayerManifest load(const std::filesystem::path& path);

  bool operator==(const LayerManifest&) const = default;
};

/// Sidecar location for a graph file: "model.onnx" -> "model.manifest.json".
std::filesystem::path manifest_sidecar_path(const std::filesystem::path& graph_path);

namespace detail {
struct Graph;
}

/// Immutable, shareable handle to a loaded graph.
class GraphHandle {
 public:
  GraphHandle() = default;
  explicit GraphHandle(std::shared_ptr<const detail::Graph> graph) : graph_(std::move(graph)) {}

  const detail::Graph& graph() const;
  explicit operator bool() const { return graph_ != nullptr; }

 private:
  std::shared_ptr<const detail::Graph> graph_;
};

struct LoadedGraph {
  GraphHandle handle;
  LayerManifest manifest;
};

/// Parses an ONNX model and enumerates its tap outputs. When a manifest sidecar exists next to
/// the file it must agree with the derived manifest.
LoadedGraph load_graph(const std::filesystem::path& path);
LoadedGraph load_graph_bytes(const std::string& bytes, const std::string& fallback_model_id = "model");

const LayerManifest& manifest_of(const GraphHandle& handle);

using LayerRef = std::variant<int, std::string>;

struct TapRequest {
  LayerRef layer;
  std::span<const NormalizedImage> batch;
};

/// Builds the network input for a batch: grayscale replicated across channels, scaled per manifest.
Tensor make_input(const GraphHandle& handle, std::span<const NormalizedImage> batch);

/// Executes only the part of the graph the tap depends on and returns its activation.
Tensor forward_to(const GraphHandle& handle, const Tensor& input, const LayerRef& layer);

/// Executes the whole graph and records every tap activation, keyed by layer index.
std::map<int, Tensor> forward_all(const GraphHandle& handle, const Tensor& input);

/// One flattened feature vector per image, source "tap:<index>".
std::vector<FeatureVector> extract_tap(const GraphHandle& handle, const TapRequest& request);

/// extract_tap over a whole image list in fixed-size batches.
std::vector<FeatureVector> extract_tap_batched(const GraphHandle& handle, const LayerRef& layer,
                                               std::span<const NormalizedImage> images, std::size_t batch_size = 16);

/// Re-draws every learned parameter (Glorot-uniform kernels, zero biases, unit/zero
/// normalization scale/shift, unit/zero running variance/mean) and writes the result.
/// Topology, names and shapes are untouched; output bytes are a function of (input, seed).
LayerManifest randomize_weights(const std::filesystem::path& path_in, const std::filesystem::path& path_out,
                                std::uint64_t seed);

/// layer_index / total_layers.
double relative_depth(int layer_index, const LayerManifest& manifest);

}  // namespace periscope
