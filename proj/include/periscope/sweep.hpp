#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "periscope/deepfeat.hpp"
#include "periscope/simeng.hpp"
#include "periscope/verimetrics.hpp"

namespace periscope {

struct SweepRow {
  int layer_index = 0;
  double relative_depth = 0.0;
  double eer = 0.0;
  PairCounts counts;

  bool operator==(const SweepRow&) const = default;
};

struct LayerSweepResult {
  std::string model_id;
  std::string strategy;  // report tag only: "pretrained", "random", ...
  std::string protocol;
  std::string partition;
  int total_layers = 0;
  std::vector<SweepRow> rows;  // ascending layer_index

  bool operator==(const LayerSweepResult&) const = default;
};

struct SweepOptions {
  int first_layer = 1;
  int last_layer = 0;  // 0 = last layer of the model
  int stride = 1;
  /// Evaluate every stride-th layer, then every layer strictly within one stride of the best one.
  bool refine = false;
  std::size_t batch_size = 16;
  ScoringOptions scoring;
  EerMethod method = EerMethod::interpolated;
  std::string strategy = "pretrained";
  /// Where per-layer features are spilled between extraction and scoring.
  /// Empty: $PERISCOPE_CACHE, else <tmp>/periscope-cache.
  std::filesystem::path cache_dir;
};

/// Layer indices visited by a plain (non-refined) sweep.
std::vector<int> sweep_layers(int total_layers, const SweepOptions& options);

std::filesystem::path resolve_cache_dir(const std::filesystem::path& configured);

/// extract -> score -> EER for each selected layer, in ascending layer order.
/// `images` must contain every sample referenced by `pairs`.
LayerSweepResult run_sweep(const GraphHandle& graph, std::span<const NormalizedImage> images, const PairList& pairs,
                           const SweepOptions& options = {});

/// EER of one layer on one partition, computed exactly as run_sweep does.
SweepRow evaluate_layer(const GraphHandle& graph, int layer_index, std::span<const NormalizedImage> images,
                        const PairList& pairs, const SweepOptions& options = {});

/// Lowest EER; ties go to the shallower layer.
SweepRow best_layer(const LayerSweepResult& result);

struct TransferTarget {
  std::string partition;
  std::span<const NormalizedImage> images;
  const PairList* pairs = nullptr;
};

struct TransferCell {
  std::string selector;
  std::string target;
  int layer_index = 0;
  double eer = 0.0;

  bool operator==(const TransferCell&) const = default;
};

/// One cell per (selector, target), selectors in map order, targets in the given order.
std::vector<TransferCell> transfer_matrix(const std::map<std::string, LayerSweepResult>& sweeps,
                                          std::span<const TransferTarget> targets, const GraphHandle& graph,
                                          const SweepOptions& options = {});

struct ReportFiles {
  std::filesystem::path json;
  std::filesystem::path sweep_csv;
  std::filesystem::path transfer_csv;  // empty when no transfer cells were given
};

/// Writes report.json, sweep.csv and (with cells) transfer.csv into `dir`.
ReportFiles emit_report(const std::filesystem::path& dir, std::span<const LayerSweepResult> sweeps,
                        std::span<const TransferCell> transfer = {}, const std::string& transfer_model = {});

}  // namespace periscope
