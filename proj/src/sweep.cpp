#include "periscope/sweep.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <unordered_map>

#include "json.hpp"
#include "periscope/error.hpp"
#include "periscope/store.hpp"

namespace periscope {

using json = nlohmann::ordered_json;

std::vector<int> sweep_layers(int total_layers, const SweepOptions& options) {
  const int last = options.last_layer == 0 ? total_layers : options.last_layer;
  if (options.stride < 1) fail(ErrorCode::invalid_argument, "layer stride must be >= 1");
  if (options.first_layer < 1 || last > total_layers || options.first_layer > last)
    fail(ErrorCode::invalid_argument, "layer range " + std::to_string(options.first_layer) + ".." +
                                          std::to_string(last) + " outside 1.." + std::to_string(total_layers));
  std::vector<int> out;
  for (int l = options.first_layer; l <= last; l += options.stride) out.push_back(l);
  return out;
}

std::filesystem::path resolve_cache_dir(const std::filesystem::path& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("PERISCOPE_CACHE"); env && *env) return env;
  return std::filesystem::temp_directory_path() / "periscope-cache";
}

namespace {

std::string protocol_of(const std::string& partition) { return partition.substr(0, partition.find('-')); }

/// Images in PairList sample order.
std::vector<NormalizedImage> gather(std::span<const NormalizedImage> images, const PairList& pairs) {
  std::unordered_map<std::string, const NormalizedImage*> by_id;
  for (const auto& im : images) by_id.emplace(im.sample_id, &im);
  std::vector<NormalizedImage> out;
  out.reserve(pairs.sample_ids.size());
  for (const auto& id : pairs.sample_ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) fail(ErrorCode::missing_feature, "no normalized image for sample '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

struct RemoveOnExit {
  std::filesystem::path path;
  ~RemoveOnExit() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

SweepRow evaluate_gathered(const GraphHandle& graph, int layer_index, std::span<const NormalizedImage> ordered,
                           const PairList& pairs, const SweepOptions& options) {
  const auto& manifest = manifest_of(graph);
  try {
    const auto dir = resolve_cache_dir(options.cache_dir);
    std::filesystem::create_directories(dir);
    char name[128];
    std::snprintf(name, sizeof name, "layer%04d-%ld-%016llx.feat", layer_index, static_cast<long>(::getpid()),
                  static_cast<unsigned long long>(std::hash<std::string>{}(manifest.model_id + '\n' + pairs.partition_id)));
    RemoveOnExit cached{dir / name};
    {
      auto vectors = extract_tap_batched(graph, layer_index, ordered, options.batch_size);
      save_features(cached.path, FeatureMatrix::from_vectors(vectors));
    }
    const ScoreSet scores = score_pairs(load_features(cached.path), pairs, options.scoring);
    SweepRow row;
    row.layer_index = layer_index;
    row.relative_depth = relative_depth(layer_index, manifest);
    row.eer = eer(error_curve(scores), options.method).eer;
    row.counts = scores.counts();
    return row;
  } catch (const Error& e) {
    throw Error(e.code(), "layer " + std::to_string(layer_index) + " (" + manifest.layer(layer_index).name +
                              "): " + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(ErrorCode::io_error, "layer " + std::to_string(layer_index) + ": " + e.what());
  }
}

}  // namespace

SweepRow evaluate_layer(const GraphHandle& graph, int layer_index, std::span<const NormalizedImage> images,
                        const PairList& pairs, const SweepOptions& options) {
  manifest_of(graph).layer(layer_index);
  const auto ordered = gather(images, pairs);
  return evaluate_gathered(graph, layer_index, ordered, pairs, options);
}

LayerSweepResult run_sweep(const GraphHandle& graph, std::span<const NormalizedImage> images, const PairList& pairs,
                           const SweepOptions& options) {
  const auto& manifest = manifest_of(graph);
  const int total = static_cast<int>(manifest.total_layers());
  const auto coarse = sweep_layers(total, options);
  const auto ordered = gather(images, pairs);

  LayerSweepResult result;
  result.model_id = manifest.model_id;
  result.strategy = options.strategy;
  result.protocol = protocol_of(pairs.partition_id);
  result.partition = pairs.partition_id;
  result.total_layers = total;

  for (const int l : coarse) result.rows.push_back(evaluate_gathered(graph, l, ordered, pairs, options));

  if (options.refine && options.stride > 1) {
    const int best = best_layer(result).layer_index;
    const int last = options.last_layer == 0 ? total : options.last_layer;
    const std::set<int> done(coarse.begin(), coarse.end());
    for (int l = std::max(options.first_layer, best - options.stride + 1);
         l <= std::min(last, best + options.stride - 1); ++l)
      if (!done.contains(l)) result.rows.push_back(evaluate_gathered(graph, l, ordered, pairs, options));
    std::sort(result.rows.begin(), result.rows.end(),
              [](const SweepRow& a, const SweepRow& b) { return a.layer_index < b.layer_index; });
  }

  for (const auto& r : result.rows)
    if (!std::isfinite(r.eer)) fail(ErrorCode::invalid_argument, "non-finite EER at layer " + std::to_string(r.layer_index));
  return result;
}

SweepRow best_layer(const LayerSweepResult& result) {
  if (result.rows.empty()) fail(ErrorCode::empty_scores, "sweep '" + result.partition + "' has no rows");
  const SweepRow* best = &result.rows.front();
  for (const auto& r : result.rows)
    if (r.eer < best->eer || (r.eer == best->eer && r.layer_index < best->layer_index)) best = &r;
  return *best;
}

std::vector<TransferCell> transfer_matrix(const std::map<std::string, LayerSweepResult>& sweeps,
                                          std::span<const TransferTarget> targets, const GraphHandle& graph,
                                          const SweepOptions& options) {
  std::vector<TransferCell> cells;
  cells.reserve(sweeps.size() * targets.size());
  for (const auto& [selector, sweep] : sweeps) {
    const int layer = best_layer(sweep).layer_index;
    for (const auto& t : targets) {
      if (!t.pairs) fail(ErrorCode::invalid_argument, "transfer target '" + t.partition + "' has no pair list");
      cells.push_back({selector, t.partition, layer, evaluate_layer(graph, layer, t.images, *t.pairs, options).eer});
    }
  }
  return cells;
}

namespace {

std::ofstream open_report(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  return out;
}

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ReportFiles emit_report(const std::filesystem::path& dir, std::span<const LayerSweepResult> sweeps,
                        std::span<const TransferCell> transfer, const std::string& transfer_model) {
  if (sweeps.empty() && transfer.empty()) fail(ErrorCode::invalid_argument, "nothing to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io_error, "cannot create " + dir.string() + ": " + ec.message());

  ReportFiles files{dir / "report.json", dir / "sweep.csv", {}};
  json report;
  report["format"] = "periscope-report-v1";
  auto& js = report["sweeps"] = json::array();
  auto sweep_csv = open_report(files.sweep_csv);
  sweep_csv << "model,strategy,protocol,partition,layer,relative_depth,eer_percent,eer,genuine,impostor\n";
  for (const auto& s : sweeps) {
    json j;
    j["model"] = s.model_id;
    j["strategy"] = s.strategy;
    j["protocol"] = s.protocol;
    j["partition"] = s.partition;
    j["total_layers"] = s.total_layers;
    if (!s.rows.empty()) {
      const auto b = best_layer(s);
      j["best"] = {{"layer", b.layer_index}, {"relative_depth", b.relative_depth}, {"eer_percent", b.eer * 100.0}};
    }
    auto& rows = j["rows"] = json::array();
    for (const auto& r : s.rows) {
      rows.push_back({{"layer", r.layer_index},
                      {"relative_depth", r.relative_depth},
                      {"eer_percent", r.eer * 100.0},
                      {"genuine", r.counts.genuine},
                      {"impostor", r.counts.impostor}});
      sweep_csv << s.model_id << ',' << s.strategy << ',' << s.protocol << ',' << s.partition << ','
                << r.layer_index << ',' << csv_double(r.relative_depth) << ',' << format_percent(r.eer) << ','
                << csv_double(r.eer) << ',' << r.counts.genuine << ',' << r.counts.impostor << '\n';
    }
    js.push_back(std::move(j));
  }
  if (!sweep_csv) fail(ErrorCode::io_error, "write failed for " + files.sweep_csv.string());

  auto& jt = report["transfer"] = json::array();
  if (!transfer.empty()) {
    files.transfer_csv = dir / "transfer.csv";
    auto csv = open_report(files.transfer_csv);
    csv << "model,selector,target,layer,eer_percent,eer\n";
    for (const auto& c : transfer) {
      jt.push_back({{"model", transfer_model},
                    {"selector", c.selector},
                    {"target", c.target},
                    {"layer", c.layer_index},
                    {"eer_percent", c.eer * 100.0}});
      csv << transfer_model << ',' << c.selector << ',' << c.target << ',' << c.layer_index << ','
          << format_percent(c.eer) << ',' << csv_double(c.eer) << '\n';
    }
    if (!csv) fail(ErrorCode::io_error, "write failed for " + files.transfer_csv.string());
  }

  auto out = open_report(files.json);
  out << report.dump(2) << '\n';
  if (!out) fail(ErrorCode::io_error, "write failed for " + files.json.string());
  return files;
}

}  // namespace periscope
