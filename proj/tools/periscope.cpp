#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "periscope/corpus.hpp"
#include "periscope/deepfeat.hpp"
#include "periscope/error.hpp"
#include "periscope/handfeat.hpp"
#include "periscope/parallel.hpp"
#include "periscope/protocol.hpp"
#include "periscope/simeng.hpp"
#include "periscope/store.hpp"
#include "periscope/sweep.hpp"
#include "periscope/verimetrics.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace periscope;

namespace {

// ---------------------------------------------------------------------------
// JSON run configs. Top-level keys are global options, nested objects are subcommands:
//   {"seed": 3, "score": {"pairs": "p.pairs", "descriptor": "lbph"}}

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return dump(app, default_also).dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static json dump(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config" || name == "save-config") continue;
      const auto& results = opt->results();
      if (results.empty() && !(default_also && !opt->get_default_str().empty())) continue;
      if (results.empty()) {
        j[name] = opt->get_default_str();
      } else if (opt->get_expected_max() > 1) {
        j[name] = results;
      } else if (opt->get_type_size() == 0) {
        j[name] = opt->as<bool>();
      } else {
        j[name] = results.back();
      }
    }
    for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = dump(sub, default_also);
    return j;
  }

  static void collect(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        // Marker that enters the subcommand, then its options.
        out.push_back({parents, key, {}});
        out.back().name = "++";
        out.back().parents = nested;
        collect(value, nested, out);
        out.push_back({nested, "--", {}});
        continue;
      }
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      } else if (value.is_string()) {
        item.inputs.push_back(value.get<std::string>());
      } else {
        item.inputs.push_back(value.dump());
      }
      out.push_back(std::move(item));
    }
  }
};

// ---------------------------------------------------------------------------
// Shared state

struct Globals {
  std::uint64_t seed = 0;
  std::size_t workers = default_workers();
  bool dry_run = false;
};

void dry_run_done(const std::string& what) { std::cout << "dry-run: ok, would write " << what << "\n"; }

void create_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::vector<NormalizedImage> load_images(const std::vector<SampleRecord>& records, bool dry_run) {
  std::vector<NormalizedImage> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (dry_run) {
      if (!fs::exists(r.image_path)) fail(ErrorCode::missing_file, "image not found: " + r.image_path.string());
      continue;
    }
    out.push_back({r.sample_id, to_gray(read_image(r.image_path)), {}});
  }
  return out;
}

std::vector<SampleRecord> load_records(const fs::path& manifest) {
  std::vector<std::string> warnings;
  auto records = load_manifest(manifest, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return records;
}

/// Network inputs are resized to the model's spatial size when the corpus was normalized differently.
std::vector<NormalizedImage> fit_to_model(std::vector<NormalizedImage> images, const LayerManifest& m) {
  for (auto& im : images)
    if (im.pixels.rows != m.input_height || im.pixels.cols != m.input_width) {
      cv::Mat resized;
      cv::resize(im.pixels, resized, cv::Size(m.input_width, m.input_height), 0, 0, cv::INTER_CUBIC);
      im.pixels = resized;
    }
  return images;
}

// ---------------------------------------------------------------------------
// Descriptor options shared by extract and score

struct DescriptorArgs {
  std::string descriptor = "lbph";
  std::string grid = "8x8";
  int bins = 8;
  std::string lbp_map = "popcount";
  fs::path model;
  std::string layer;
  std::size_t batch_size = 16;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--descriptor", descriptor, "lbph, hog, sift or tap")
        ->check(CLI::IsMember({"lbph", "hog", "sift", "tap"}))
        ->capture_default_str();
    cmd->add_option("--grid", grid, "block grid, ROWSxCOLS or N")->capture_default_str();
    cmd->add_option("--bins", bins, "histogram bins")->capture_default_str();
    cmd->add_option("--lbp-map", lbp_map, "LBP code bucketing")
        ->check(CLI::IsMember({"popcount", "range"}))
        ->capture_default_str();
    cmd->add_option("--model", model, "graph file for --descriptor tap");
    cmd->add_option("--layer", layer, "tap index or name for --descriptor tap");
    cmd->add_option("--batch-size", batch_size, "images per forward pass")->capture_default_str();
  }

  BlockHistogramConfig block_config() const {
    BlockHistogramConfig cfg;
    const auto x = grid.find('x');
    try {
      cfg.grid_rows = std::stoi(grid.substr(0, x));
      cfg.grid_cols = x == std::string::npos ? cfg.grid_rows : std::stoi(grid.substr(x + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_argument, "bad --grid '" + grid + "'");
    }
    cfg.bins = bins;
    cfg.lbp_map = lbp_map == "range" ? LbpCodeMap::range : LbpCodeMap::popcount;
    cfg.validate();
    return cfg;
  }

  LayerRef layer_ref() const {
    if (layer.empty()) fail(ErrorCode::invalid_argument, "--descriptor tap needs --layer");
    if (std::all_of(layer.begin(), layer.end(), [](char c) { return c >= '0' && c <= '9'; }))
      return std::stoi(layer);
    return layer;
  }
};

struct Features {
  std::optional<FeatureMatrix> dense;
  std::vector<KeypointSet> keypoints;
  std::string config = "{}";
};

/// Validates the descriptor setup; computes features unless this is a dry run.
Features compute_features(const DescriptorArgs& args, const std::vector<SampleRecord>& records, const Globals& g) {
  Features out;
  std::optional<LoadedGraph> graph;
  std::optional<BlockHistogramConfig> block;
  if (args.descriptor == "tap") {
    if (args.model.empty()) fail(ErrorCode::invalid_argument, "--descriptor tap needs --model");
    graph = load_graph(args.model);
    const auto& info = std::visit([&](const auto& ref) -> const LayerInfo& { return graph->manifest.layer(ref); },
                                  args.layer_ref());
    out.config = json{{"model", graph->manifest.model_id}, {"layer", info.index}, {"name", info.name}}.dump();
  } else if (args.descriptor != "sift") {
    block = args.block_config();
    out.config = block->to_json();
  }
  auto images = load_images(records, g.dry_run);
  if (g.dry_run) return out;

  if (graph) {
    images = fit_to_model(std::move(images), graph->manifest);
    out.dense = FeatureMatrix::from_vectors(
        extract_tap_batched(graph->handle, args.layer_ref(), images, args.batch_size));
    return out;
  }
  if (args.descriptor == "sift") {
    out.keypoints.resize(images.size());
    parallel_for(images.size(), g.workers, [&](std::size_t i) { out.keypoints[i] = sift_detect(images[i]); });
    return out;
  }
  std::vector<FeatureVector> vectors(images.size());
  const bool use_lbph = args.descriptor == "lbph";
  parallel_for(images.size(), g.workers, [&](std::size_t i) {
    vectors[i] = use_lbph ? lbph(images[i], *block) : hog(images[i], *block);
  });
  out.dense = FeatureMatrix::from_vectors(vectors);
  return out;
}

bool is_keypoint_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_file, "cannot open " + path.string());
  char magic[8] = {};
  in.read(magic, 8);
  return std::string(magic, 8) == "PSCKPTS1";
}

// ---------------------------------------------------------------------------
// Sweep options shared by sweep and transfer

struct SweepArgs {
  fs::path model;
  fs::path manifest;
  std::vector<fs::path> pairs;
  fs::path out;
  SweepOptions options;
  std::string method = "interpolated";
  std::size_t tile = 4096;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--model", model, "graph file")->required();
    cmd->add_option("--manifest", manifest, "normalized corpus manifest")->required();
    cmd->add_option("--pairs", pairs, "pair files, one sweep each")->required();
    cmd->add_option("--out", out, "report directory")->required();
    cmd->add_option("--first-layer", options.first_layer)->capture_default_str();
    cmd->add_option("--last-layer", options.last_layer, "0 = last layer")->capture_default_str();
    cmd->add_option("--stride", options.stride)->capture_default_str();
    cmd->add_flag("--refine", options.refine, "revisit the layers around the coarse best");
    cmd->add_option("--strategy", options.strategy, "report tag")->capture_default_str();
    cmd->add_option("--batch-size", options.batch_size)->capture_default_str();
    cmd->add_option("--method", method)->check(CLI::IsMember({"interpolated", "midpoint"}))->capture_default_str();
    cmd->add_option("--tile", tile)->capture_default_str();
    cmd->add_option("--cache-dir", options.cache_dir, "feature spill directory (default $PERISCOPE_CACHE)");
  }

  struct Loaded {
    LoadedGraph graph;
    std::vector<NormalizedImage> images;
    std::vector<PairList> pair_lists;
  };

  Loaded load(const Globals& g) {
    options.method = parse_eer_method(method);
    options.scoring.workers = g.workers;
    options.scoring.tile = tile;
    Loaded l{load_graph(model), {}, {}};
    sweep_layers(static_cast<int>(l.graph.manifest.total_layers()), options);
    const auto records = load_records(manifest);
    std::map<std::string, const SampleRecord*> by_id;
    for (const auto& r : records) by_id.emplace(r.sample_id, &r);
    for (const auto& p : pairs) {
      l.pair_lists.push_back(load_pairs(p));
      for (const auto& id : l.pair_lists.back().sample_ids)
        if (!by_id.count(id)) fail(ErrorCode::missing_feature, "sample '" + id + "' of " + p.string() + " is not in the manifest");
    }
    l.images = load_images(records, g.dry_run);
    if (!g.dry_run) l.images = fit_to_model(std::move(l.images), l.graph.manifest);
    return l;
  }
};

// ---------------------------------------------------------------------------
// Subcommands

int run_synth(const Globals& g, std::size_t identities, std::size_t per_id, double noise, int side, const fs::path& out) {
  if (identities == 0 || per_id == 0) fail(ErrorCode::invalid_argument, "--identities and --per-id must be >= 1");
  if (g.dry_run) {
    if (noise < 0.0) fail(ErrorCode::invalid_argument, "noise level must be >= 0");
    dry_run_done(std::to_string(identities * per_id) + " images and manifest.csv to " + out.string());
    return 0;
  }
  write_corpus(out, synth_corpus(identities, per_id, noise, g.seed, {side}));
  return 0;
}

int run_normalize(const Globals& g, const fs::path& manifest, const fs::path& out, NormalizationConfig cfg,
                  const std::string& group_radii) {
  cfg.validate();
  const auto records = load_records(manifest);
  std::map<std::string, double> radii;
  if (group_radii != "none")
    radii = group_target_radii(records, group_radii == "distance" ? RadiusGrouping::distance_group
                                                                  : RadiusGrouping::distance_group_and_session);
  for (const auto& r : records) {
    if (!fs::exists(r.image_path)) fail(ErrorCode::missing_file, "image not found: " + r.image_path.string());
    if (cfg.mode == NormalizationMode::full && !r.sclera)
      fail(ErrorCode::missing_annotation, "no sclera annotation for " + r.sample_id);
  }
  if (g.dry_run) {
    dry_run_done(std::to_string(records.size()) + " images, manifest.csv and normalization.json to " + out.string());
    return 0;
  }
  std::vector<cv::Mat> images;
  images.reserve(records.size());
  for (const auto& r : records) images.push_back(read_image(r.image_path));
  std::vector<NormalizedImage> normalized(records.size());
  parallel_for(records.size(), g.workers, [&](std::size_t i) {
    NormalizationConfig own = cfg;
    if (const auto it = radii.find(records[i].sample_id); it != radii.end()) own.target_sclera_radius = it->second;
    normalized[i] = normalize_image(records[i], images[i], own);
  });

  fs::create_directories(out);
  std::vector<SampleRecord> written = records;
  const auto implied = implied_annotation(cfg);
  for (std::size_t i = 0; i < records.size(); ++i) {
    written[i].image_path = out / (records[i].sample_id + ".png");
    write_png(written[i].image_path, normalized[i].pixels);
    if (cfg.mode == NormalizationMode::full) written[i].sclera = implied;
  }
  write_manifest(out / "manifest.csv", written);
  std::ofstream(out / "normalization.json") << cfg.to_json() << "\n";
  return 0;
}

int run_partition(const Globals& g, const fs::path& manifest, const std::string& protocol, const SplitRule& rule,
                  const fs::path& out) {
  const auto records = load_records(manifest);
  const auto parts = make_partition(records, parse_protocol(protocol), rule);
  if (g.dry_run) {
    std::string names;
    for (const auto& p : parts) names += (names.empty() ? "" : ", ") + p.id();
    dry_run_done("partitions " + names + " to " + out.string());
    return 0;
  }
  fs::create_directories(out);
  for (const auto& p : parts) {
    save_partition(out / (p.id() + ".partition.json"), p);
    const auto pairs = enumerate_pairs(p, records);
    save_pairs(out / (p.id() + ".pairs"), pairs);
    std::cerr << p.id() << ": " << pairs.genuine.size() << " genuine, " << pairs.impostor.size() << " impostor\n";
  }
  return 0;
}

int run_extract(const Globals& g, const fs::path& manifest, const DescriptorArgs& args, const fs::path& out) {
  const auto records = load_records(manifest);
  auto features = compute_features(args, records, g);
  if (g.dry_run) {
    dry_run_done(args.descriptor + " features for " + std::to_string(records.size()) + " samples to " + out.string());
    return 0;
  }
  create_parent(out);
  if (features.dense)
    save_features(out, *features.dense, features.config);
  else
    save_keypoints(out, features.keypoints);
  return 0;
}

int run_score(const Globals& g, const fs::path& features_path, const fs::path& manifest, const DescriptorArgs& args,
              const fs::path& pairs_path, const SiftRatioConfig& ratio, std::size_t tile, const fs::path& out) {
  ratio.validate();
  const PairList pairs = load_pairs(pairs_path);
  ScoringOptions options{g.workers, tile};
  if (features_path.empty() == manifest.empty())
    fail(ErrorCode::invalid_argument, "give exactly one of --features or --manifest");

  Features features;
  if (!features_path.empty()) {
    if (is_keypoint_file(features_path))
      features.keypoints = load_keypoints(features_path);
    else
      features.dense = load_features(features_path);
  } else {
    features = compute_features(args, load_records(manifest), g);
  }
  if (g.dry_run) {
    dry_run_done(std::to_string(pairs.genuine.size() + pairs.impostor.size()) + " scores to " + out.string());
    return 0;
  }
  ScoringStats stats;
  const ScoreSet scores = features.dense ? score_pairs(*features.dense, pairs, options, &stats)
                                         : score_pairs(features.keypoints, pairs, ratio, options, &stats);
  create_parent(out);
  save_scores(out, scores);
  std::fprintf(stderr, "%zu pairs scored\n", stats.pairs);
  return 0;
}

int run_eval(const Globals& g, const fs::path& scores_path, const std::string& method, const fs::path& curve_out,
             std::optional<double> far_target) {
  const auto scores = load_scores(scores_path);
  const auto m = parse_eer_method(method);
  if (far_target && !(*far_target > 0.0 && *far_target < 1.0))
    fail(ErrorCode::invalid_argument, "--frr-at-far must lie in (0, 1)");
  const auto curve = error_curve(scores);
  if (g.dry_run) {
    dry_run_done(curve_out.empty() ? std::string("nothing") : curve_out.string());
    return 0;
  }
  std::cout << format_percent(eer(curve, m).eer) << "\n";
  if (far_target) std::cout << format_percent(frr_at_far(curve, *far_target)) << "\n";
  if (!curve_out.empty()) {
    create_parent(curve_out);
    write_curve_csv(curve_out, curve);
  }
  return 0;
}

int run_sweep_cmd(const Globals& g, SweepArgs& args) {
  auto loaded = args.load(g);
  if (g.dry_run) {
    dry_run_done("report.json and sweep.csv to " + args.out.string());
    return 0;
  }
  std::vector<LayerSweepResult> results;
  for (const auto& pairs : loaded.pair_lists)
    results.push_back(run_sweep(loaded.graph.handle, loaded.images, pairs, args.options));
  emit_report(args.out, results);
  return 0;
}

int run_transfer(const Globals& g, SweepArgs& args) {
  auto loaded = args.load(g);
  if (loaded.pair_lists.size() < 2) fail(ErrorCode::invalid_argument, "transfer needs at least two --pairs files");
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < loaded.pair_lists.size(); ++i)
    if (!seen.emplace(loaded.pair_lists[i].partition_id, i).second)
      fail(ErrorCode::duplicate_id, "partition '" + loaded.pair_lists[i].partition_id + "' given twice");
  if (g.dry_run) {
    dry_run_done("report.json, sweep.csv and transfer.csv to " + args.out.string());
    return 0;
  }
  std::map<std::string, LayerSweepResult> sweeps;
  std::vector<LayerSweepResult> ordered;
  std::vector<TransferTarget> targets;
  for (const auto& pairs : loaded.pair_lists) {
    ordered.push_back(run_sweep(loaded.graph.handle, loaded.images, pairs, args.options));
    sweeps.emplace(pairs.partition_id, ordered.back());
    targets.push_back({pairs.partition_id, loaded.images, &pairs});
  }
  const auto cells = transfer_matrix(sweeps, targets, loaded.graph.handle, args.options);
  emit_report(args.out, ordered, cells, loaded.graph.manifest.model_id);
  return 0;
}

int run_randomize(const Globals& g, const fs::path& in, const fs::path& out) {
  const auto graph = load_graph(in);
  if (g.dry_run) {
    dry_run_done(out.string());
    return 0;
  }
  create_parent(out);
  randomize_weights(in, out, g.seed);
  std::cerr << graph.manifest.model_id << ": " << graph.manifest.total_layers() << " layers re-drawn with seed "
            << g.seed << "\n";
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Periocular verification experiments: normalization, protocols, descriptors, scoring, layer sweeps."};
  app.name("periscope");
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON run config; command-line flags take precedence");
  std::string save_config;
  app.add_option("--save-config", save_config, "write the resolved run config as JSON and continue")
      ->configurable(false);
  app.require_subcommand(1);

  Globals g;
  app.add_option("--seed", g.seed, "seed for every random draw")->capture_default_str();
  app.add_option("--workers", g.workers, "worker threads (default: logical cores)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--dry-run", g.dry_run, "validate inputs and write nothing");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic texture corpus");
  std::size_t identities = 124, per_id = 5;
  double noise = 0.1;
  int side = 64;
  fs::path synth_out;
  synth->add_option("--identities", identities)->capture_default_str();
  synth->add_option("--per-id", per_id)->capture_default_str();
  synth->add_option("--noise", noise)->capture_default_str();
  synth->add_option("--side", side, "image side in pixels")->capture_default_str();
  synth->add_option("--out", synth_out, "corpus directory")->required();

  // normalize
  auto* normalize = app.add_subcommand("normalize", "rescale, rotate and crop around the sclera");
  fs::path norm_manifest, norm_out;
  NormalizationConfig norm_cfg;
  std::string norm_mode = "full", group_radii = "none";
  normalize->add_option("--manifest", norm_manifest)->required();
  normalize->add_option("--out", norm_out, "output directory")->required();
  normalize->add_option("--mode", norm_mode)->check(CLI::IsMember({"full", "resize-only"}))->capture_default_str();
  normalize->add_option("--target-radius", norm_cfg.target_sclera_radius)->capture_default_str();
  normalize->add_option("--crop-factor", norm_cfg.crop_factor)->capture_default_str();
  normalize->add_option("--side", norm_cfg.output_side)->capture_default_str();
  normalize->add_option("--group-radii", group_radii, "per-group target radius")
      ->check(CLI::IsMember({"none", "distance", "distance-session"}))
      ->capture_default_str();

  // partition
  auto* partition = app.add_subcommand("partition", "split a corpus and enumerate comparison pairs");
  fs::path part_manifest, part_out;
  std::string protocol = "complete";
  SplitRule rule;
  partition->add_option("--manifest", part_manifest)->required();
  partition->add_option("--protocol", protocol)->check(CLI::IsMember({"cw", "ow", "complete"}))->capture_default_str();
  partition->add_option("--test-per-id", rule.test_per_identity, "CW: test samples per identity");
  partition->add_option("--train-ids", rule.train_identities, "OW: identities in the train split");
  partition->add_option("--out", part_out, "output directory")->required();

  // extract
  auto* extract = app.add_subcommand("extract", "compute descriptors or tap features for a corpus");
  fs::path ext_manifest, ext_out;
  DescriptorArgs ext_args;
  extract->add_option("--manifest", ext_manifest)->required();
  ext_args.add_to(extract);
  extract->add_option("--out", ext_out, "feature or keypoint file")->required();

  // score
  auto* score = app.add_subcommand("score", "score every genuine and impostor pair");
  fs::path score_features, score_manifest, score_pairs_path, score_out;
  DescriptorArgs score_args;
  SiftRatioConfig ratio;
  std::size_t tile = 4096;
  score->add_option("--features", score_features, "feature or keypoint file from extract");
  score->add_option("--manifest", score_manifest, "compute features on the fly instead");
  score_args.add_to(score);
  score->add_option("--pairs", score_pairs_path)->required();
  score->add_option("--epsilon", ratio.epsilon, "SIFT ratio denominator floor")->capture_default_str();
  score->add_flag("--literal-min", ratio.literal_min, "SIFT ratio with min() instead of the guard");
  score->add_option("--tile", tile)->capture_default_str();
  score->add_option("--out", score_out, "score file")->required();

  // eval
  auto* evaluate = app.add_subcommand("eval", "print the EER (percent) of a score file");
  fs::path eval_scores, eval_curve;
  std::string eval_method = "interpolated";
  std::optional<double> far_target;
  evaluate->add_option("--scores", eval_scores)->required();
  evaluate->add_option("--method", eval_method)->check(CLI::IsMember({"interpolated", "midpoint"}))->capture_default_str();
  evaluate->add_option("--curve", eval_curve, "write threshold,far,frr CSV");
  evaluate->add_option("--frr-at-far", far_target, "also print FRR (percent) at this FAR");

  // sweep / transfer
  auto* sweep = app.add_subcommand("sweep", "EER of every tap layer on each partition");
  SweepArgs sweep_args;
  sweep_args.add_to(sweep);
  auto* transfer = app.add_subcommand("transfer", "apply each partition's best layer to every partition");
  SweepArgs transfer_args;
  transfer_args.add_to(transfer);

  // randomize
  auto* randomize = app.add_subcommand("randomize", "re-draw every learned weight of a graph");
  fs::path rand_in, rand_out;
  randomize->add_option("--model", rand_in)->required();
  randomize->add_option("--out", rand_out)->required();

  for (auto* sub : app.get_subcommands({})) sub->configurable();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (!save_config.empty() && !g.dry_run) {
      create_parent(save_config);
      std::ofstream(save_config) << app.config_to_str(true, false);
    }
    norm_cfg.mode = norm_mode == "full" ? NormalizationMode::full : NormalizationMode::resize_only;
    if (*synth) return run_synth(g, identities, per_id, noise, side, synth_out);
    if (*normalize) return run_normalize(g, norm_manifest, norm_out, norm_cfg, group_radii);
    if (*partition) return run_partition(g, part_manifest, protocol, rule, part_out);
    if (*extract) return run_extract(g, ext_manifest, ext_args, ext_out);
    if (*score)
      return run_score(g, score_features, score_manifest, score_args, score_pairs_path, ratio, tile, score_out);
    if (*evaluate) return run_eval(g, eval_scores, eval_method, eval_curve, far_target);
    if (*sweep) return run_sweep_cmd(g, sweep_args);
    if (*transfer) return run_transfer(g, transfer_args);
    if (*randomize) return run_randomize(g, rand_in, rand_out);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.code()) << "]: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io_error]: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}
