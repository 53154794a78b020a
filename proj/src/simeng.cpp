#include "periscope/simeng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "periscope/error.hpp"

namespace periscope {

double dot_f64(std::span<const float> a, std::span<const float> b) {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return (s0 + s1) + (s2 + s3);
}

namespace {

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    fail(ErrorCode::dimension_mismatch, "cosine of vectors with lengths " + std::to_string(a.size()) + " and " +
                                            std::to_string(b.size()));
  const double na = std::sqrt(dot_f64(a, a)), nb = std::sqrt(dot_f64(b, b));
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::zero_norm, "cosine of a zero vector");
  return clamp_unit(dot_f64(a, b) / (na * nb));
}

double cosine(const FeatureVector& a, const FeatureVector& b) {
  try {
    return cosine(std::span<const float>(a.values), std::span<const float>(b.values));
  } catch (const Error& e) {
    throw Error(e.code(), std::string(e.what()) + " (" + a.sample_id + ", " + b.sample_id + ")");
  }
}

void SiftRatioConfig::validate() const {
  if (!(epsilon > 0.0)) fail(ErrorCode::invalid_argument, "epsilon must be > 0");
}

double sift_ratio(const MatchStats& stats, const SiftRatioConfig& cfg) {
  cfg.validate();
  const auto smaller = static_cast<double>(std::min(stats.keypoints_a, stats.keypoints_b));
  if (stats.keypoints_a > 0 && stats.keypoints_b > 0 && static_cast<double>(stats.matches) > smaller)
    fail(ErrorCode::invalid_argument, "more matches than keypoints on the smaller side");
  const double m = static_cast<double>(stats.matches);
  if (cfg.literal_min) return m / std::min(smaller, cfg.epsilon);
  return m / std::max(smaller, cfg.epsilon);
}

// ---------------------------------------------------------------------------
// FeatureMatrix

FeatureMatrix::FeatureMatrix(std::vector<std::string> sample_ids, std::size_t dim, std::string source)
    : ids_(std::move(sample_ids)), dim_(dim), source_(std::move(source)), values_(ids_.size() * dim, 0.f) {
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (!index_.emplace(ids_[i], i).second) fail(ErrorCode::duplicate_id, "duplicate feature row '" + ids_[i] + "'");
}

FeatureMatrix FeatureMatrix::from_vectors(std::span<const FeatureVector> vectors) {
  std::vector<std::string> ids;
  ids.reserve(vectors.size());
  for (const auto& v : vectors) ids.push_back(v.sample_id);
  const std::size_t dim = vectors.empty() ? 0 : vectors.front().values.size();
  FeatureMatrix m(std::move(ids), dim, vectors.empty() ? std::string{} : vectors.front().source);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].values.size() != dim)
      fail(ErrorCode::dimension_mismatch, "feature '" + vectors[i].sample_id + "' has length " +
                                              std::to_string(vectors[i].values.size()) + ", expected " + std::to_string(dim));
    std::copy(vectors[i].values.begin(), vectors[i].values.end(), m.row(i).begin());
  }
  return m;
}

std::optional<std::size_t> FeatureMatrix::find(const std::string& sample_id) const {
  const auto it = index_.find(sample_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Engine

namespace {

constexpr std::size_t kChunk = 1 << 15;

/// Maps PairList indices to feature rows, failing on the first absent sample.
template <typename Lookup>
std::vector<std::size_t> resolve_rows(const PairList& pairs, Lookup&& lookup) {
  std::vector<std::size_t> rows(pairs.sample_ids.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = lookup(pairs.sample_ids[i]);
    if (!r) fail(ErrorCode::missing_feature, "no features for sample '" + pairs.sample_ids[i] + "'");
    rows[i] = *r;
  }
  return rows;
}

struct WorkUnit {
  const std::vector<IndexPair>* list;
  std::vector<double>* out;
  std::vector<std::uint32_t> positions;
};

/// Groups pair positions into tile x tile blocks of pair-list indices, each split into chunks.
std::vector<WorkUnit> plan_tiles(const std::vector<IndexPair>& list, std::vector<double>& out, std::size_t tile) {
  std::vector<WorkUnit> units;
  if (list.empty()) return units;
  tile = std::max<std::size_t>(tile, 1);
  std::uint32_t max_index = 0;
  for (const auto& p : list) max_index = std::max(max_index, p.second);
  const std::size_t tiles_per_side = max_index / tile + 1;
  std::vector<std::size_t> count(tiles_per_side * tiles_per_side, 0);
  auto key = [&](const IndexPair& p) { return (p.first / tile) * tiles_per_side + p.second / tile; };
  for (const auto& p : list) ++count[key(p)];
  std::vector<std::vector<std::uint32_t>> buckets(count.size());
  for (std::size_t k = 0; k < count.size(); ++k) buckets[k].reserve(count[k]);
  for (std::size_t i = 0; i < list.size(); ++i) buckets[key(list[i])].push_back(static_cast<std::uint32_t>(i));
  for (auto& b : buckets) {
    for (std::size_t first = 0; first < b.size(); first += kChunk) {
      const std::size_t last = std::min(b.size(), first + kChunk);
      units.push_back({&list, &out, std::vector<std::uint32_t>(b.begin() + first, b.begin() + last)});
    }
  }
  return units;
}

template <typename ScoreFn>
void run_units(std::vector<WorkUnit>& units, std::size_t workers, ScoreFn&& score) {
  parallel_for(units.size(), workers, [&](std::size_t u) {
    const WorkUnit& unit = units[u];
    for (const auto pos : unit.positions) {
      const IndexPair& p = (*unit.list)[pos];
      (*unit.out)[pos] = score(p.first, p.second);
    }
  });
}

}  // namespace

ScoreSet score_pairs(const FeatureMatrix& features, const PairList& pairs, const ScoringOptions& options,
                     ScoringStats* stats) {
  const auto start = std::chrono::steady_clock::now();
  const auto rows = resolve_rows(pairs, [&](const std::string& id) { return features.find(id); });

  // Norms once per sample, with the same accumulation as cosine().
  std::vector<double> norms(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = features.row(rows[i]);
    norms[i] = std::sqrt(dot_f64(r, r));
  }
  auto check_norm = [&](std::uint32_t i) {
    if (norms[i] == 0.0) fail(ErrorCode::zero_norm, "zero feature vector for sample '" + pairs.sample_ids[i] + "'");
  };
  for (const auto* list : {&pairs.genuine, &pairs.impostor})
    for (const auto& p : *list) {
      check_norm(p.first);
      check_norm(p.second);
    }

  ScoreSet out;
  out.meta = {features.source(), pairs.partition_id};
  out.genuine.resize(pairs.genuine.size());
  out.impostor.resize(pairs.impostor.size());
  auto units = plan_tiles(pairs.genuine, out.genuine, options.tile);
  auto more = plan_tiles(pairs.impostor, out.impostor, options.tile);
  std::move(more.begin(), more.end(), std::back_inserter(units));

  run_units(units, options.workers, [&](std::uint32_t i, std::uint32_t j) {
    return clamp_unit(dot_f64(features.row(rows[i]), features.row(rows[j])) / (norms[i] * norms[j]));
  });

  if (stats) {
    stats->pairs = pairs.genuine.size() + pairs.impostor.size();
    stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return out;
}

ScoreSet score_pairs(std::span<const KeypointSet> keypoints, const PairList& pairs, const SiftRatioConfig& cfg,
                     const ScoringOptions& options, ScoringStats* stats) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < keypoints.size(); ++i)
    if (!index.emplace(keypoints[i].sample_id, i).second)
      fail(ErrorCode::duplicate_id, "duplicate keypoint set '" + keypoints[i].sample_id + "'");
  const auto rows = resolve_rows(pairs, [&](const std::string& id) -> std::optional<std::size_t> {
    const auto it = index.find(id);
    if (it == index.end()) return std::nullopt;
    return it->second;
  });

  ScoreSet out;
  out.meta = {"sift", pairs.partition_id};
  out.genuine.resize(pairs.genuine.size());
  out.impostor.resize(pairs.impostor.size());
  auto units = plan_tiles(pairs.genuine, out.genuine, options.tile);
  auto more = plan_tiles(pairs.impostor, out.impostor, options.tile);
  std::move(more.begin(), more.end(), std::back_inserter(units));

  run_units(units, options.workers, [&](std::uint32_t i, std::uint32_t j) {
    return sift_ratio(sift_match(keypoints[rows[i]], keypoints[rows[j]]), cfg);
  });

  if (stats) {
    stats->pairs = pairs.genuine.size() + pairs.impostor.size();
    stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return out;
}

}  // namespace periscope
