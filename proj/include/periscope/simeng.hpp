#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "periscope/handfeat.hpp"
#include "periscope/parallel.hpp"
#include "periscope/protocol.hpp"

namespace periscope {

/// Dot product of two float vectors accumulated in double precision.
double dot_f64(std::span<const float> a, std::span<const float> b);

/// dot(a, b) / (|a| |b|) with 64-bit accumulation, clamped to [-1, 1].
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(const FeatureVector& a, const FeatureVector& b);

struct SiftRatioConfig {
  double epsilon = 1.0;
  /// Divide by min(K_a, K_b, epsilon) exactly as printed instead of the guarded
  /// max(min(K_a, K_b), epsilon). The literal form yields NaN/inf when a side has no keypoints.
  bool literal_min = false;

  void validate() const;
};

/// M / max(min(K_a, K_b), epsilon).
double sift_ratio(const MatchStats& stats, const SiftRatioConfig& cfg = {});

struct ScoreMeta {
  std::string descriptor;
  std::string partition;
};

/// Similarity scores (higher = more likely genuine), ordered like the PairList they came from.
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
  ScoreMeta meta;

  PairCounts counts() const { return {genuine.size(), impostor.size()}; }
};

/// Row-per-sample float32 feature table.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::vector<std::string> sample_ids, std::size_t dim, std::string source = {});

  static FeatureMatrix from_vectors(std::span<const FeatureVector> vectors);

  std::size_t rows() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& source() const { return source_; }
  const std::vector<std::string>& sample_ids() const { return ids_; }

  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
  std::optional<std::size_t> find(const std::string& sample_id) const;

  const std::vector<float>& values() const { return values_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t dim_ = 0;
  std::string source_;
  std::vector<float> values_;
};

struct ScoringOptions {
  std::size_t workers = default_workers();
  /// Pairs are grouped into tile x tile blocks of feature rows before scoring.
  std::size_t tile = 4096;
};

/// Wall-clock throughput of the last scoring call; never part of the scores themselves.
struct ScoringStats {
  std::size_t pairs = 0;
  double seconds = 0.0;
  double pairs_per_second() const { return seconds > 0.0 ? static_cast<double>(pairs) / seconds : 0.0; }
};

/// Cosine scores for every pair. Output is bit-identical for any worker count or tile size.
ScoreSet score_pairs(const FeatureMatrix& features, const PairList& pairs, const ScoringOptions& options = {},
                     ScoringStats* stats = nullptr);

/// SIFT match-ratio scores for every pair.
ScoreSet score_pairs(std::span<const KeypointSet> keypoints, const PairList& pairs, const SiftRatioConfig& cfg,
                     const ScoringOptions& options = {}, ScoringStats* stats = nullptr);

}  // namespace periscope
