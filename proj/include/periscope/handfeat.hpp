#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "periscope/corpus.hpp"

namespace periscope {

/// How the 256 raw LBP codes are folded into `bins` histogram bins.
///  popcount: number of neighbors brighter than the center, with 0 and 1 merged, giving
///            8 classes; for bins != 8 the classes are spread as class * bins / 8.
///  range:    code * bins / 256 (bins = 256 keeps the raw code histogram).
enum class LbpCodeMap { popcount, range };

/// Non-overlapping block grid. Remainder pixels past the last full block are dropped.
struct BlockHistogramConfig {
  int grid_rows = 8;
  int grid_cols = 8;
  int bins = 8;
  LbpCodeMap lbp_map = LbpCodeMap::popcount;

  void validate() const;
  std::size_t length() const { return static_cast<std::size_t>(grid_rows) * grid_cols * bins; }
  std::string to_json() const;
};

struct FeatureVector {
  std::string sample_id;
  std::vector<float> values;
  std::string source;  // "lbph", "hog" or "tap:<layer>"
};

struct Keypoint {
  float x = 0.f;
  float y = 0.f;
  float scale = 0.f;
  float orientation = 0.f;  // degrees
  std::array<float, 128> descriptor{};
};

struct KeypointSet {
  std::string sample_id;
  std::vector<Keypoint> keypoints;
};

/// Inputs of the SIFT match ratio: matched pairs and the keypoint count on each side.
struct MatchStats {
  std::size_t matches = 0;
  std::size_t keypoints_a = 0;
  std::size_t keypoints_b = 0;
};

/// LBP codes use radius-1 neighbors and a strict "neighbor > center" test, so flat regions
/// produce code 0. Only pixels whose 3x3 neighborhood lies inside their block are counted:
/// each block histogram sums to (block_h - 2) * (block_w - 2).
std::vector<float> lbph(const cv::Mat& gray, const BlockHistogramConfig& cfg);
FeatureVector lbph(const NormalizedImage& image, const BlockHistogramConfig& cfg);

/// Magnitude-weighted histograms of unsigned gradient orientation in [0, 180) degrees.
/// Gradients are centered differences with replicated borders.
std::vector<float> hog(const cv::Mat& gray, const BlockHistogramConfig& cfg);
FeatureVector hog(const NormalizedImage& image, const BlockHistogramConfig& cfg);

/// Lowe's SIFT parameters: 3 scales/octave, sigma 1.6, contrast 0.04, edge ratio 10.
/// Descriptors are unit L2 norm; keypoints are sorted so the output is order-stable.
KeypointSet sift_detect(const cv::Mat& gray, const std::string& sample_id = {});
KeypointSet sift_detect(const NormalizedImage& image);

inline constexpr double kDefaultRatio = 0.8;

/// Counts mutual nearest-neighbor descriptor pairs where both directions pass the ratio test
/// (nearest < ratio * second nearest). A side with a single candidate passes trivially.
/// Symmetric: sift_match(a, b).matches == sift_match(b, a).matches.
MatchStats sift_match(const KeypointSet& a, const KeypointSet& b, double ratio = kDefaultRatio);

}  // namespace periscope
