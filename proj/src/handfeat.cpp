#include "periscope/handfeat.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

#include <opencv2/features2d.hpp>

#include "json.hpp"
#include "periscope/error.hpp"

namespace periscope {

void BlockHistogramConfig::validate() const {
  if (grid_rows < 1 || grid_cols < 1) fail(ErrorCode::invalid_argument, "block grid must be at least 1x1");
  if (bins < 2) fail(ErrorCode::invalid_argument, "histograms need at least 2 bins");
  if (lbp_map == LbpCodeMap::range && bins > 256) fail(ErrorCode::invalid_argument, "range map supports <= 256 bins");
}

std::string BlockHistogramConfig::to_json() const {
  nlohmann::ordered_json j;
  j["grid_rows"] = grid_rows;
  j["grid_cols"] = grid_cols;
  j["bins"] = bins;
  j["lbp_map"] = lbp_map == LbpCodeMap::popcount ? "popcount" : "range";
  return j.dump();
}

namespace {

struct BlockGeometry {
  int height, width;
};

BlockGeometry block_geometry(const cv::Mat& gray, const BlockHistogramConfig& cfg) {
  cfg.validate();
  if (gray.type() != CV_8UC1) fail(ErrorCode::invalid_argument, "expected an 8-bit single-channel image");
  const BlockGeometry g{gray.rows / cfg.grid_rows, gray.cols / cfg.grid_cols};
  if (g.height < 3 || g.width < 3)
    fail(ErrorCode::image_too_small, "image " + std::to_string(gray.cols) + "x" + std::to_string(gray.rows) +
                                         " too small for a " + std::to_string(cfg.grid_rows) + "x" +
                                         std::to_string(cfg.grid_cols) + " grid");
  return g;
}

int lbp_bin(unsigned code, const BlockHistogramConfig& cfg) {
  if (cfg.lbp_map == LbpCodeMap::range) return static_cast<int>(code * static_cast<unsigned>(cfg.bins) / 256u);
  const int cls = std::max(std::popcount(code) - 1, 0);  // 0..7
  return cls * cfg.bins / 8;
}

}  // namespace

std::vector<float> lbph(const cv::Mat& gray, const BlockHistogramConfig& cfg) {
  const auto geo = block_geometry(gray, cfg);
  std::vector<float> out(cfg.length(), 0.f);
  // Clockwise from the top-left neighbor.
  static constexpr int dy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
  static constexpr int dx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};

  for (int br = 0; br < cfg.grid_rows; ++br) {
    for (int bc = 0; bc < cfg.grid_cols; ++bc) {
      float* hist = out.data() + (static_cast<std::size_t>(br) * cfg.grid_cols + bc) * cfg.bins;
      const int y0 = br * geo.height, x0 = bc * geo.width;
      for (int y = y0 + 1; y < y0 + geo.height - 1; ++y) {
        for (int x = x0 + 1; x < x0 + geo.width - 1; ++x) {
          const unsigned char c = gray.at<unsigned char>(y, x);
          unsigned code = 0;
          for (int k = 0; k < 8; ++k)
            if (gray.at<unsigned char>(y + dy[k], x + dx[k]) > c) code |= 1u << k;
          hist[lbp_bin(code, cfg)] += 1.f;
        }
      }
    }
  }
  return out;
}

FeatureVector lbph(const NormalizedImage& image, const BlockHistogramConfig& cfg) {
  return {image.sample_id, lbph(image.pixels, cfg), "lbph"};
}

std::vector<float> hog(const cv::Mat& gray, const BlockHistogramConfig& cfg) {
  const auto geo = block_geometry(gray, cfg);
  std::vector<double> acc(cfg.length(), 0.0);
  const double bin_width = 180.0 / cfg.bins;
  auto px = [&](int y, int x) {
    y = std::clamp(y, 0, gray.rows - 1);
    x = std::clamp(x, 0, gray.cols - 1);
    return static_cast<double>(gray.at<unsigned char>(y, x));
  };

  for (int br = 0; br < cfg.grid_rows; ++br) {
    for (int bc = 0; bc < cfg.grid_cols; ++bc) {
      double* hist = acc.data() + (static_cast<std::size_t>(br) * cfg.grid_cols + bc) * cfg.bins;
      const int y0 = br * geo.height, x0 = bc * geo.width;
      for (int y = y0; y < y0 + geo.height; ++y) {
        for (int x = x0; x < x0 + geo.width; ++x) {
          const double gx = px(y, x + 1) - px(y, x - 1);
          const double gy = px(y + 1, x) - px(y - 1, x);
          const double mag = std::hypot(gx, gy);
          if (mag == 0.0) continue;
          double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
          if (angle < 0.0) angle += 180.0;
          if (angle >= 180.0) angle -= 180.0;
          const int bin = std::min(static_cast<int>(angle / bin_width), cfg.bins - 1);
          hist[bin] += mag;
        }
      }
    }
  }
  return {acc.begin(), acc.end()};
}

FeatureVector hog(const NormalizedImage& image, const BlockHistogramConfig& cfg) {
  return {image.sample_id, hog(image.pixels, cfg), "hog"};
}

KeypointSet sift_detect(const cv::Mat& gray, const std::string& sample_id) {
  if (gray.type() != CV_8UC1) fail(ErrorCode::invalid_argument, "expected an 8-bit single-channel image");
  if (gray.rows < 32 || gray.cols < 32) fail(ErrorCode::image_too_small, "SIFT needs an image side of at least 32");

  auto detector = cv::SIFT::create(0, 3, 0.04, 10.0, 1.6);
  std::vector<cv::KeyPoint> cv_keypoints;
  cv::Mat descriptors;
  detector->detectAndCompute(gray, cv::noArray(), cv_keypoints, descriptors);

  KeypointSet set{sample_id, {}};
  set.keypoints.reserve(cv_keypoints.size());
  for (std::size_t i = 0; i < cv_keypoints.size(); ++i) {
    Keypoint kp;
    kp.x = cv_keypoints[i].pt.x;
    kp.y = cv_keypoints[i].pt.y;
    kp.scale = cv_keypoints[i].size;
    kp.orientation = cv_keypoints[i].angle;
    // OpenCV clamps at 0.2 and renormalizes, then scales by 512; bring back to unit norm.
    const float* row = descriptors.ptr<float>(static_cast<int>(i));
    double norm = 0.0;
    for (int k = 0; k < 128; ++k) norm += static_cast<double>(row[k]) * row[k];
    norm = std::sqrt(norm);
    for (int k = 0; k < 128; ++k) kp.descriptor[k] = norm > 0.0 ? static_cast<float>(row[k] / norm) : 0.f;
    set.keypoints.push_back(kp);
  }
  std::sort(set.keypoints.begin(), set.keypoints.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    if (a.scale != b.scale) return a.scale < b.scale;
    if (a.orientation != b.orientation) return a.orientation < b.orientation;
    return a.descriptor < b.descriptor;
  });
  return set;
}

KeypointSet sift_detect(const NormalizedImage& image) { return sift_detect(image.pixels, image.sample_id); }

namespace {

float squared_distance(const std::array<float, 128>& a, const std::array<float, 128>& b) {
  float sum = 0.f;
  for (int k = 0; k < 128; ++k) {
    const float d = a[k] - b[k];
    sum += d * d;
  }
  return sum;
}

struct Neighbor {
  std::size_t index = 0;
  bool passes = false;
};

}  // namespace

MatchStats sift_match(const KeypointSet& a, const KeypointSet& b, double ratio) {
  MatchStats stats{0, a.keypoints.size(), b.keypoints.size()};
  const std::size_t n = a.keypoints.size(), m = b.keypoints.size();
  if (n == 0 || m == 0) return stats;

  std::vector<float> dist(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) dist[i * m + j] = squared_distance(a.keypoints[i].descriptor, b.keypoints[j].descriptor);

  const double ratio_sq = ratio * ratio;
  auto best_of = [&](std::size_t count, auto&& at) {
    float d1 = std::numeric_limits<float>::infinity(), d2 = d1;
    std::size_t best = 0;
    for (std::size_t k = 0; k < count; ++k) {
      const float d = at(k);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = k;
      } else if (d < d2) {
        d2 = d;
      }
    }
    const bool passes = std::isinf(d2) || static_cast<double>(d1) < ratio_sq * d2;
    return Neighbor{best, passes};
  };

  std::vector<Neighbor> nn_ab(n), nn_ba(m);
  for (std::size_t i = 0; i < n; ++i) nn_ab[i] = best_of(m, [&](std::size_t j) { return dist[i * m + j]; });
  for (std::size_t j = 0; j < m; ++j) nn_ba[j] = best_of(n, [&](std::size_t i) { return dist[i * m + j]; });

  for (std::size_t i = 0; i < n; ++i) {
    const auto& fwd = nn_ab[i];
    const auto& back = nn_ba[fwd.index];
    if (fwd.passes && back.passes && back.index == i) ++stats.matches;
  }
  return stats;
}

}  // namespace periscope
