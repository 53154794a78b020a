#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include <opencv2/imgproc.hpp>

#include "periscope/error.hpp"
#include "periscope/handfeat.hpp"
#include "support.hpp"

using namespace periscope;

namespace {

BlockHistogramConfig grid(int rows, int cols, int bins, LbpCodeMap map = LbpCodeMap::popcount) {
  return {rows, cols, bins, map};
}

float block_sum(const std::vector<float>& v, std::size_t block, int bins) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(block * bins),
                         v.begin() + static_cast<std::ptrdiff_t>((block + 1) * bins), 0.f);
}

Keypoint descriptor_keypoint(std::array<float, 128> d) {
  Keypoint k;
  k.descriptor = d;
  return k;
}

std::array<float, 128> unit(std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.f, 1.f);
  std::array<float, 128> d;
  double s = 0;
  for (auto& x : d) {
    x = std::abs(n(rng));
    s += x * x;
  }
  for (auto& x : d) x = static_cast<float>(x / std::sqrt(s));
  return d;
}

}  // namespace

TEST(Lbph, LengthIsGridTimesBins) {
  const cv::Mat img = testing_support::noise_image(64, 64, 1);
  EXPECT_EQ(lbph(img, grid(2, 2, 8)).size(), 32u);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 1 + static_cast<int>(rng() % 10), c = 1 + static_cast<int>(rng() % 10),
              b = 2 + static_cast<int>(rng() % 30);
    EXPECT_EQ(lbph(img, grid(r, c, b)).size(), static_cast<std::size_t>(r * c * b));
    EXPECT_EQ(lbph(img, grid(r, c, b, LbpCodeMap::range)).size(), static_cast<std::size_t>(r * c * b));
  }
}

TEST(Lbph, ConstantImageFillsCodeZeroBin) {
  const cv::Mat flat(40, 40, CV_8UC1, cv::Scalar(90));
  const auto v = lbph(flat, grid(2, 2, 8));
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_EQ(v[b * 8], 18.f * 18.f);
    EXPECT_EQ(block_sum(v, b, 8), v[b * 8]);
  }
}

TEST(Lbph, BlockMassEqualsInteriorPixelCount) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int rows = 20 + static_cast<int>(rng() % 100), cols = 20 + static_cast<int>(rng() % 100);
    const int gr = 1 + static_cast<int>(rng() % 6), gc = 1 + static_cast<int>(rng() % 6);
    const int bins = 2 + static_cast<int>(rng() % 20);
    const cv::Mat img = testing_support::noise_image(rows, cols, rng());
    for (const auto map : {LbpCodeMap::popcount, LbpCodeMap::range}) {
      const auto v = lbph(img, grid(gr, gc, bins, map));
      const float interior = static_cast<float>((rows / gr - 2) * (cols / gc - 2));
      for (std::size_t b = 0; b < static_cast<std::size_t>(gr * gc); ++b) EXPECT_EQ(block_sum(v, b, bins), interior);
    }
  }
}

TEST(Lbph, TransposeTransposesBlockLayout) {
  const cv::Mat img = testing_support::noise_image(60, 90, 4);
  const cv::Mat t = img.t();
  const auto a = lbph(img, grid(3, 5, 8)), b = lbph(t, grid(5, 3, 8));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c)
      for (int k = 0; k < 8; ++k) EXPECT_EQ(a[(r * 5 + c) * 8 + k], b[(c * 3 + r) * 8 + k]);
}

TEST(Lbph, PopcountClassesAndRawCodes) {
  // Center 10 with exactly three brighter neighbors -> popcount 3 -> class 2.
  cv::Mat img(3, 3, CV_8UC1, cv::Scalar(5));
  img.at<std::uint8_t>(1, 1) = 10;
  img.at<std::uint8_t>(0, 0) = img.at<std::uint8_t>(0, 1) = img.at<std::uint8_t>(0, 2) = 20;
  const auto v = lbph(img, grid(1, 1, 8));
  EXPECT_EQ(v[2], 1.f);
  const auto raw = lbph(img, grid(1, 1, 256, LbpCodeMap::range));
  EXPECT_EQ(raw[0b111], 1.f);  // top-left, top, top-right are bits 0..2
}

TEST(Lbph, TooSmallAndBadConfig) {
  const cv::Mat img(10, 10, CV_8UC1, cv::Scalar(0));
  try {
    lbph(img, grid(4, 4, 8));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::image_too_small);
  }
  EXPECT_THROW(lbph(img, grid(1, 1, 1)), Error);
  EXPECT_THROW(lbph(img, grid(0, 1, 8)), Error);
}

TEST(Hog, LengthIsGridTimesBins) {
  const cv::Mat img = testing_support::texture(64, 64, 2);
  EXPECT_EQ(hog(img, grid(4, 4, 8)).size(), 128u);
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 1 + static_cast<int>(rng() % 10), c = 1 + static_cast<int>(rng() % 10),
              b = 2 + static_cast<int>(rng() % 30);
    EXPECT_EQ(hog(img, grid(r, c, b)).size(), static_cast<std::size_t>(r * c * b));
  }
}

TEST(Hog, ConstantImageIsZero) {
  const cv::Mat flat(32, 32, CV_8UC1, cv::Scalar(200));
  for (const float x : hog(flat, grid(4, 4, 8))) EXPECT_EQ(x, 0.f);
}

TEST(Hog, RampConcentratesInOneBin) {
  cv::Mat ramp(48, 48, CV_8UC1);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) ramp.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(3 * x);
  const auto h = hog(ramp, grid(3, 3, 8));
  for (std::size_t b = 0; b < 9; ++b) {
    EXPECT_GT(h[b * 8], 0.f);
    for (int k = 1; k < 8; ++k) EXPECT_EQ(h[b * 8 + k], 0.f);
  }
  // Vertical ramp: orientation 90 degrees -> bin 4 of 8.
  const auto v = hog(cv::Mat(ramp.t()), grid(3, 3, 8));
  for (std::size_t b = 0; b < 9; ++b) EXPECT_GT(v[b * 8 + 4], 0.f);
}

TEST(Sift, BlankImageHasNoKeypoints) {
  EXPECT_TRUE(sift_detect(cv::Mat(64, 64, CV_8UC1, cv::Scalar(128))).keypoints.empty());
}

TEST(Sift, DeterministicAndUnitNorm) {
  const cv::Mat img = testing_support::noise_image(128, 128, 3);
  cv::Mat smooth;
  cv::GaussianBlur(img, smooth, {0, 0}, 1.5);
  const auto a = sift_detect(smooth, "a"), b = sift_detect(smooth, "a");
  ASSERT_GT(a.keypoints.size(), 10u);
  ASSERT_EQ(a.keypoints.size(), b.keypoints.size());
  for (std::size_t i = 0; i < a.keypoints.size(); ++i) {
    EXPECT_EQ(a.keypoints[i].descriptor, b.keypoints[i].descriptor);
    EXPECT_EQ(a.keypoints[i].x, b.keypoints[i].x);
    double n = 0;
    for (const float x : a.keypoints[i].descriptor) n += static_cast<double>(x) * x;
    EXPECT_NEAR(n, 1.0, 1e-5);
  }
}

TEST(Sift, SelfMatchEqualsKeypointCount) {
  cv::Mat smooth;
  cv::GaussianBlur(testing_support::noise_image(160, 160, 5), smooth, {0, 0}, 1.5);
  const auto a = sift_detect(smooth);
  const auto s = sift_match(a, a);
  EXPECT_EQ(s.matches, a.keypoints.size());
  EXPECT_EQ(s.keypoints_a, a.keypoints.size());
}

TEST(Sift, TooSmallImage) { EXPECT_THROW(sift_detect(cv::Mat(31, 64, CV_8UC1, cv::Scalar(0))), Error); }

TEST(SiftMatch, EmptySide) {
  std::mt19937_64 rng(1);
  KeypointSet a, b{"b", {descriptor_keypoint(unit(rng))}};
  EXPECT_EQ(sift_match(a, b).matches, 0u);
  EXPECT_EQ(sift_match(b, a).matches, 0u);
  EXPECT_EQ(sift_match(a, b).keypoints_b, 1u);
}

TEST(SiftMatch, AmbiguousNeighborsAreRejected) {
  std::mt19937_64 rng(2);
  auto d = unit(rng), e = unit(rng);
  auto d2 = d;
  d2[0] += 1e-3f;
  // e is (almost) equally far from d and d2, so its nearest/second-nearest ratio is ~1.
  const KeypointSet a{"a", {descriptor_keypoint(d), descriptor_keypoint(d2)}}, b{"b", {descriptor_keypoint(e)}};
  EXPECT_EQ(sift_match(a, b).matches, 0u);
  EXPECT_EQ(sift_match(b, a).matches, 0u);
}

TEST(SiftMatch, SingleCandidatePasses) {
  std::mt19937_64 rng(3);
  const auto d = unit(rng);
  const KeypointSet a{"a", {descriptor_keypoint(d)}}, b{"b", {descriptor_keypoint(d)}};
  EXPECT_EQ(sift_match(a, b).matches, 1u);
}

TEST(SiftMatch, SymmetricOnRandomSets) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    KeypointSet a, b;
    const std::size_t n = rng() % 30, m = rng() % 30;
    for (std::size_t i = 0; i < n; ++i) a.keypoints.push_back(descriptor_keypoint(unit(rng)));
    for (std::size_t j = 0; j < m; ++j) {
      // Half of b are noisy copies of a so that matches actually occur.
      if (n > 0 && rng() % 2) {
        auto d = a.keypoints[rng() % n].descriptor;
        for (auto& x : d) x += 0.01f * static_cast<float>(static_cast<int>(rng() % 3) - 1);
        b.keypoints.push_back(descriptor_keypoint(d));
      } else {
        b.keypoints.push_back(descriptor_keypoint(unit(rng)));
      }
    }
    const auto ab = sift_match(a, b), ba = sift_match(b, a);
    EXPECT_EQ(ab.matches, ba.matches);
    EXPECT_LE(ab.matches, std::min(n, m));
  }
}
