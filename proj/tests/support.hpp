#pragma once

#include <algorithm>
#include <array>
#include <cstdlib>
#include <iterator>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "periscope/corpus.hpp"
#include "periscope/tensor.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& name) { return fs::path(PERISCOPE_FIXTURES) / name; }

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "periscope-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Reference activations written by fixtures/make_toy_graphs.py.
inline std::map<std::string, periscope::Tensor> read_reference(const fs::path& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() < 16 || bytes.compare(0, 8, "PSCACTV1") != 0) throw std::runtime_error("bad reference blob");
  std::uint64_t len;
  std::memcpy(&len, bytes.data() + 8, 8);
  const auto header = nlohmann::json::parse(bytes.substr(16, len));
  const char* data = bytes.data() + 16 + len;
  std::map<std::string, periscope::Tensor> out;
  for (const auto& e : header.at("entries")) {
    periscope::Tensor t(e.at("shape").get<periscope::Shape>());
    std::memcpy(t.data.data(), data + e.at("offset").get<std::size_t>() * 4, t.data.size() * 4);
    out.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

/// Records for `ids` identities (two eyes per subject) with `per_id` samples each, no images.
inline std::vector<periscope::SampleRecord> labeled_records(std::size_t ids, std::size_t per_id) {
  std::vector<periscope::SampleRecord> out;
  for (std::size_t i = 0; i < ids; ++i)
    for (std::size_t s = 0; s < per_id; ++s) {
      periscope::SampleRecord r;
      char id[48];
      std::snprintf(id, sizeof id, "id%05zu_s%03zu", i, s);
      r.sample_id = id;
      std::snprintf(id, sizeof id, "subj%05zu", i / 2);
      r.subject_id = id;
      r.eye = i % 2 ? periscope::Eye::right : periscope::Eye::left;
      r.session = static_cast<int>(s);
      out.push_back(std::move(r));
    }
  return out;
}

/// Smooth band-limited texture, 8-bit single channel.
inline cv::Mat texture(int rows, int cols, std::uint64_t seed, int waves = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(0.02, 0.15), phase(0.0, 6.283185307179586), amp(6.0, 16.0);
  cv::Mat img(rows, cols, CV_8UC1);
  std::vector<std::array<double, 4>> w(waves);
  for (auto& x : w) x = {freq(rng), freq(rng) - 0.085, phase(rng), amp(rng)};
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      double v = 128.0;
      for (const auto& p : w) v += p[3] * std::sin(p[0] * x + p[1] * y + p[2]);
      img.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(v);
    }
  return img;
}

/// Uniform noise image, useful where many detector responses are wanted.
inline cv::Mat noise_image(int rows, int cols, std::uint64_t seed) {
  cv::Mat img(rows, cols, CV_8UC1);
  cv::RNG rng(seed);
  rng.fill(img, cv::RNG::UNIFORM, 0, 256);
  return img;
}

/// Independent EER oracle: every distinct score plus one value above the maximum is a
/// threshold; FAR/FRR come from binary searches on sorted copies; the first threshold where
/// FAR - FRR stops being positive is paired with its predecessor and linearly interpolated.
inline double brute_force_eer(std::vector<double> genuine, std::vector<double> impostor) {
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
  std::vector<double> t(genuine);
  t.insert(t.end(), impostor.begin(), impostor.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.push_back(std::nextafter(t.back(), std::numeric_limits<double>::infinity()));
  auto far = [&](double th) {
    return static_cast<double>(impostor.end() - std::lower_bound(impostor.begin(), impostor.end(), th)) /
           static_cast<double>(impostor.size());
  };
  auto frr = [&](double th) {
    return static_cast<double>(std::lower_bound(genuine.begin(), genuine.end(), th) - genuine.begin()) /
           static_cast<double>(genuine.size());
  };
  double prev_far = far(t[0]), prev_frr = frr(t[0]);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double fa = far(t[k]), fr = frr(t[k]);
    if (fa - fr <= 0.0) {
      if (fa == fr || k == 0) return (fa + fr) / 2.0;
      const double a = (prev_far - prev_frr) / ((prev_far - prev_frr) - (fa - fr));
      return prev_far + a * (fa - prev_far);
    }
    prev_far = fa;
    prev_frr = fr;
  }
  return (prev_far + prev_frr) / 2.0;
}

/// Random score set drawn from a Gaussian or uniform family with random overlap.
struct RandomScores {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

inline RandomScores random_scores(std::mt19937_64& rng, std::size_t max_n) {
  std::uniform_int_distribution<std::size_t> count(1, max_n);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  RandomScores s;
  const std::size_t ng = count(rng), ni = count(rng);
  const double shift = u01(rng) * 3.0 - 0.5;
  const bool quantize = u01(rng) < 0.3;
  auto draw = [&](double mean) {
    double v;
    if (u01(rng) < 0.5) {
      std::normal_distribution<double> n(mean, 1.0);
      v = n(rng);
    } else {
      v = mean + (u01(rng) - 0.5) * 3.0;
    }
    return quantize ? std::round(v * 20.0) / 20.0 : v;
  };
  for (std::size_t i = 0; i < ng; ++i) s.genuine.push_back(draw(shift));
  for (std::size_t i = 0; i < ni; ++i) s.impostor.push_back(draw(0.0));
  return s;
}

}  // namespace testing_support
