#include "periscope/store.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "binio.hpp"
#include "periscope/error.hpp"

namespace periscope {

using json = nlohmann::ordered_json;

namespace {

constexpr char kFeatureMagic[9] = "PSCFEAT1";
constexpr char kKeypointMagic[9] = "PSCKPTS1";
constexpr char kScoreMagic[9] = "PSCSCOR1";

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_file, "cannot open " + path.string());
  return in;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) fail(ErrorCode::io_error, "write failed for " + path.string());
}

json parse_header(const std::string& text, const std::filesystem::path& path) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::parse_error, "bad header in " + path.string() + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, const std::filesystem::path& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::parse_error, std::string("missing or invalid '") + key + "' in " + path.string());
  }
}

void expect_end(std::istream& in, const std::filesystem::path& path) {
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCode::parse_error, "trailing bytes in " + path.string());
}

void put_scores(std::ostream& out, const std::vector<double>& values) {
  const std::vector<float> narrow(values.begin(), values.end());
  binio::put_f32(out, narrow);
}

std::vector<double> get_scores(std::istream& in, std::size_t n, const char* what) {
  std::vector<float> narrow(n);
  binio::get_f32(in, narrow, what);
  return {narrow.begin(), narrow.end()};
}

}  // namespace

void save_features(const std::filesystem::path& path, const FeatureMatrix& features, const std::string& config) {
  json h;
  h["dim"] = features.dim();
  h["source"] = features.source();
  h["config"] = config;
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(binio::fnv1a(config)));
  h["config_hash"] = hash;
  h["sample_ids"] = features.sample_ids();
  auto out = open_out(path);
  binio::put_header(out, kFeatureMagic, h.dump());
  binio::put_f32(out, features.values());
  finish(out, path);
}

FeatureMatrix load_features(const std::filesystem::path& path, std::string* config) {
  auto in = open_in(path);
  const json h = parse_header(binio::get_header(in, kFeatureMagic, "feature file"), path);
  FeatureMatrix m(field<std::vector<std::string>>(h, "sample_ids", path), field<std::size_t>(h, "dim", path),
                  field<std::string>(h, "source", path));
  for (std::size_t i = 0; i < m.rows(); ++i) binio::get_f32(in, m.row(i), "feature rows");
  expect_end(in, path);
  if (config) *config = field<std::string>(h, "config", path);
  return m;
}

void save_keypoints(const std::filesystem::path& path, std::span<const KeypointSet> sets) {
  json h;
  h["descriptor_length"] = 128;
  auto& ids = h["sample_ids"] = json::array();
  for (const auto& s : sets) ids.push_back(s.sample_id);
  auto out = open_out(path);
  binio::put_header(out, kKeypointMagic, h.dump());
  for (const auto& s : sets) {
    binio::put_u32(out, static_cast<std::uint32_t>(s.keypoints.size()));
    for (const auto& k : s.keypoints) {
      const float geom[4] = {k.x, k.y, k.scale, k.orientation};
      binio::put_f32(out, geom);
      binio::put_f32(out, k.descriptor);
    }
  }
  finish(out, path);
}

std::vector<KeypointSet> load_keypoints(const std::filesystem::path& path) {
  auto in = open_in(path);
  const json h = parse_header(binio::get_header(in, kKeypointMagic, "keypoint file"), path);
  if (field<int>(h, "descriptor_length", path) != 128)
    fail(ErrorCode::parse_error, "unsupported descriptor length in " + path.string());
  const auto ids = field<std::vector<std::string>>(h, "sample_ids", path);
  std::vector<KeypointSet> sets(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    sets[i].sample_id = ids[i];
    const std::uint32_t n = binio::get_u32(in, "keypoint count");
    sets[i].keypoints.resize(n);
    for (auto& k : sets[i].keypoints) {
      float geom[4];
      binio::get_f32(in, geom, "keypoint");
      k.x = geom[0];
      k.y = geom[1];
      k.scale = geom[2];
      k.orientation = geom[3];
      binio::get_f32(in, k.descriptor, "keypoint descriptor");
    }
  }
  expect_end(in, path);
  return sets;
}

void save_scores(const std::filesystem::path& path, const ScoreSet& scores) {
  json h;
  h["descriptor"] = scores.meta.descriptor;
  h["partition"] = scores.meta.partition;
  h["genuine_count"] = scores.genuine.size();
  h["impostor_count"] = scores.impostor.size();
  h["value_type"] = "f32";
  auto out = open_out(path);
  binio::put_header(out, kScoreMagic, h.dump());
  put_scores(out, scores.genuine);
  put_scores(out, scores.impostor);
  finish(out, path);
}

ScoreSet load_scores(const std::filesystem::path& path) {
  auto in = open_in(path);
  const json h = parse_header(binio::get_header(in, kScoreMagic, "score file"), path);
  if (field<std::string>(h, "value_type", path) != "f32")
    fail(ErrorCode::parse_error, "unsupported score value type in " + path.string());
  ScoreSet s;
  s.meta = {field<std::string>(h, "descriptor", path), field<std::string>(h, "partition", path)};
  s.genuine = get_scores(in, field<std::size_t>(h, "genuine_count", path), "genuine scores");
  s.impostor = get_scores(in, field<std::size_t>(h, "impostor_count", path), "impostor scores");
  expect_end(in, path);
  return s;
}

}  // namespace periscope
