#include "periscope/corpus.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "periscope/error.hpp"
#include "periscope/parallel.hpp"

namespace periscope {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(Eye eye) { return eye == Eye::left ? "left" : "right"; }

Eye parse_eye(const std::string& text) {
  if (text == "left" || text == "L" || text == "l") return Eye::left;
  if (text == "right" || text == "R" || text == "r") return Eye::right;
  fail(ErrorCode::parse_error, "unknown eye value '" + text + "'");
}

// ---------------------------------------------------------------------------
// NormalizationConfig

void NormalizationConfig::validate() const {
  if (!(crop_factor > 0.0)) fail(ErrorCode::invalid_argument, "crop_factor must be > 0");
  if (output_side <= 0) fail(ErrorCode::invalid_argument, "output_side must be > 0");
  if (mode == NormalizationMode::full && !(target_sclera_radius > 0.0))
    fail(ErrorCode::degenerate_radius, "target_sclera_radius must be > 0");
}

std::string NormalizationConfig::to_json() const {
  json j;
  j["target_sclera_radius"] = target_sclera_radius;
  j["crop_factor"] = crop_factor;
  j["output_side"] = output_side;
  j["mode"] = mode == NormalizationMode::full ? "full" : "resize_only";
  j["interpolation"] = "bicubic";
  return j.dump();
}

NormalizationConfig NormalizationConfig::from_json(const std::string& text) {
  NormalizationConfig cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::parse_error, std::string("normalization config: ") + e.what());
  }
  try {
    if (j.contains("target_sclera_radius")) cfg.target_sclera_radius = j["target_sclera_radius"].get<double>();
    if (j.contains("crop_factor")) cfg.crop_factor = j["crop_factor"].get<double>();
    if (j.contains("output_side")) cfg.output_side = j["output_side"].get<int>();
    if (j.contains("mode")) {
      const auto mode = j["mode"].get<std::string>();
      if (mode == "full") cfg.mode = NormalizationMode::full;
      else if (mode == "resize_only") cfg.mode = NormalizationMode::resize_only;
      else fail(ErrorCode::parse_error, "unknown normalization mode '" + mode + "'");
    }
    if (j.contains("interpolation") && j["interpolation"].get<std::string>() != "bicubic")
      fail(ErrorCode::parse_error, "only bicubic interpolation is supported");
  } catch (const json::exception& e) {
    fail(ErrorCode::parse_error, std::string("normalization config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

NormalizationConfig NormalizationConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::missing_file, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line_no, const char* field) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !in.eof())
    fail(ErrorCode::parse_error,
         "manifest line " + std::to_string(line_no) + ": bad " + field + " '" + text + "'");
  return value;
}

}  // namespace

std::vector<SampleRecord> parse_manifest(std::istream& in, const fs::path& base_dir,
                                         std::vector<std::string>* warnings) {
  std::vector<SampleRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  std::unordered_set<std::string> seen;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!saw_header) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      if (line != kManifestHeader)
        fail(ErrorCode::parse_error, "manifest header mismatch; expected: " + std::string(kManifestHeader));
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;

    const auto cells = split_csv_line(line);
    if (cells.size() != 10)
      fail(ErrorCode::parse_error, "manifest line " + std::to_string(line_no) + ": expected 10 fields, got " +
                                       std::to_string(cells.size()));

    SampleRecord r;
    r.sample_id = cells[0];
    r.subject_id = cells[1];
    if (r.sample_id.empty() || r.subject_id.empty())
      fail(ErrorCode::parse_error, "manifest line " + std::to_string(line_no) + ": empty id");
    r.eye = parse_eye(cells[2]);
    r.session = cells[3].empty() ? 0 : parse_number<int>(cells[3], line_no, "session");
    r.image_path = cells[4];
    if (r.image_path.is_relative()) r.image_path = base_dir / r.image_path;

    const bool has_cx = !cells[5].empty(), has_cy = !cells[6].empty(), has_r = !cells[7].empty();
    if (has_cx || has_cy || has_r) {
      if (!(has_cx && has_cy && has_r))
        fail(ErrorCode::parse_error,
             "manifest line " + std::to_string(line_no) + ": partial sclera annotation");
      ScleraAnnotation s;
      s.center_x = parse_number<double>(cells[5], line_no, "sclera_cx");
      s.center_y = parse_number<double>(cells[6], line_no, "sclera_cy");
      s.radius = parse_number<double>(cells[7], line_no, "sclera_r");
      s.orientation = cells[8].empty() ? 0.0 : parse_number<double>(cells[8], line_no, "orientation");
      r.sclera = s;
    }
    if (!cells[9].empty()) r.distance_group = parse_number<int>(cells[9], line_no, "distance_group");

    if (!seen.insert(r.sample_id).second)
      fail(ErrorCode::duplicate_id, "duplicate sample_id '" + r.sample_id + "' at manifest line " +
                                        std::to_string(line_no));
    if (warnings && !fs::exists(r.image_path))
      warnings->push_back("missing image for " + r.sample_id + ": " + r.image_path.string());
    records.push_back(std::move(r));
  }
  if (!saw_header) fail(ErrorCode::parse_error, "manifest is empty (no header)");
  return records;
}

std::vector<SampleRecord> load_manifest(const fs::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::missing_file, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), warnings);
}

namespace {

std::string format_number(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

void write_manifest(const fs::path& path, std::span<const SampleRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  const fs::path base = path.parent_path();
  out << kManifestHeader << '\n';
  for (const auto& r : records) {
    fs::path image = r.image_path;
    if (!base.empty() && image.is_absolute()) {
      const auto rel = image.lexically_relative(fs::absolute(base));
      if (!rel.empty() && *rel.begin() != "..") image = rel;
    } else if (!base.empty()) {
      const auto rel = image.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") image = rel;
    }
    out << r.sample_id << ',' << r.subject_id << ',' << to_string(r.eye) << ',' << r.session << ','
        << image.generic_string() << ',';
    if (r.sclera) {
      out << format_number(r.sclera->center_x) << ',' << format_number(r.sclera->center_y) << ','
          << format_number(r.sclera->radius) << ',' << format_number(r.sclera->orientation);
    } else {
      out << ",,,";
    }
    out << ',';
    if (r.distance_group) out << *r.distance_group;
    out << '\n';
  }
  if (!out) fail(ErrorCode::io_error, "write failed for " + path.string());
}

std::size_t count_identities(std::span<const SampleRecord> records) {
  std::set<Identity> ids;
  for (const auto& r : records) ids.insert(r.identity());
  return ids.size();
}

// ---------------------------------------------------------------------------
// Normalization

double rescale_factor(const ScleraAnnotation& sclera, const NormalizationConfig& cfg) {
  if (!(sclera.radius > 0.0)) fail(ErrorCode::degenerate_radius, "sclera radius must be > 0");
  return cfg.target_sclera_radius / sclera.radius;
}

int crop_side(const NormalizationConfig& cfg) {
  return std::max(1, static_cast<int>(std::lround(cfg.crop_factor * cfg.target_sclera_radius)));
}

ScleraAnnotation implied_annotation(const NormalizationConfig& cfg) {
  const double c = (cfg.output_side - 1) / 2.0;
  const double r = cfg.target_sclera_radius * cfg.output_side / crop_side(cfg);
  return {c, c, r, 0.0};
}

cv::Mat to_gray(const cv::Mat& image) {
  if (image.empty()) fail(ErrorCode::invalid_argument, "empty image");
  if (image.depth() != CV_8U) fail(ErrorCode::invalid_argument, "only 8-bit images are supported");
  cv::Mat gray;
  switch (image.channels()) {
    case 1: gray = image.clone(); break;
    // cv::COLOR_BGR2GRAY applies the 0.299/0.587/0.114 luminance weights.
    case 3: cv::cvtColor(image, gray, cv::COLOR_BGR2GRAY); break;
    case 4: cv::cvtColor(image, gray, cv::COLOR_BGRA2GRAY); break;
    default: fail(ErrorCode::invalid_argument, "unsupported channel count");
  }
  return gray;
}

namespace {

cv::Mat resize_square(const cv::Mat& square, int side) {
  if (square.rows == side && square.cols == side) return square.clone();
  cv::Mat out;
  cv::resize(square, out, cv::Size(side, side), 0, 0, cv::INTER_CUBIC);
  return out;
}

}  // namespace

NormalizedImage normalize_image(const SampleRecord& record, const cv::Mat& image,
                                const NormalizationConfig& cfg) {
  cfg.validate();
  const cv::Mat gray = to_gray(image);
  NormalizedImage out{record.sample_id, {}, cfg};

  if (cfg.mode == NormalizationMode::resize_only) {
    const int side = std::min(gray.rows, gray.cols);
    const cv::Rect roi((gray.cols - side) / 2, (gray.rows - side) / 2, side, side);
    out.pixels = resize_square(gray(roi), cfg.output_side);
    return out;
  }

  if (!record.sclera)
    fail(ErrorCode::missing_annotation, "full normalization needs a sclera annotation for " + record.sample_id);
  const ScleraAnnotation& s = *record.sclera;
  const double scale = rescale_factor(s, cfg);
  if (s.center_x < 0 || s.center_y < 0 || s.center_x > gray.cols - 1 || s.center_y > gray.rows - 1)
    fail(ErrorCode::invalid_argument, "sclera center outside image for " + record.sample_id);

  // Forward map: rotate by -orientation and scale about the sclera center, then move
  // that center to the middle of the crop. Out-of-bounds samples are zero.
  const int side = crop_side(cfg);
  const double mid = (side - 1) / 2.0;
  cv::Mat m = cv::getRotationMatrix2D(cv::Point2f(static_cast<float>(s.center_x), static_cast<float>(s.center_y)),
                                      -s.orientation, scale);
  m.at<double>(0, 2) += mid - s.center_x;
  m.at<double>(1, 2) += mid - s.center_y;
  // Interpolate with replicated borders so edge pixels keep their value, then zero every
  // output pixel whose source position lies outside the image.
  cv::Mat crop, inside;
  cv::warpAffine(gray, crop, m, cv::Size(side, side), cv::INTER_CUBIC, cv::BORDER_REPLICATE);
  cv::warpAffine(cv::Mat(gray.size(), CV_8UC1, cv::Scalar(255)), inside, m, cv::Size(side, side), cv::INTER_NEAREST,
                 cv::BORDER_CONSTANT, cv::Scalar(0));
  crop.setTo(0, inside == 0);
  out.pixels = resize_square(crop, cfg.output_side);
  return out;
}

std::vector<NormalizedImage> normalize_batch(std::span<const SampleRecord> records, std::span<const cv::Mat> images,
                                             const NormalizationConfig& cfg, std::size_t workers) {
  if (records.size() != images.size())
    fail(ErrorCode::invalid_argument, "records and images differ in length");
  std::vector<NormalizedImage> out(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) { out[i] = normalize_image(records[i], images[i], cfg); });
  return out;
}

std::map<std::string, double> group_target_radii(std::span<const SampleRecord> records, RadiusGrouping grouping) {
  std::map<std::pair<int, int>, std::pair<double, std::size_t>> sums;
  auto key_of = [&](const SampleRecord& r) {
    return std::pair{*r.distance_group, grouping == RadiusGrouping::distance_group_and_session ? r.session : 0};
  };
  for (const auto& r : records) {
    if (!r.sclera || !r.distance_group) continue;
    auto& [sum, n] = sums[key_of(r)];
    sum += r.sclera->radius;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& r : records) {
    if (!r.sclera || !r.distance_group) continue;
    const auto& [sum, n] = sums.at(key_of(r));
    out[r.sample_id] = sum / static_cast<double>(n);
  }
  return out;
}

cv::Mat read_image(const fs::path& path) {
  cv::Mat image = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (image.empty()) fail(ErrorCode::missing_file, "cannot read image " + path.string());
  if (image.depth() != CV_8U) fail(ErrorCode::invalid_argument, "not an 8-bit image: " + path.string());
  return image;
}

void write_png(const fs::path& path, const cv::Mat& gray) {
  if (gray.type() != CV_8UC1) fail(ErrorCode::invalid_argument, "write_png expects 8-bit gray");
  if (!cv::imwrite(path.string(), gray)) fail(ErrorCode::io_error, "cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic corpora

namespace {

struct Wave {
  double amplitude, kx, ky, phase;
};

struct Blob {
  double x, y, sigma, amplitude;
};

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

cv::Mat1d prototype(std::size_t identity, std::uint64_t seed, int side) {
  auto rng = seeded(seed, identity, 0xFFFFFFFFu);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  std::vector<Wave> waves(6);
  for (auto& w : waves) {
    const double freq = 0.04 + 0.16 * u01(rng);  // cycles per pixel
    const double theta = std::numbers::pi * u01(rng);
    w = {15.0 + 20.0 * u01(rng), kTwoPi * freq * std::cos(theta), kTwoPi * freq * std::sin(theta),
         kTwoPi * u01(rng)};
  }
  std::vector<Blob> blobs(5);
  for (auto& b : blobs) {
    b = {side * u01(rng), side * u01(rng), 2.0 + 5.0 * u01(rng), (u01(rng) < 0.5 ? -1.0 : 1.0) * (25.0 + 25.0 * u01(rng))};
  }

  cv::Mat1d img(side, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double v = 128.0;
      for (const auto& w : waves) v += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase);
      for (const auto& b : blobs) {
        const double dx = x - b.x, dy = y - b.y;
        v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      img(y, x) = v;
    }
  }
  return img;
}

cv::Mat perturb(const cv::Mat1d& proto, double noise_level, std::mt19937_64& rng) {
  cv::Mat1d work = proto.clone();
  if (noise_level > 0.0) {
    std::uniform_real_distribution<double> shift(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    // Sub-pixel translation jitter grows with the noise level.
    const double dx = 4.0 * noise_level * shift(rng);
    const double dy = 4.0 * noise_level * shift(rng);
    cv::Mat1d moved;
    const cv::Matx23d m(1, 0, dx, 0, 1, dy);
    cv::warpAffine(proto, moved, m, proto.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT);
    work = moved;
    const double sigma = 64.0 * noise_level;
    for (int y = 0; y < work.rows; ++y)
      for (int x = 0; x < work.cols; ++x) work(y, x) += sigma * gauss(rng);
  }
  cv::Mat out;
  work.convertTo(out, CV_8U);  // rounds and saturates
  return out;
}

}  // namespace

SynthCorpus synth_corpus(std::size_t n_identities, std::size_t samples_per_identity, double noise_level,
                         std::uint64_t seed, const SynthOptions& options) {
  if (n_identities < 1 || samples_per_identity < 1)
    fail(ErrorCode::invalid_argument, "synth_corpus needs at least one identity and one sample");
  if (!(noise_level >= 0.0) || !std::isfinite(noise_level))
    fail(ErrorCode::invalid_argument, "noise_level must be finite and >= 0");
  if (options.image_side < 16) fail(ErrorCode::invalid_argument, "synthetic image side must be >= 16");

  const int side = options.image_side;
  SynthCorpus corpus;
  corpus.records.reserve(n_identities * samples_per_identity);
  corpus.images.reserve(n_identities * samples_per_identity);
  char buf[64];
  for (std::size_t id = 0; id < n_identities; ++id) {
    const cv::Mat1d proto = prototype(id, seed, side);
    for (std::size_t s = 0; s < samples_per_identity; ++s) {
      auto rng = seeded(seed, id, s);
      SampleRecord r;
      std::snprintf(buf, sizeof buf, "id%05zu_s%03zu", id, s);
      r.sample_id = buf;
      std::snprintf(buf, sizeof buf, "subj%05zu", id / 2);
      r.subject_id = buf;
      r.eye = id % 2 == 0 ? Eye::left : Eye::right;
      r.session = static_cast<int>(s);
      r.image_path = r.sample_id + ".png";
      const double c = (side - 1) / 2.0;
      r.sclera = ScleraAnnotation{c, c, side / 7.6, 0.0};
      corpus.records.push_back(std::move(r));
      corpus.images.push_back(perturb(proto, noise_level, rng));
    }
  }
  return corpus;
}

void write_corpus(const fs::path& dir, const SynthCorpus& corpus) {
  fs::create_directories(dir);
  std::vector<SampleRecord> records = corpus.records;
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].image_path = dir / records[i].image_path.filename();
    write_png(records[i].image_path, corpus.images[i]);
  }
  write_manifest(dir / "manifest.csv", records);
}

}  // namespace periscope
