#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace periscope {

enum class Eye { left, right };

std::string to_string(Eye eye);
Eye parse_eye(const std::string& text);

/// Sclera circle in source-image pixel coordinates. Orientation in degrees, 0 when unannotated.
struct ScleraAnnotation {
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 0.0;
  double orientation = 0.0;
};

/// Each eye of a subject is a separate identity.
struct Identity {
  std::string subject_id;
  Eye eye = Eye::left;

  auto operator<=>(const Identity&) const = default;
};

struct SampleRecord {
  std::string sample_id;
  std::string subject_id;
  Eye eye = Eye::left;
  int session = 0;
  std::filesystem::path image_path;
  std::optional<ScleraAnnotation> sclera;
  std::optional<int> distance_group;

  Identity identity() const { return {subject_id, eye}; }
};

enum class NormalizationMode { full, resize_only };
enum class Interpolation { bicubic };

struct NormalizationConfig {
  double target_sclera_radius = 30.0;
  double crop_factor = 7.6;
  int output_side = 224;
  NormalizationMode mode = NormalizationMode::full;
  Interpolation interpolation = Interpolation::bicubic;

  void validate() const;
  std::string to_json() const;
  static NormalizationConfig from_json(const std::string& text);
  static NormalizationConfig load(const std::filesystem::path& path);
};

struct NormalizedImage {
  std::string sample_id;
  cv::Mat pixels;  // CV_8UC1, output_side x output_side
  NormalizationConfig provenance;
};

// ---------------------------------------------------------------------------
// Manifest I/O

inline constexpr const char* kManifestHeader =
    "sample_id,subject_id,eye,session,image_path,sclera_cx,sclera_cy,sclera_r,orientation,distance_group";

/// Parses manifest CSV text. Relative image paths are resolved against base_dir.
/// Records whose image file does not exist produce one warning each in `warnings`.
std::vector<SampleRecord> parse_manifest(std::istream& in, const std::filesystem::path& base_dir,
                                         std::vector<std::string>* warnings = nullptr);

std::vector<SampleRecord> load_manifest(const std::filesystem::path& path,
                                        std::vector<std::string>* warnings = nullptr);

/// Writes records with image paths made relative to the manifest directory when possible.
void write_manifest(const std::filesystem::path& path, std::span<const SampleRecord> records);

std::size_t count_identities(std::span<const SampleRecord> records);

// ---------------------------------------------------------------------------
// Normalization

/// Scale applied to the source image so the sclera radius becomes the target radius.
double rescale_factor(const ScleraAnnotation& sclera, const NormalizationConfig& cfg);

/// Side of the square cropped around the sclera center before the final resize.
int crop_side(const NormalizationConfig& cfg);

/// Annotation describing the sclera inside a full-mode output image.
ScleraAnnotation implied_annotation(const NormalizationConfig& cfg);

/// Converts 1-, 3- (BGR) or 4-channel (BGRA) 8-bit images to single-channel luminance.
cv::Mat to_gray(const cv::Mat& image);

NormalizedImage normalize_image(const SampleRecord& record, const cv::Mat& image,
                                const NormalizationConfig& cfg);

/// Normalizes a batch on `workers` threads; output order follows `records`.
std::vector<NormalizedImage> normalize_batch(std::span<const SampleRecord> records,
                                             std::span<const cv::Mat> images,
                                             const NormalizationConfig& cfg, std::size_t workers);

enum class RadiusGrouping { distance_group, distance_group_and_session };

/// Mean annotated sclera radius per group, returned per sample_id. Records without
/// annotation or distance_group are skipped.
std::map<std::string, double> group_target_radii(std::span<const SampleRecord> records,
                                                 RadiusGrouping grouping);

cv::Mat read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const cv::Mat& gray);

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SynthCorpus {
  std::vector<SampleRecord> records;
  std::vector<cv::Mat> images;  // CV_8UC1, parallel to records
};

struct SynthOptions {
  int image_side = 64;
};

/// Labeled corpus of procedural textures: one prototype per identity, each sample is the
/// prototype plus seeded perturbation scaled by noise_level. Pure function of its arguments.
SynthCorpus synth_corpus(std::size_t n_identities, std::size_t samples_per_identity,
                         double noise_level, std::uint64_t seed, const SynthOptions& options = {});

/// Writes one PNG per sample plus manifest.csv into `dir`.
void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

}  // namespace periscope
