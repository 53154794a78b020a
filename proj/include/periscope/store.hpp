#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "periscope/handfeat.hpp"
#include "periscope/simeng.hpp"

// Binary artifacts exchanged between CLI stages. Layouts are documented in docs/formats.md.
namespace periscope {

/// `config` is an opaque JSON string describing how the features were made; it is stored
/// verbatim together with its FNV-1a fingerprint.
void save_features(const std::filesystem::path& path, const FeatureMatrix& features, const std::string& config = "{}");
FeatureMatrix load_features(const std::filesystem::path& path, std::string* config = nullptr);

void save_keypoints(const std::filesystem::path& path, std::span<const KeypointSet> sets);
std::vector<KeypointSet> load_keypoints(const std::filesystem::path& path);

void save_scores(const std::filesystem::path& path, const ScoreSet& scores);
ScoreSet load_scores(const std::filesystem::path& path);

}  // namespace periscope
