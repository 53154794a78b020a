#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "periscope/corpus.hpp"

namespace periscope {

/// Close-World, Open-World, or the whole corpus as one test split.
enum class Protocol { cw, ow, complete };
enum class Split { train, test, complete };

std::string to_string(Protocol p);
std::string to_string(Split s);
Protocol parse_protocol(const std::string& text);
Split parse_split(const std::string& text);

/// CW: the last `test_per_identity` samples of every identity (manifest order) form the test split.
/// OW: the first `train_identities` identities form the train split, the rest the test split.
/// Identities are ordered subject-major (subjects by first appearance, then their eyes by first
/// appearance) so both eyes of a subject land in the same half whenever the quota allows.
struct SplitRule {
  std::size_t test_per_identity = 0;
  std::size_t train_identities = 0;
};

struct PartitionSpec {
  Protocol protocol = Protocol::complete;
  Split split = Split::complete;
  std::vector<std::string> member_sample_ids;  // manifest order
  std::size_t identity_count = 0;

  /// e.g. "cw-train", "complete".
  std::string id() const;
};

std::vector<PartitionSpec> make_partition(std::span<const SampleRecord> records, Protocol protocol,
                                          const SplitRule& rule = {});

void save_partition(const std::filesystem::path& path, const PartitionSpec& spec);
/// Reads a partition file and validates its members against `records`.
PartitionSpec load_partition(const std::filesystem::path& path, std::span<const SampleRecord> records);

struct IndexPair {
  std::uint32_t first = 0;
  std::uint32_t second = 0;

  bool operator==(const IndexPair&) const = default;
};

struct PairCounts {
  std::uint64_t genuine = 0;
  std::uint64_t impostor = 0;

  bool operator==(const PairCounts&) const = default;
};

/// Unordered, deduplicated comparison pairs. Indices refer to `sample_ids`, which is sorted
/// lexicographically; every pair has first < second and pairs appear in row-major order.
struct PairList {
  std::string partition_id;
  std::vector<std::string> sample_ids;
  std::vector<IndexPair> genuine;
  std::vector<IndexPair> impostor;

  PairCounts counts() const { return {genuine.size(), impostor.size()}; }
};

PairList enumerate_pairs(const PartitionSpec& split, std::span<const SampleRecord> records);

/// G = sum_id C(n_id, 2), I = C(n, 2) - G.
PairCounts closed_form_pair_counts(std::span<const std::size_t> samples_per_identity);

/// Pair file: packed little-endian (u32 first, u32 second, u8 label) triples, label 1 = genuine,
/// in row-major pair order. The sidecar `<path>.json` holds the sample-id table and counts.
void save_pairs(const std::filesystem::path& path, const PairList& pairs);
PairList load_pairs(const std::filesystem::path& path);

}  // namespace periscope
