#include "periscope/protocol.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "binio.hpp"
#include "json.hpp"
#include "periscope/error.hpp"

namespace periscope {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::cw: return "cw";
    case Protocol::ow: return "ow";
    case Protocol::complete: return "complete";
  }
  return "?";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::complete: return "complete";
  }
  return "?";
}

Protocol parse_protocol(const std::string& text) {
  if (text == "cw" || text == "CW") return Protocol::cw;
  if (text == "ow" || text == "OW") return Protocol::ow;
  if (text == "complete" || text == "Complete") return Protocol::complete;
  fail(ErrorCode::parse_error, "unknown protocol '" + text + "'");
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  if (text == "complete") return Split::complete;
  fail(ErrorCode::parse_error, "unknown split '" + text + "'");
}

std::string PartitionSpec::id() const {
  if (protocol == Protocol::complete) return "complete";
  return to_string(protocol) + "-" + to_string(split);
}

namespace {

struct IdentityGroup {
  Identity identity;
  std::vector<std::size_t> rows;  // manifest order
};

// Identities ordered subject-major: subjects by first appearance, then each subject's
// eyes by their first appearance.
std::vector<IdentityGroup> group_by_identity(std::span<const SampleRecord> records) {
  std::vector<IdentityGroup> groups;
  std::map<Identity, std::size_t> index;
  std::unordered_map<std::string, std::size_t> subject_rank;
  for (std::size_t row = 0; row < records.size(); ++row) {
    const auto& r = records[row];
    subject_rank.try_emplace(r.subject_id, subject_rank.size());
    auto [it, inserted] = index.try_emplace(r.identity(), groups.size());
    if (inserted) groups.push_back({r.identity(), {}});
    groups[it->second].rows.push_back(row);
  }
  std::stable_sort(groups.begin(), groups.end(), [&](const IdentityGroup& a, const IdentityGroup& b) {
    return subject_rank.at(a.identity.subject_id) < subject_rank.at(b.identity.subject_id);
  });
  return groups;
}

PartitionSpec collect(std::span<const SampleRecord> records, Protocol protocol, Split split,
                      std::vector<std::size_t> rows, std::size_t identity_count) {
  std::sort(rows.begin(), rows.end());
  PartitionSpec spec{protocol, split, {}, identity_count};
  spec.member_sample_ids.reserve(rows.size());
  for (auto row : rows) spec.member_sample_ids.push_back(records[row].sample_id);
  return spec;
}

}  // namespace

std::vector<PartitionSpec> make_partition(std::span<const SampleRecord> records, Protocol protocol,
                                          const SplitRule& rule) {
  {
    std::set<std::string> ids;
    for (const auto& r : records)
      if (!ids.insert(r.sample_id).second) fail(ErrorCode::duplicate_id, "duplicate sample_id '" + r.sample_id + "'");
  }
  const auto groups = group_by_identity(records);

  switch (protocol) {
    case Protocol::complete: {
      std::vector<std::size_t> rows(records.size());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
      return {collect(records, protocol, Split::complete, std::move(rows), groups.size())};
    }
    case Protocol::cw: {
      const std::size_t k = rule.test_per_identity;
      if (k == 0) fail(ErrorCode::infeasible_rule, "CW rule needs test_per_identity >= 1");
      std::vector<std::size_t> train, test;
      for (const auto& g : groups) {
        if (g.rows.size() <= k)
          fail(ErrorCode::infeasible_rule, "identity " + g.identity.subject_id + "/" + to_string(g.identity.eye) +
                                               " has " + std::to_string(g.rows.size()) +
                                               " samples, needs more than the test quota " + std::to_string(k));
        const auto cut = g.rows.end() - static_cast<std::ptrdiff_t>(k);
        train.insert(train.end(), g.rows.begin(), cut);
        test.insert(test.end(), cut, g.rows.end());
      }
      return {collect(records, protocol, Split::train, std::move(train), groups.size()),
              collect(records, protocol, Split::test, std::move(test), groups.size())};
    }
    case Protocol::ow: {
      const std::size_t k = rule.train_identities;
      if (k == 0 || k >= groups.size())
        fail(ErrorCode::infeasible_rule, "OW rule needs 0 < train_identities < " + std::to_string(groups.size()));
      std::vector<std::size_t> train, test;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& dst = g < k ? train : test;
        dst.insert(dst.end(), groups[g].rows.begin(), groups[g].rows.end());
      }
      return {collect(records, protocol, Split::train, std::move(train), k),
              collect(records, protocol, Split::test, std::move(test), groups.size() - k)};
    }
  }
  fail(ErrorCode::invalid_argument, "unknown protocol");
}

void save_partition(const fs::path& path, const PartitionSpec& spec) {
  json j;
  j["protocol"] = to_string(spec.protocol);
  j["split"] = to_string(spec.split);
  j["sample_ids"] = spec.member_sample_ids;
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) fail(ErrorCode::io_error, "write failed for " + path.string());
}

PartitionSpec load_partition(const fs::path& path, std::span<const SampleRecord> records) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::missing_file, "cannot open partition " + path.string());
  PartitionSpec spec;
  try {
    const json j = json::parse(in);
    spec.protocol = parse_protocol(j.at("protocol").get<std::string>());
    spec.split = parse_split(j.at("split").get<std::string>());
    spec.member_sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::parse_error, "partition " + path.string() + ": " + e.what());
  }
  std::unordered_map<std::string, const SampleRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.sample_id, &r);
  std::set<Identity> ids;
  for (const auto& sid : spec.member_sample_ids) {
    const auto it = by_id.find(sid);
    if (it == by_id.end()) fail(ErrorCode::missing_feature, "partition member '" + sid + "' not in manifest");
    ids.insert(it->second->identity());
  }
  spec.identity_count = ids.size();
  return spec;
}

PairList enumerate_pairs(const PartitionSpec& split, std::span<const SampleRecord> records) {
  if (split.member_sample_ids.empty()) fail(ErrorCode::invalid_argument, "cannot enumerate pairs of an empty split");
  std::unordered_map<std::string, const SampleRecord*> by_id;
  by_id.reserve(records.size());
  for (const auto& r : records) by_id.emplace(r.sample_id, &r);

  PairList pairs;
  pairs.partition_id = split.id();
  pairs.sample_ids = split.member_sample_ids;
  std::sort(pairs.sample_ids.begin(), pairs.sample_ids.end());
  if (std::adjacent_find(pairs.sample_ids.begin(), pairs.sample_ids.end()) != pairs.sample_ids.end())
    fail(ErrorCode::duplicate_id, "split lists a sample twice");
  if (pairs.sample_ids.size() > 0xFFFFFFFFull) fail(ErrorCode::invalid_argument, "split too large for u32 indices");

  // Dense identity labels in sorted-id order.
  std::vector<std::uint32_t> label(pairs.sample_ids.size());
  std::map<Identity, std::uint32_t> label_of;
  std::map<std::uint32_t, std::uint64_t> class_sizes;
  for (std::size_t i = 0; i < pairs.sample_ids.size(); ++i) {
    const auto it = by_id.find(pairs.sample_ids[i]);
    if (it == by_id.end())
      fail(ErrorCode::missing_feature, "split member '" + pairs.sample_ids[i] + "' not in records");
    label[i] = label_of.try_emplace(it->second->identity(), static_cast<std::uint32_t>(label_of.size())).first->second;
    ++class_sizes[label[i]];
  }

  const std::uint64_t n = label.size();
  std::uint64_t genuine = 0;
  for (const auto& [_, c] : class_sizes) genuine += c * (c - 1) / 2;
  pairs.genuine.reserve(genuine);
  pairs.impostor.reserve(n * (n - 1) / 2 - genuine);

  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t li = label[i];
    for (std::uint32_t j = i + 1; j < n; ++j) {
      if (label[j] == li) pairs.genuine.push_back({i, j});
      else pairs.impostor.push_back({i, j});
    }
  }
  return pairs;
}

PairCounts closed_form_pair_counts(std::span<const std::size_t> samples_per_identity) {
  std::uint64_t n = 0, genuine = 0;
  for (auto c : samples_per_identity) {
    n += c;
    genuine += static_cast<std::uint64_t>(c) * (c - 1) / 2;
  }
  const std::uint64_t total = n == 0 ? 0 : n * (n - 1) / 2;
  return {genuine, total - genuine};
}

void save_pairs(const fs::path& path, const PairList& pairs) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    // Merge both lists back into row-major order.
    auto g = pairs.genuine.begin(), i = pairs.impostor.begin();
    auto before = [](const IndexPair& a, const IndexPair& b) {
      return a.first != b.first ? a.first < b.first : a.second < b.second;
    };
    auto put = [&](const IndexPair& p, std::uint8_t label) {
      binio::put_u32(out, p.first);
      binio::put_u32(out, p.second);
      binio::put_u8(out, label);
    };
    while (g != pairs.genuine.end() || i != pairs.impostor.end()) {
      if (i == pairs.impostor.end() || (g != pairs.genuine.end() && before(*g, *i))) put(*g++, 1);
      else put(*i++, 0);
    }
    if (!out) fail(ErrorCode::io_error, "write failed for " + path.string());
  }
  json side;
  side["format"] = "periscope-pairs-v1";
  side["partition"] = pairs.partition_id;
  side["genuine_count"] = pairs.genuine.size();
  side["impostor_count"] = pairs.impostor.size();
  side["record_bytes"] = 9;
  side["sample_ids"] = pairs.sample_ids;
  std::ofstream out(fs::path(path.string() + ".json"), std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write sidecar for " + path.string());
  out << side.dump(1) << '\n';
}

PairList load_pairs(const fs::path& path) {
  PairList pairs;
  std::uint64_t genuine_count = 0, impostor_count = 0;
  {
    std::ifstream side(fs::path(path.string() + ".json"));
    if (!side) fail(ErrorCode::missing_file, "missing pair sidecar " + path.string() + ".json");
    try {
      const json j = json::parse(side);
      pairs.partition_id = j.value("partition", "");
      genuine_count = j.at("genuine_count").get<std::uint64_t>();
      impostor_count = j.at("impostor_count").get<std::uint64_t>();
      pairs.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      fail(ErrorCode::parse_error, "pair sidecar: " + std::string(e.what()));
    }
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_file, "cannot open " + path.string());
  pairs.genuine.reserve(genuine_count);
  pairs.impostor.reserve(impostor_count);
  const std::uint64_t total = genuine_count + impostor_count;
  const auto n = static_cast<std::uint32_t>(pairs.sample_ids.size());
  std::vector<char> buf(9 * 65536);
  std::uint64_t done = 0;
  while (done < total) {
    const std::uint64_t chunk = std::min<std::uint64_t>(65536, total - done);
    binio::read_exact(in, buf.data(), chunk * 9, "pair file");
    for (std::uint64_t k = 0; k < chunk; ++k) {
      IndexPair p;
      std::memcpy(&p.first, &buf[k * 9], 4);
      std::memcpy(&p.second, &buf[k * 9 + 4], 4);
      const auto label = static_cast<std::uint8_t>(buf[k * 9 + 8]);
      if (p.first >= n || p.second >= n || p.first >= p.second || label > 1)
        fail(ErrorCode::parse_error, "invalid pair record " + std::to_string(done + k));
      (label ? pairs.genuine : pairs.impostor).push_back(p);
    }
    done += chunk;
  }
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCode::parse_error, "trailing bytes in pair file");
  if (pairs.genuine.size() != genuine_count || pairs.impostor.size() != impostor_count)
    fail(ErrorCode::parse_error, "pair file counts disagree with sidecar");
  return pairs;
}

}  // namespace periscope
