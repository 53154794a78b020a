#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "periscope/error.hpp"
#include "periscope/protocol.hpp"
#include "support.hpp"

using namespace periscope;
using testing_support::labeled_records;

namespace {

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

std::set<Identity> identities(const PartitionSpec& p, const std::vector<SampleRecord>& records) {
  const auto members = as_set(p.member_sample_ids);
  std::set<Identity> out;
  for (const auto& r : records)
    if (members.contains(r.sample_id)) out.insert(r.identity());
  return out;
}

struct TableRow {
  const char* name;
  std::size_t identities;
  std::size_t per_identity;
  Protocol protocol;
  SplitRule rule;
  std::size_t split;  // index into make_partition's result
  PairCounts expected;
};

}  // namespace

TEST(Partition, PolyUCloseWorld) {
  const auto records = labeled_records(418, 15);
  const auto parts = make_partition(records, Protocol::cw, {5, 0});
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].member_sample_ids.size(), 4180u);
  EXPECT_EQ(parts[0].identity_count, 418u);
  EXPECT_EQ(parts[1].member_sample_ids.size(), 2090u);
  EXPECT_EQ(parts[0].id(), "cw-train");
  EXPECT_EQ(parts[1].id(), "cw-test");
}

TEST(Partition, CrossEyedOpenWorld) {
  const auto records = labeled_records(240, 8);
  const auto parts = make_partition(records, Protocol::ow, {0, 120});
  ASSERT_EQ(parts.size(), 2u);
  for (const auto& p : parts) {
    EXPECT_EQ(p.member_sample_ids.size(), 960u);
    EXPECT_EQ(p.identity_count, 120u);
  }
}

TEST(Partition, SmallestCompleteCorpus) {
  const auto records = labeled_records(1, 2);
  const auto parts = make_partition(records, Protocol::complete);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].member_sample_ids.size(), 2u);
  EXPECT_EQ(parts[0].id(), "complete");
}

TEST(Partition, CloseWorldTakesTheLastSamplesInManifestOrder) {
  auto records = labeled_records(2, 4);
  std::reverse(records.begin(), records.end());  // manifest order is now s003, s002, ...
  const auto parts = make_partition(records, Protocol::cw, {1, 0});
  EXPECT_EQ(as_set(parts[1].member_sample_ids), (std::set<std::string>{"id00000_s000", "id00001_s000"}));
}

TEST(Partition, InfeasibleRules) {
  const auto records = labeled_records(4, 3);
  try {
    make_partition(records, Protocol::cw, {3, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::infeasible_rule);
  }
  EXPECT_THROW(make_partition(records, Protocol::cw, {0, 0}), Error);
  EXPECT_THROW(make_partition(records, Protocol::ow, {0, 4}), Error);
  EXPECT_THROW(make_partition(records, Protocol::ow, {0, 0}), Error);
}

TEST(Partition, DuplicateSampleIdsAreRejected) {
  auto records = labeled_records(2, 2);
  records[3].sample_id = records[0].sample_id;
  EXPECT_THROW(make_partition(records, Protocol::complete), Error);
}

TEST(Partition, SplitsPartitionTheCorpus) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t ids = 2 + rng() % 20, per = 2 + rng() % 6;
    auto records = labeled_records(ids, per);
    std::shuffle(records.begin(), records.end(), rng);
    const std::size_t k = 1 + rng() % (per - 1);
    const auto cw = make_partition(records, Protocol::cw, {k, 0});
    const auto train = as_set(cw[0].member_sample_ids), test = as_set(cw[1].member_sample_ids);
    EXPECT_EQ(train.size() + test.size(), records.size());
    for (const auto& id : train) EXPECT_FALSE(test.contains(id));
    EXPECT_EQ(identities(cw[0], records), identities(cw[1], records));
    EXPECT_EQ(test.size(), ids * k);

    const std::size_t half = 1 + rng() % (ids - 1);
    const auto ow = make_partition(records, Protocol::ow, {0, half});
    const auto a = identities(ow[0], records), b = identities(ow[1], records);
    EXPECT_EQ(a.size(), half);
    EXPECT_EQ(a.size() + b.size(), ids);
    for (const auto& i : a) EXPECT_FALSE(b.contains(i));
    EXPECT_EQ(ow[0].member_sample_ids.size() + ow[1].member_sample_ids.size(), records.size());
  }
}

TEST(Partition, OpenWorldKeepsBothEyesTogetherWhenHalfIsEven) {
  const auto records = labeled_records(20, 3);  // identities 2s and 2s+1 share a subject
  const auto ow = make_partition(records, Protocol::ow, {0, 10});
  std::set<std::string> train_subjects, test_subjects;
  for (const auto& r : records) {
    const bool in_train = as_set(ow[0].member_sample_ids).contains(r.sample_id);
    (in_train ? train_subjects : test_subjects).insert(r.subject_id);
  }
  for (const auto& s : train_subjects) EXPECT_FALSE(test_subjects.contains(s));
}

TEST(Partition, FileRoundTrip) {
  testing_support::TempDir dir;
  const auto records = labeled_records(6, 4);
  const auto parts = make_partition(records, Protocol::cw, {1, 0});
  save_partition(dir / "p.json", parts[1]);
  const auto back = load_partition(dir / "p.json", records);
  EXPECT_EQ(back.member_sample_ids, parts[1].member_sample_ids);
  EXPECT_EQ(back.protocol, Protocol::cw);
  EXPECT_EQ(back.split, Split::test);
  EXPECT_EQ(back.identity_count, 6u);
  auto fewer = records;
  fewer.pop_back();
  EXPECT_THROW(load_partition(dir / "p.json", fewer), Error);
}

// Every genuine/impostor count of the dataset summary table.
TEST(Pairs, PublishedPartitionCounts) {
  const std::vector<TableRow> rows = {
      {"PolyU CW train", 418, 15, Protocol::cw, {5, 0}, 0, {18810, 8715300}},
      {"PolyU CW test", 418, 15, Protocol::cw, {5, 0}, 1, {4180, 2178825}},
      {"PolyU OW train", 418, 15, Protocol::ow, {0, 209}, 0, {21945, 4890600}},
      {"PolyU OW test", 418, 15, Protocol::ow, {0, 209}, 1, {21945, 4890600}},
      {"Cross-Eyed complete", 240, 8, Protocol::complete, {}, 0, {6720, 1835520}},
      {"Cross-Eyed CW train", 240, 8, Protocol::cw, {3, 0}, 0, {2400, 717000}},
      {"Cross-Eyed CW test", 240, 8, Protocol::cw, {3, 0}, 1, {720, 258120}},
      {"Cross-Eyed OW train", 240, 8, Protocol::ow, {0, 120}, 0, {3360, 456960}},
      {"Cross-Eyed OW test", 240, 8, Protocol::ow, {0, 120}, 1, {3360, 456960}},
      {"IMP complete", 124, 5, Protocol::complete, {}, 0, {1240, 190650}},
  };
  for (const auto& row : rows) {
    const auto records = labeled_records(row.identities, row.per_identity);
    const auto parts = make_partition(records, row.protocol, row.rule);
    const auto pairs = enumerate_pairs(parts.at(row.split), records);
    EXPECT_EQ(pairs.counts(), row.expected) << row.name;
  }
}

TEST(Pairs, CanonicalRowMajorOrder) {
  const auto records = labeled_records(3, 3);
  const auto pairs = enumerate_pairs(make_partition(records, Protocol::complete)[0], records);
  EXPECT_TRUE(std::is_sorted(pairs.sample_ids.begin(), pairs.sample_ids.end()));
  auto check = [](const std::vector<IndexPair>& v) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      EXPECT_LT(v[k].first, v[k].second);
      if (k > 0)
        EXPECT_TRUE(v[k - 1].first < v[k].first || (v[k - 1].first == v[k].first && v[k - 1].second < v[k].second));
    }
  };
  check(pairs.genuine);
  check(pairs.impostor);
}

TEST(Pairs, ClosedFormAndLabelsOnRandomCorpora) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<SampleRecord> records;
    std::vector<std::size_t> sizes;
    const std::size_t ids = 1 + rng() % 15;
    for (std::size_t i = 0; i < ids; ++i) {
      const std::size_t n = 1 + rng() % 7;
      sizes.push_back(n);
      for (std::size_t s = 0; s < n; ++s) {
        SampleRecord r;
        r.sample_id = "t" + std::to_string(rng() % 1000000) + "_" + std::to_string(i) + "_" + std::to_string(s);
        r.subject_id = "subj" + std::to_string(i);
        records.push_back(r);
      }
    }
    if (records.size() < 2) continue;
    std::shuffle(records.begin(), records.end(), rng);
    const auto pairs = enumerate_pairs(make_partition(records, Protocol::complete)[0], records);
    EXPECT_EQ(pairs.counts(), closed_form_pair_counts(sizes));
    const std::size_t n = records.size();
    EXPECT_EQ(pairs.genuine.size() + pairs.impostor.size(), n * (n - 1) / 2);

    std::map<std::string, std::string> subject;
    for (const auto& r : records) subject[r.sample_id] = r.subject_id;
    for (const auto& p : pairs.genuine)
      EXPECT_EQ(subject[pairs.sample_ids[p.first]], subject[pairs.sample_ids[p.second]]);
    for (const auto& p : pairs.impostor)
      EXPECT_NE(subject[pairs.sample_ids[p.first]], subject[pairs.sample_ids[p.second]]);

    // Independent of record order.
    auto reordered = records;
    std::reverse(reordered.begin(), reordered.end());
    const auto again = enumerate_pairs(make_partition(reordered, Protocol::complete)[0], reordered);
    EXPECT_EQ(again.sample_ids, pairs.sample_ids);
    EXPECT_EQ(again.genuine, pairs.genuine);
    EXPECT_EQ(again.impostor, pairs.impostor);
  }
}

TEST(Pairs, EyesAreSeparateIdentities) {
  auto records = labeled_records(2, 2);  // one subject, two eyes
  const auto pairs = enumerate_pairs(make_partition(records, Protocol::complete)[0], records);
  EXPECT_EQ(pairs.counts(), (PairCounts{2, 4}));
}

TEST(Pairs, FileRoundTripAndLayout) {
  testing_support::TempDir dir;
  const auto records = labeled_records(4, 3);
  const auto pairs = enumerate_pairs(make_partition(records, Protocol::complete)[0], records);
  save_pairs(dir / "pairs.bin", pairs);
  EXPECT_EQ(std::filesystem::file_size(dir / "pairs.bin"), 9u * 66u);
  const auto bytes = testing_support::slurp(dir / "pairs.bin");
  // First record is (0, 1), a genuine pair.
  EXPECT_EQ(bytes.substr(0, 9), std::string("\0\0\0\0\1\0\0\0\1", 9));
  const auto back = load_pairs(dir / "pairs.bin");
  EXPECT_EQ(back.sample_ids, pairs.sample_ids);
  EXPECT_EQ(back.genuine, pairs.genuine);
  EXPECT_EQ(back.impostor, pairs.impostor);
  EXPECT_EQ(back.partition_id, "complete");

  std::filesystem::resize_file(dir / "pairs.bin", 9u * 65u);
  EXPECT_THROW(load_pairs(dir / "pairs.bin"), Error);
}
