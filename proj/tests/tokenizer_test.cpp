// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "test_util.hpp"
#include "trainlab/bpe.hpp"

namespace trainlab {
namespace {

std::size_t num_tokens_for(std::size_t merges_wanted) { return kByteAlphabet + merges_wanted; }

TEST(TrainDomainBpe, HandTraces) {
  const DomainVocab abab = train_domain_bpe({"d", {"abab"}}, num_tokens_for(1));
  ASSERT_EQ(abab.merges.size(), 1u);
  EXPECT_EQ(abab.merges[0], MergeRule("a", "b"));
  EXPECT_EQ(abab.tokens.back(), "ab");

  const DomainVocab bytes = train_domain_bpe({"d", {"abab"}}, 256);
  EXPECT_TRUE(bytes.merges.empty());
  EXPECT_EQ(bytes.tokens.size(), 256u);

  const DomainVocab aaaa = train_domain_bpe({"d", {"aaaa"}}, num_tokens_for(2));
  ASSERT_EQ(aaaa.merges.size(), 2u);
  EXPECT_EQ(aaaa.tokens[256], "aa");
  EXPECT_EQ(aaaa.tokens[257], "aaaa");
  EXPECT_FALSE(aaaa.truncated);
}

TEST(TrainDomainBpe, TieBreakAndTruncation) {
  const DomainVocab v = train_domain_bpe({"d", {"dcba", "abcd"}}, num_tokens_for(1));
  EXPECT_EQ(v.merges[0], MergeRule("a", "b"));
  const DomainVocab small = train_domain_bpe({"d", {"xy"}}, 300);
  EXPECT_TRUE(small.truncated);
  EXPECT_EQ(small.tokens.size(), 257u);
  EXPECT_THROW(train_domain_bpe({"d", {}}, 300), ArgumentError);
  EXPECT_THROW(train_domain_bpe({"d", {"ab"}}, 255), ArgumentError);
}

std::string random_text(std::mt19937_64& rng, std::size_t len, const std::string& alphabet) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += alphabet[testing::random_size(rng, 0, alphabet.size() - 1)];
  return s;
}

std::string random_bytes(std::mt19937_64& rng, std::size_t len) {
  std::string s(len, '\0');
  for (char& c : s) c = static_cast<char>(testing::random_size(rng, 0, 255));
  return s;
}

TEST(TrainDomainBpe, MatchesNaiveOracle) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::string> docs;
    const std::string alphabet = trial % 2 ? "ab" : "abcde\xe4\xb8\xad";
    for (std::size_t d = testing::random_size(rng, 1, 5); d > 0; --d) {
      docs.push_back(random_text(rng, testing::random_size(rng, 0, 60), alphabet));
    }
    const std::size_t merges = testing::random_size(rng, 0, 30);
    const auto expected = oracle::naive_bpe_merges(docs, merges);
    // Merges that rebuild an existing string add no token, so train to the
    // token count the oracle's merges produce.
    std::set<std::string> toks;
    for (const auto& [l, r] : expected) toks.insert(l + r);
    const DomainVocab v = train_domain_bpe({"d", docs}, 256 + toks.size());
    ASSERT_GE(v.merges.size(), toks.size());
    const std::size_t n = std::min(v.merges.size(), expected.size());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(v.merges[i], expected[i]) << "merge " << i;
  }
}

TEST(MergeVocabs, Examples) {
  const auto disjoint = UnifiedVocab::from_token_lists({{"x", {"a", "b", "c"}}, {"y", {"d", "e", "f", "g"}}}, {});
  EXPECT_EQ(disjoint.size(), 7u);
  const auto dedup = UnifiedVocab::from_token_lists({{"x", {"ab", "cd"}}, {"y", {"cd", "ef"}}}, {});
  EXPECT_EQ(dedup.size(), 3u);
  EXPECT_EQ(dedup.provenance()[1].count, 1u);
  EXPECT_THROW(UnifiedVocab::from_token_lists({{"x", {"a"}}}, {"<s>", "<s>"}), ArgumentError);
  EXPECT_THROW(UnifiedVocab::from_token_lists({{"x", {"a"}}, {"x", {"b"}}}, {}), ArgumentError);
  EXPECT_THROW(merge_vocabs({}), ArgumentError);
}

TEST(MergeVocabs, SizeEqualsSetUnion) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<DomainVocab> vocabs;
    std::set<std::string> all;
    const std::vector<std::string> specials{"<eod>", "<pad>"};
    all.insert(specials.begin(), specials.end());
    for (std::size_t d = testing::random_size(rng, 1, 4); d > 0; --d) {
      std::vector<std::string> docs;
      for (int i = 0; i < 3; ++i) docs.push_back(random_text(rng, testing::random_size(rng, 5, 80), "abcdxyz"));
      vocabs.push_back(train_domain_bpe({"dom" + std::to_string(d), docs}, 256 + testing::random_size(rng, 0, 40)));
      all.insert(vocabs.back().tokens.begin(), vocabs.back().tokens.end());
    }
    const UnifiedVocab u = merge_vocabs(vocabs, specials);
    EXPECT_EQ(u.size(), all.size());
    std::size_t prov = u.num_specials();
    for (const auto& row : u.provenance()) prov += row.count;
    EXPECT_EQ(prov, u.size());
  }
}

TEST(MergeVocabs, ReferenceDistributionFixture) {
  const UnifiedVocab u = UnifiedVocab::from_token_lists(reference_fixture_lists(), {});
  EXPECT_EQ(u.size(), 153376u);
  const auto rows = u.provenance();
  const auto& ref = reference_vocab_distribution();
  ASSERT_EQ(rows.size(), ref.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].domain, ref[i].first);
    EXPECT_EQ(rows[i].count, ref[i].second);
  }
  EXPECT_NEAR(rows[0].percent, 44.35, 0.01);
  EXPECT_NEAR(rows[1].percent, 26.77, 0.01);
  EXPECT_NEAR(rows[7].percent, 1.04, 0.01);
}

UnifiedVocab text_vocab() {
  std::mt19937_64 rng(5);
  std::vector<DomainVocab> vocabs;
  std::vector<std::string> en, zh;
  for (int i = 0; i < 20; ++i) en.push_back(random_text(rng, 50, "the cat sat on a mat "));
  for (int i = 0; i < 20; ++i) zh.push_back(random_text(rng, 30, "\xe4\xb8\xad\xe6\x96\x87"));
  vocabs.push_back(train_domain_bpe({"English", en}, 320));
  vocabs.push_back(train_domain_bpe({"Chinese", zh}, 300));
  return merge_vocabs(vocabs, {"<eod>"});
}

TEST(EncodeDecode, Examples) {
  const UnifiedVocab u = text_vocab();
  EXPECT_TRUE(u.encode("").empty());
  EXPECT_EQ(u.decode({}), "");
  const std::string unseen = "\xff\xfe\x01";
  const auto ids = u.encode(unseen);
  ASSERT_EQ(ids.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(u.tokens()[ids[i]], unseen.substr(i, 1));
  EXPECT_LT(u.encode("the cat sat on a mat").size(), 20u);
  EXPECT_THROW(u.decode({u.size()}), ArgumentError);
  EXPECT_THROW(UnifiedVocab::from_token_lists({{"x", {"a"}}}, {}).encode("b"), ArgumentError);
}

TEST(EncodeDecode, RoundTripRandomBytes) {
  const UnifiedVocab u = text_vocab();
  std::mt19937_64 rng(77);
  for (int i = 0; i < 2000; ++i) {
    const std::string s = i % 2 ? random_bytes(rng, testing::random_size(rng, 0, 64))
                                : random_text(rng, testing::random_size(rng, 0, 64), "the cat\xe4\xb8\xad");
    ASSERT_EQ(u.decode(u.encode(s)), s);
  }
}

TEST(EncodeDecode, MoreMergesNeverLengthen) {
  std::mt19937_64 rng(8);
  std::vector<std::string> docs;
  for (int i = 0; i < 10; ++i) docs.push_back(random_text(rng, 80, "abcab cba "));
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (std::size_t target = 256; target <= 330; target += 6) {
    const UnifiedVocab u = merge_vocabs({train_domain_bpe({"d", docs}, target)});
    std::size_t total = 0;
    for (const auto& d : docs) total += u.encode(d).size();
    EXPECT_LE(total, prev) << target;
    prev = total;
  }
}

TEST(VocabFile, RoundTripAndDeterminism) {
  auto build = [] {
    std::vector<DomainVocab> vocabs{train_domain_bpe({"English", {"low lower lowest", "newer wider"}}, 280),
                                    train_domain_bpe({"Code", {"for(i=0;i<n;i++)", "if(x<n)"}}, 270)};
    return std::make_pair(vocabs, merge_vocabs(vocabs, {"<eod>"}));
  };
  const auto [vocabs, u] = build();
  const json j = vocab_to_json(vocabs, u, {"<eod>"});
  EXPECT_EQ(j.dump(), vocab_to_json(build().first, build().second, {"<eod>"}).dump());
  const auto [vocabs2, u2] = vocab_from_json(json::parse(j.dump()));
  EXPECT_EQ(vocabs2, vocabs);
  EXPECT_EQ(u2.tokens(), u.tokens());
  EXPECT_EQ(u2.encode("lowest for(i<n)"), u.encode("lowest for(i<n)"));
  json bad = j;
  bad["size"] = 5;
  EXPECT_THROW(vocab_from_json(bad), ConfigError);
  bad = j;
  bad["domains"][0]["merges"][0][0] = "zz";
  EXPECT_THROW(vocab_from_json(bad), ConfigError);
  EXPECT_EQ(hex_decode(hex_encode(std::string("\x00\xff", 2))), std::string("\x00\xff", 2));
}

}  // namespace
}  // namespace trainlab
