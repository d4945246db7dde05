// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trainlab/errors.hpp"
#include "trainlab/json_util.hpp"

namespace trainlab {

inline constexpr std::size_t kByteAlphabet = 256;

struct DomainCorpus {
  std::string domain;
  std::vector<std::string> documents;
};

using MergeRule = std::pair<std::string, std::string>;

/// Byte-level BPE vocabulary of one domain. tokens[0..255] are the single
/// bytes; later tokens appear in the order their merges created them.
struct DomainVocab {
  std::string domain;
  std::vector<MergeRule> merges;
  std::vector<std::string> tokens;
  bool truncated = false;  // corpus ran out of pairs before target_size

  friend bool operator==(const DomainVocab&, const DomainVocab&) = default;
};

namespace detail {

inline std::vector<std::string> byte_tokens() {
  std::vector<std::string> t;
  t.reserve(kByteAlphabet);
  for (std::size_t b = 0; b < kByteAlphabet; ++b) t.emplace_back(1, static_cast<char>(b));
  return t;
}

inline std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) { return (std::uint64_t{a} << 32) | b; }

/// Replaces every non-overlapping occurrence of (a, b), left to right.
inline std::size_t merge_pair(std::vector<std::uint32_t>& seq, std::uint32_t a, std::uint32_t b, std::uint32_t to) {
  std::size_t w = 0, merged = 0;
  for (std::size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == a && seq[r + 1] == b) {
      seq[w++] = to;
      r += 2;
      ++merged;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
  return merged;
}

}  // namespace detail

/// Greedy BPE: repeatedly merges the most frequent adjacent pair (ties go to
/// the lexicographically smallest pair of byte strings) until the vocabulary
/// holds target_size distinct tokens. Pairs never span documents.
inline DomainVocab train_domain_bpe(const DomainCorpus& corpus, std::size_t target_size) {
  if (corpus.documents.empty()) {
    throw ArgumentError("train_domain_bpe: domain '" + corpus.domain + "' has no documents");
  }
  if (target_size < kByteAlphabet) {
    throw ArgumentError("train_domain_bpe: target_size must be at least " + std::to_string(kByteAlphabet));
  }
  DomainVocab vocab;
  vocab.domain = corpus.domain;
  vocab.tokens = detail::byte_tokens();
  std::unordered_map<std::string, std::uint32_t> id_of;
  for (std::uint32_t i = 0; i < kByteAlphabet; ++i) id_of.emplace(vocab.tokens[i], i);

  std::vector<std::vector<std::uint32_t>> seqs;
  for (const std::string& doc : corpus.documents) {
    std::vector<std::uint32_t> s(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) s[i] = static_cast<unsigned char>(doc[i]);
    seqs.push_back(std::move(s));
  }

  std::unordered_map<std::uint64_t, std::size_t> counts;
  while (vocab.tokens.size() < target_size) {
    counts.clear();
    for (const auto& s : seqs) {
      for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[detail::pair_key(s[i], s[i + 1])];
    }
    if (counts.empty()) {
      vocab.truncated = true;
      break;
    }
    std::uint64_t best = 0;
    std::size_t best_count = 0;
    for (const auto& [key, c] : counts) {
      if (c < best_count) continue;
      if (c > best_count) {
        best = key;
        best_count = c;
        continue;
      }
      const auto tok = [&](std::uint64_t k, bool left) -> const std::string& {
        return vocab.tokens[left ? k >> 32 : k & 0xffffffffu];
      };
      const auto cand = std::tie(tok(key, true), tok(key, false));
      const auto cur = std::tie(tok(best, true), tok(best, false));
      if (cand < cur) best = key;
    }
    const auto a = static_cast<std::uint32_t>(best >> 32);
    const auto b = static_cast<std::uint32_t>(best & 0xffffffffu);
    std::string joined = vocab.tokens[a] + vocab.tokens[b];
    auto [it, fresh] = id_of.emplace(joined, static_cast<std::uint32_t>(vocab.tokens.size()));
    if (fresh) vocab.tokens.push_back(joined);
    vocab.merges.emplace_back(vocab.tokens[a], vocab.tokens[b]);
    for (auto& s : seqs) detail::merge_pair(s, a, b, it->second);
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Unified vocabulary.

struct ProvenanceRow {
  std::string domain;
  std::size_t count = 0;
  double percent = 0.0;
};

class UnifiedVocab {
 public:
  /// Union of token lists. Ids: specials first, then each domain's tokens in
  /// order, skipping strings already present; a token is attributed to the
  /// first domain that lists it. Merge rules are concatenated in domain order
  /// and deduplicated.
  static UnifiedVocab from_token_lists(const std::vector<std::pair<std::string, std::vector<std::string>>>& domains,
                                       const std::vector<std::string>& specials,
                                       const std::vector<MergeRule>& merges = {}) {
    UnifiedVocab u;
    std::set<std::string> seen_names;
    for (const auto& [name, tokens] : domains) {
      if (!seen_names.insert(name).second) {
        throw ArgumentError("merge_vocabs: duplicate domain name '" + name + "'");
      }
    }
    for (const std::string& s : specials) {
      if (s.empty()) throw ArgumentError("merge_vocabs: empty special token");
      if (!u.ids_.emplace(s, u.tokens_.size()).second) {
        throw ArgumentError("merge_vocabs: duplicate special token '" + s + "'");
      }
      u.tokens_.push_back(s);
    }
    u.num_specials_ = specials.size();
    for (const auto& [name, tokens] : domains) {
      std::size_t contributed = 0;
      for (const std::string& t : tokens) {
        if (u.ids_.emplace(t, u.tokens_.size()).second) {
          u.tokens_.push_back(t);
          ++contributed;
        }
      }
      u.provenance_.push_back({name, contributed});
    }
    std::set<MergeRule> seen;
    for (const MergeRule& m : merges) {
      if (!seen.insert(m).second) continue;
      const auto l = u.ids_.find(m.first), r = u.ids_.find(m.second), j = u.ids_.find(m.first + m.second);
      if (l == u.ids_.end() || r == u.ids_.end() || j == u.ids_.end()) {
        throw ArgumentError("merge_vocabs: merge rule refers to tokens missing from the vocabulary");
      }
      u.rank_.emplace(detail::pair_key(static_cast<std::uint32_t>(l->second), static_cast<std::uint32_t>(r->second)),
                      std::make_pair(u.merges_.size(), static_cast<std::uint32_t>(j->second)));
      u.merges_.push_back(m);
    }
    return u;
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t num_specials() const { return num_specials_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<MergeRule>& merges() const { return merges_; }

  std::size_t id(const std::string& token) const {
    const auto it = ids_.find(token);
    if (it == ids_.end()) throw ArgumentError("unknown token");
    return it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  /// Tokens each domain contributed first, with percentages of the total
  /// vocabulary (specials included in the total).
  std::vector<ProvenanceRow> provenance() const {
    std::vector<ProvenanceRow> rows;
    for (const auto& [name, count] : provenance_) {
      rows.push_back({name, count, 100.0 * static_cast<double>(count) / static_cast<double>(size())});
    }
    return rows;
  }

  /// Text is treated as raw bytes; merges are applied lowest rank first
  /// until none applies.
  std::vector<std::size_t> encode(const std::string& text) const {
    std::vector<std::uint32_t> seq(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      const auto it = ids_.find(std::string(1, text[i]));
      if (it == ids_.end()) {
        throw ArgumentError("encode: byte " + std::to_string(static_cast<unsigned char>(text[i])) +
                            " has no token");
      }
      seq[i] = static_cast<std::uint32_t>(it->second);
    }
    while (seq.size() > 1) {
      std::size_t best_rank = merges_.size();
      std::uint32_t a = 0, b = 0, to = 0;
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        const auto it = rank_.find(detail::pair_key(seq[i], seq[i + 1]));
        if (it != rank_.end() && it->second.first < best_rank) {
          best_rank = it->second.first;
          a = seq[i];
          b = seq[i + 1];
          to = it->second.second;
        }
      }
      if (best_rank == merges_.size()) break;
      detail::merge_pair(seq, a, b, to);
    }
    return {seq.begin(), seq.end()};
  }

  std::string decode(const std::vector<std::size_t>& ids) const {
    std::string out;
    for (std::size_t id : ids) {
      if (id >= tokens_.size()) {
        throw ArgumentError("decode: id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tokens_.size()));
      }
      out += tokens_[id];
    }
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::size_t num_specials_ = 0;
  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::pair<std::string, std::size_t>> provenance_;
  std::vector<MergeRule> merges_;
  std::unordered_map<std::uint64_t, std::pair<std::size_t, std::uint32_t>> rank_;
};

/// Vocabularies are given in priority order.
inline UnifiedVocab merge_vocabs(const std::vector<DomainVocab>& vocabs, const std::vector<std::string>& specials = {}) {
  if (vocabs.empty()) {
    throw ArgumentError("merge_vocabs: no vocabularies");
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> lists;
  std::vector<MergeRule> merges;
  for (const DomainVocab& v : vocabs) {
    lists.emplace_back(v.domain, v.tokens);
    merges.insert(merges.end(), v.merges.begin(), v.merges.end());
  }
  return UnifiedVocab::from_token_lists(lists, specials, merges);
}

// ---------------------------------------------------------------------------
// Vocab file.

inline std::string hex_encode(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out += digits[c >> 4];
    out += digits[c & 0xF];
  }
  return out;
}

inline std::string hex_decode(const std::string& hex) {
  auto nib = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw ConfigError("bad hex string '" + hex + "'");
  };
  if (hex.size() % 2 != 0) throw ConfigError("bad hex string '" + hex + "'");
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2) out += static_cast<char>(nib(hex[i]) * 16 + nib(hex[i + 1]));
  return out;
}

/// {format, version, specials, domains[{name, truncated, merges}], tokens,
/// provenance}. Byte strings are hex-encoded.
inline json vocab_to_json(const std::vector<DomainVocab>& vocabs, const UnifiedVocab& u,
                          const std::vector<std::string>& specials) {
  json domains = json::array();
  for (const DomainVocab& v : vocabs) {
    json merges = json::array();
    for (const auto& [l, r] : v.merges) merges.push_back({hex_encode(l), hex_encode(r)});
    domains.push_back({{"name", v.domain}, {"truncated", v.truncated}, {"size", v.tokens.size()}, {"merges", merges}});
  }
  json tokens = json::array();
  for (const std::string& t : u.tokens()) tokens.push_back(hex_encode(t));
  json prov = json::array();
  for (const auto& row : u.provenance()) prov.push_back({{"domain", row.domain}, {"count", row.count}});
  return json{{"format", "trainlab-vocab"}, {"version", 1},     {"specials", specials}, {"domains", domains},
              {"tokens", tokens},          {"size", u.size()}, {"provenance", prov}};
}

/// Rebuilds every domain vocabulary by replaying its merges, then the union.
inline std::pair<std::vector<DomainVocab>, UnifiedVocab> vocab_from_json(const json& j) {
  try {
    if (j.at("format") != "trainlab-vocab" || j.at("version") != 1) {
      throw ConfigError("not a trainlab-vocab version 1 file");
    }
    const auto specials = j.at("specials").get<std::vector<std::string>>();
    std::vector<DomainVocab> vocabs;
    for (const json& d : j.at("domains")) {
      DomainVocab v;
      v.domain = d.at("name").get<std::string>();
      v.truncated = d.at("truncated").get<bool>();
      v.tokens = detail::byte_tokens();
      std::set<std::string> have(v.tokens.begin(), v.tokens.end());
      for (const json& m : d.at("merges")) {
        MergeRule rule{hex_decode(m.at(0).get<std::string>()), hex_decode(m.at(1).get<std::string>())};
        if (!have.count(rule.first) || !have.count(rule.second)) {
          throw ConfigError("domain '" + v.domain + "': merge uses a token not built by earlier merges");
        }
        const std::string joined = rule.first + rule.second;
        if (have.insert(joined).second) v.tokens.push_back(joined);
        v.merges.push_back(std::move(rule));
      }
      vocabs.push_back(std::move(v));
    }
    UnifiedVocab u = merge_vocabs(vocabs, specials);
    if (j.at("size").get<std::size_t>() != u.size()) {
      throw ConfigError("vocab size field does not match the rebuilt vocabulary");
    }
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < tokens.size() && i < u.size(); ++i) {
      if (hex_decode(tokens[i]) != u.tokens()[i]) throw ConfigError("token table does not match the merges");
    }
    if (tokens.size() != u.size()) throw ConfigError("token table does not match the merges");
    return {std::move(vocabs), std::move(u)};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("vocab file: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("vocab file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reporting fixture.

/// Domain rows and counts of the reference unified vocabulary, in priority order.
inline const std::vector<std::pair<std::string, std::size_t>>& reference_vocab_distribution() {
  static const std::vector<std::pair<std::string, std::size_t>> rows{
      {"English", 68017}, {"Chinese", 41053}, {"Other", 30573},      {"Latin-based languages", 4507},
      {"Arabic", 2755},   {"Korean", 2733},   {"Mathematics", 2139}, {"Japanese", 1599}};
  return rows;
}

/// Synthetic token lists whose union has the reference per-domain
/// provenance. Later domains repeat some earlier tokens, so the counts only
/// come out right if deduplication works.
inline std::vector<std::pair<std::string, std::vector<std::string>>> reference_fixture_lists() {
  std::vector<std::pair<std::string, std::vector<std::string>>> lists;
  std::vector<std::string> previous;
  for (const auto& [name, count] : reference_vocab_distribution()) {
    std::vector<std::string> tokens;
    if (lists.empty()) {
      tokens = detail::byte_tokens();
    }
    for (std::size_t i = 0; i < previous.size() && i < 97; i += 3) tokens.push_back(previous[i]);
    std::vector<std::string> fresh;
    const std::size_t base = lists.empty() ? kByteAlphabet : 0;
    for (std::size_t i = base; i < count; ++i) fresh.push_back(name + "#" + std::to_string(i));
    tokens.insert(tokens.end(), fresh.begin(), fresh.end());
    previous = std::move(fresh);
    lists.emplace_back(name, std::move(tokens));
  }
  return lists;
}

// ---------------------------------------------------------------------------
// Build manifest:
//   {"specials": ["<eod>"], "domains": [{"domain": ..., "path": ..., "target_size": ...}]}
// Relative paths resolve against the manifest's directory. Each non-empty line
// of a corpus file is one document.

struct VocabManifestEntry {
  std::string domain;
  std::string path;
  std::size_t target_size = kByteAlphabet;
};

struct VocabManifest {
  std::vector<std::string> specials;
  std::vector<VocabManifestEntry> domains;
};

inline VocabManifest vocab_manifest_from_json(const json& j, const std::string& base_dir = "") {
  VocabManifest m;
  JsonReader r(j, "manifest");
  r.get("specials", m.specials);
  const json& domains = r.child("domains");
  r.finish();
  if (!domains.is_array() || domains.empty()) throw ConfigError("manifest.domains: expected a non-empty array");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    JsonReader dr(domains[i], "manifest.domains[" + std::to_string(i) + "]");
    VocabManifestEntry e;
    dr.get("domain", e.domain, true);
    dr.get("path", e.path, true);
    dr.get("target_size", e.target_size, true);
    dr.finish();
    if (!base_dir.empty() && std::filesystem::path(e.path).is_relative()) {
      e.path = (std::filesystem::path(base_dir) / e.path).string();
    }
    m.domains.push_back(std::move(e));
  }
  return m;
}

inline VocabManifest load_vocab_manifest(const std::string& path) {
  return vocab_manifest_from_json(read_json_file(path), std::filesystem::path(path).parent_path().string());
}

inline std::vector<std::string> corpus_documents(const std::string& text) {
  std::vector<std::string> docs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) docs.push_back(line);
  }
  return docs;
}

struct BuiltVocab {
  std::vector<DomainVocab> domains;
  UnifiedVocab unified;
  std::vector<std::string> specials;

  json to_json() const { return vocab_to_json(domains, unified, specials); }
};

inline BuiltVocab build_vocab(const VocabManifest& m) {
  BuiltVocab out;
  out.specials = m.specials;
  for (const auto& e : m.domains) {
    DomainCorpus corpus{e.domain, corpus_documents(read_text_file(e.path))};
    if (corpus.documents.empty()) throw ConfigError("corpus for domain '" + e.domain + "' (" + e.path + ") is empty");
    out.domains.push_back(train_domain_bpe(corpus, e.target_size));
  }
  out.unified = merge_vocabs(out.domains, out.specials);
  return out;
}

}  // namespace trainlab
