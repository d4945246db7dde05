// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "trainlab/errors.hpp"

namespace trainlab {

using json = nlohmann::json;

/// Strict reader for one JSON object of a config file. Errors carry the
/// dotted field path; finish() rejects keys that were never read.
class JsonReader {
 public:
  JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError(where("") + ": expected an object");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void get(const char* key, T& out, bool required = false) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      if (required) {
        throw ConfigError(where(key) + ": required field is missing");
      }
      return;
    }
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<std::int64_t>() < 0) throw ConfigError("expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("expected a string");
      }
      out = v.get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError(where(key) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json& child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      throw ConfigError(where(key) + ": required field is missing");
    }
    return j_.at(key);
  }

  std::string child_path(const char* key) const { return where(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) {
        throw ConfigError(where(k.c_str()) + ": unknown field");
      }
    }
  }

 private:
  std::string where(const char* key) const {
    if (path_.empty()) return key;
    if (*key == '\0') return path_;
    return path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << text;
  if (!out) {
    throw IoError("write failed for " + path);
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// 64-bit FNV-1a, used for config hashes and embedded plot data digests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace trainlab
