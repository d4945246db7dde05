// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint layout:
//   bytes 0..7   magic "TLCKPT01"
//   bytes 8..15  header length H, uint64 little-endian
//   next H bytes UTF-8 JSON header:
//     {"format": "trainlab-checkpoint", "version": 1,
//      "config": <ModelConfig>, "meta": <object>,
//      "tensors": [{"name", "shape", "offset", "count"}, ...]}
//   remainder    float64 little-endian tensor data; offset/count in elements

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "trainlab/json_util.hpp"
#include "trainlab/model.hpp"

namespace trainlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'T', 'L', 'C', 'K', 'P', 'T', '0', '1'};

struct Checkpoint {
  Model model;
  json meta = json::object();
};

inline void save_checkpoint(const std::string& path, const Model& model, const json& meta = json::object()) {
  json header;
  header["format"] = "trainlab-checkpoint";
  header["version"] = 1;
  header["config"] = model.config;
  header["meta"] = meta;
  json table = json::array();
  std::uint64_t offset = 0;
  const auto params = parameters(model);
  for (const auto& p : params) {
    table.push_back({{"name", p.name}, {"shape", p.tensor->shape()}, {"offset", offset}, {"count", p.tensor->size()}});
    offset += p.tensor->size();
  }
  header["tensors"] = table;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write checkpoint " + path);
  }
  const std::uint64_t len = text.size();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.tensor->ptr()),
              static_cast<std::streamsize>(p.tensor->size() * sizeof(double)));
  }
  if (!out) {
    throw IoError("write failed for checkpoint " + path);
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint " + path);
  }
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError(path + ": not a trainlab checkpoint");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) {
    throw IoError(path + ": truncated header");
  }
  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(path + ": corrupt header: " + e.what());
  }
  Checkpoint ck;
  // Shapes come from the rebuilt model; the table must agree with them.
  ck.model = build_model(model_config_from_json(header.at("config"), "config"), 0);
  ck.meta = header.value("meta", json::object());
  const auto params = parameters(ck.model);
  const json& table = header.at("tensors");
  if (table.size() != params.size()) {
    throw IoError(path + ": expected " + std::to_string(params.size()) + " tensors, found " +
                  std::to_string(table.size()));
  }
  const auto data_start = in.tellg();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& e = table[i];
    Tensor& t = *params[i].tensor;
    if (e.at("name").get<std::string>() != params[i].name || e.at("shape").get<Shape>() != t.shape()) {
      throw IoError(path + ": tensor " + std::to_string(i) + " does not match the model layout");
    }
    const auto offset = e.at("offset").get<std::uint64_t>();
    in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) {
      throw IoError(path + ": truncated data for " + params[i].name);
    }
  }
  return ck;
}

}  // namespace trainlab
