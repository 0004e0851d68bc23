#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "shisr/nn.hpp"

namespace shisr {

/// SHW1 weight container:
///
///   bytes 0..3   magic "SHW1"
///   bytes 4..7   manifest length L, little-endian uint32
///   next L bytes manifest, UTF-8 JSON:
///                {"tensors": [{"name", "shape": [n,c,h,w], "offset", "count"}...],
///                 "meta": {...}}
///                offsets are byte offsets into the payload
///   rest         payload, little-endian IEEE-754 float32, tensors back to back
struct WeightEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct WeightFile {
  std::vector<WeightEntry> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const WeightEntry* find(const std::string& name) const;
};

std::string encode_weights(const WeightFile& file);
/// Validates the magic, the manifest, the total payload length and every
/// tensor's shape product; throws IoError on any inconsistency.
WeightFile decode_weights(std::string_view bytes);

void write_weights(const std::filesystem::path& path, const WeightFile& file);
WeightFile read_weights(const std::filesystem::path& path);

/// Snapshot of every entry (trainable or buffer) of `params`.
WeightFile snapshot(const ParameterList& params);
/// Copies values into `params` in place. Every parameter must be present with
/// a matching shape; extra entries in `file` are ignored.
void restore(const WeightFile& file, const ParameterList& params);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace shisr
