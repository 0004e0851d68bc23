#include "shisr/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace shisr {

namespace {

constexpr std::string_view kMagic = "SHW1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return v;
}

}  // namespace

const WeightEntry* WeightFile::find(const std::string& name) const {
  for (const WeightEntry& e : tensors) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string encode_weights(const WeightFile& file) {
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const WeightEntry& e : file.tensors) {
    if (e.values.size() != e.shape.numel()) {
      throw IoError("encode_weights: tensor '" + e.name + "' has " +
                    std::to_string(e.values.size()) + " values for shape " + e.shape.str());
    }
    manifest["tensors"].push_back({{"name", e.name},
                                   {"shape", {e.shape.n, e.shape.c, e.shape.h, e.shape.w}},
                                   {"offset", offset},
                                   {"count", e.values.size()}});
    offset += e.values.size() * 4;
  }
  manifest["meta"] = file.meta;
  const std::string text = manifest.dump();

  std::string out;
  out.reserve(8 + text.size() + offset);
  out.append(kMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.append(text);
  for (const WeightEntry& e : file.tensors) {
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

WeightFile decode_weights(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != kMagic) {
    throw IoError("not an SHW1 weight file (bad magic)");
  }
  const std::uint32_t manifest_len = get_u32(bytes, 4);
  if (8 + static_cast<std::size_t>(manifest_len) > bytes.size()) {
    throw IoError("SHW1: manifest length exceeds file size");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(8, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("SHW1: malformed manifest: ") + e.what());
  }
  const std::string_view payload = bytes.substr(8 + manifest_len);

  WeightFile file;
  if (manifest.contains("meta")) file.meta = manifest["meta"];
  std::size_t expected_offset = 0;
  try {
    for (const auto& t : manifest.at("tensors")) {
      WeightEntry e;
      e.name = t.at("name").get<std::string>();
      const auto dims = t.at("shape").get<std::vector<long long>>();
      if (dims.size() != 4) throw IoError("SHW1: tensor '" + e.name + "' shape is not 4-D");
      for (long long d : dims) {
        if (d < 0 || d > (1LL << 30)) throw IoError("SHW1: tensor '" + e.name + "' bad extent");
      }
      e.shape = {static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                 static_cast<int>(dims[3])};
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (count != e.shape.numel()) {
        throw IoError("SHW1: tensor '" + e.name + "' count " + std::to_string(count) +
                      " does not match shape " + e.shape.str());
      }
      if (offset != expected_offset) {
        throw IoError("SHW1: tensor '" + e.name + "' offset is not contiguous");
      }
      if (offset + count * 4 > payload.size()) {
        throw IoError("SHW1: payload truncated inside tensor '" + e.name + "'");
      }
      e.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        e.values[i] = std::bit_cast<float>(get_u32(payload, offset + 4 * i));
      }
      expected_offset = offset + count * 4;
      if (file.find(e.name)) throw IoError("SHW1: duplicate tensor '" + e.name + "'");
      file.tensors.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("SHW1: malformed manifest: ") + e.what());
  }
  if (expected_offset != payload.size()) {
    throw IoError("SHW1: payload has " + std::to_string(payload.size()) +
                  " bytes but the manifest describes " + std::to_string(expected_offset));
  }
  return file;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_weights(const std::filesystem::path& path, const WeightFile& file) {
  write_file(path, encode_weights(file));
}

WeightFile read_weights(const std::filesystem::path& path) {
  return decode_weights(read_file(path));
}

WeightFile snapshot(const ParameterList& params) {
  WeightFile file;
  for (const Parameter& p : params.items()) {
    WeightEntry e;
    e.name = p.name;
    e.shape = p.value.shape();
    e.values.assign(p.value.data().begin(), p.value.data().end());
    file.tensors.push_back(std::move(e));
  }
  return file;
}

void restore(const WeightFile& file, const ParameterList& params) {
  for (const Parameter& p : params.items()) {
    const WeightEntry* e = file.find(p.name);
    if (!e) throw IoError("weight file has no tensor '" + p.name + "'");
    if (e->shape != p.value.shape()) {
      throw IoError("tensor '" + p.name + "' has shape " + e->shape.str() +
                    " in the file but " + p.value.shape().str() + " in the model");
    }
    Tensor t = p.value;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(e->values[i]);
  }
}

}  // namespace shisr
