#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "clamp/config.hpp"
#include "clamp/errors.hpp"
#include "clamp/model.hpp"

// Binary checkpoint layout (all integers 32-bit little-endian unsigned):
//   "CLMP" | version | entry count
//   per entry: name length | UTF-8 name | rank | dims... | values as LE float32
//   JSON blob length | UTF-8 JSON {"config": ..., "ama_state": {...}}

namespace clamp {

inline constexpr char kCheckpointMagic[4] = {'C', 'L', 'M', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw LoadError(path_ + ": truncated checkpoint at offset " + std::to_string(pos_) + " while reading " + what);
    }
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Rounds every parameter to the stored (float32) precision in place.
inline void quantize_to_storage(ParamSet& params) {
  for (auto& p : params.items())
    for (double& v : p.value.mutable_values()) v = static_cast<double>(static_cast<float>(v));
}

inline std::string serialize_checkpoint(const Model& model, const RunConfig& config) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  const auto& items = model.params().items();
  detail::put_u32(out, static_cast<std::uint32_t>(items.size()));
  for (const auto& p : items) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) detail::put_f32(out, v);
  }
  const AmaState& ama = model.ama();
  nlohmann::json blob;
  blob["config"] = run_config_to_json(config);
  blob["ama_state"] = {{"pi", ama.pi},
                       {"initial_losses", ama.initial_losses ? nlohmann::json(*ama.initial_losses) : nlohmann::json(nullptr)}};
  const std::string text = blob.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  return out;
}

inline void save_checkpoint(const std::string& path, const Model& model, const RunConfig& config) {
  const std::string bytes = serialize_checkpoint(model, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path);
}

struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<Model> model;
};

inline LoadedCheckpoint deserialize_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
  detail::ByteReader in(bytes, path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw LoadError(path + ": not a CLMP checkpoint");
  }
  in.str(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw LoadError(path + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Entry> entries(in.u32("entry count"));
  for (auto& e : entries) {
    e.name = in.str(in.u32("name length"), "parameter name");
    const std::uint32_t rank = in.u32("rank");
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(in.u32("dimension"));
    const std::size_t n = shape_size(e.shape);
    e.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) e.values.push_back(in.f32("parameter values"));
  }
  const std::string text = in.str(in.u32("config length"), "config blob");
  if (!in.at_end()) throw LoadError(path + ": trailing bytes after offset " + std::to_string(in.offset()));

  nlohmann::json blob;
  try {
    blob = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path + ": config blob is not valid JSON: " + e.what());
  }
  if (!blob.is_object() || !blob.contains("config") || !blob.contains("ama_state")) {
    throw LoadError(path + ": config blob lacks \"config\" or \"ama_state\"");
  }
  LoadedCheckpoint out;
  try {
    out.config = run_config_from_json(blob.at("config"));
  } catch (const ConfigError& e) {
    throw LoadError(path + ": stored config is invalid: " + e.what());
  }
  out.model = std::make_unique<Model>(out.config.model, out.config.train.seed);

  auto& items = out.model->params().items();
  if (entries.size() != items.size()) {
    throw LoadError(path + ": checkpoint has " + std::to_string(entries.size()) + " parameters, config implies " +
                    std::to_string(items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Entry& e = entries[i];
    Parameter& p = items[i];
    if (e.name != p.name) throw LoadError(path + ": expected parameter " + p.name + ", found " + e.name);
    if (e.shape != p.value.shape()) {
      throw LoadError(path + ": parameter " + p.name + " has shape " + shape_str(e.shape) + " but config implies " +
                      shape_str(p.value.shape()));
    }
    std::copy(e.values.begin(), e.values.end(), p.value.mutable_values().begin());
  }

  const auto& state = blob.at("ama_state");
  try {
    out.model->ama().pi = state.at("pi").get<TaskArray>();
    if (!state.at("initial_losses").is_null()) out.model->ama().initial_losses = state.at("initial_losses").get<TaskArray>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path + ": malformed ama_state: " + e.what());
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path);
}

}  // namespace clamp
