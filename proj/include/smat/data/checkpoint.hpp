#pragma once

// Binary tensor checkpoints:
//   "SMAT" | u32 version | u32 count | per tensor:
//   u16 name length | name bytes | u8 rank | u64 extents[rank] | f32 values
// All integers and floats little-endian. A JSON sidecar at <path>.json holds
// the configuration echo and vocabulary needed to rebuild a model.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "smat/core/error.hpp"
#include "smat/core/tensor.hpp"
#include "smat/data/dataset.hpp"
#include "smat/model/transformer.hpp"

namespace smat {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace ckpt_detail {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559, "IEEE-754 binary32 required");

template <class U>
void put(std::string& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(path_ + ": truncated checkpoint (reading " + what + ")");
  }

  const std::string& b_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

inline void write_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace ckpt_detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  using ckpt_detail::put;
  std::string out = "SMAT";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  std::set<std::string> seen;
  for (const auto& t : tensors) {
    if (!seen.insert(t.name).second) throw FormatError("duplicate tensor name '" + t.name + "'");
    if (t.name.size() > 0xFFFF) throw FormatError("tensor name too long");
    if (t.shape.size() > 0xFF) throw FormatError("tensor rank too large for '" + t.name + "'");
    if (shape_size(t.shape) != t.values.size()) throw ShapeError("tensor '" + t.name + "' shape/value mismatch");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto e : t.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    for (float v : t.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
  ckpt_detail::Reader r(bytes, path);
  if (r.bytes(4, "magic") != "SMAT") throw FormatError(path + ": bad magic (not a SMAT checkpoint)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = r.get<std::uint16_t>("name length");
    t.name = r.bytes(len, "name");
    if (!seen.insert(t.name).second) throw FormatError(path + ": duplicate tensor name '" + t.name + "'");
    const auto rank = r.get<std::uint8_t>("rank");
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto e = r.get<std::uint64_t>("extent");
      if (e != 0 && n > std::numeric_limits<std::uint64_t>::max() / e) throw FormatError(path + ": tensor extent overflow");
      n *= e;
      t.shape.push_back(static_cast<std::size_t>(e));
    }
    if (n > r.remaining() / 4) throw FormatError(path + ": truncated checkpoint (values of '" + t.name + "')");
    t.values.resize(static_cast<std::size_t>(n));
    for (auto& v : t.values) v = std::bit_cast<float>(r.get<std::uint32_t>("value"));
    out.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError(path + ": trailing bytes after last tensor");
  return out;
}

inline void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path) {
  ckpt_detail::write_atomic(path, encode_checkpoint(tensors));
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

template <class T>
std::vector<NamedTensor> model_tensors(const MiniTransformer<T>& model) {
  std::vector<NamedTensor> out;
  for (const auto& s : model.layout().specs()) {
    auto p = model.parameter(s.name);
    std::vector<float> v(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) v[i] = static_cast<float>(primal(p[i]));
    out.push_back({s.name, s.shape, std::move(v)});
  }
  return out;
}

inline const NamedTensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
  for (const auto& t : ts) {
    if (t.name == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

inline bool has_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
  for (const auto& t : ts) {
    if (t.name == name) return true;
  }
  return false;
}

/// Rebuilds a model from checkpoint tensors; shapes must match the layout.
/// Extra tensors (e.g. explainer coefficients) are ignored.
template <class T>
MiniTransformer<T> model_from_tensors(const ModelConfig& cfg, const std::vector<NamedTensor>& ts) {
  MiniTransformer<T> m(cfg);
  auto& theta = m.parameters();
  for (const auto& s : m.layout().specs()) {
    const auto& t = find_tensor(ts, s.name);
    if (t.shape != s.shape) {
      throw FormatError("tensor '" + s.name + "' has shape " + shape_str(t.shape) + ", expected " + shape_str(s.shape));
    }
    for (std::size_t i = 0; i < s.size; ++i) theta[s.offset + i] = T(t.values[i]);
  }
  return m;
}

/// Model checkpoint plus sidecar: `meta` is merged with the model config and vocabulary.
template <class T>
void save_model(const MiniTransformer<T>& model, const std::string& path, const Vocabulary& vocab,
                nlohmann::json meta = nlohmann::json::object(), std::vector<NamedTensor> extra = {}) {
  auto tensors = model_tensors(model);
  for (auto& e : extra) tensors.push_back(std::move(e));
  save_checkpoint(tensors, path);
  const auto& c = model.config();
  meta["format_version"] = kCheckpointVersion;
  meta["model"] = {{"vocab_size", c.vocab_size}, {"max_len", c.max_len},         {"num_layers", c.num_layers},
                   {"heads_per_layer", c.heads_per_layer}, {"model_dim", c.model_dim}, {"head_dim", c.head_dim},
                   {"ffn_dim", c.ffn_dim},       {"task", to_string(c.task)},   {"num_classes", c.num_classes}};
  meta["vocab"] = vocab.words();
  ckpt_detail::write_atomic(path + ".json", meta.dump(2) + "\n");
}

template <class T>
struct LoadedModel {
  MiniTransformer<T> model;
  Vocabulary vocab;
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;
};

template <class T>
LoadedModel<T> load_model(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw FormatError("missing checkpoint sidecar " + path + ".json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ".json: " + e.what());
  }
  ModelConfig c;
  try {
    const auto& m = meta.at("model");
    c.vocab_size = m.at("vocab_size");
    c.max_len = m.at("max_len");
    c.num_layers = m.at("num_layers");
    c.heads_per_layer = m.at("heads_per_layer");
    c.model_dim = m.at("model_dim");
    c.head_dim = m.at("head_dim");
    c.ffn_dim = m.at("ffn_dim");
    c.task = task_from_string(m.at("task"));
    c.num_classes = m.at("num_classes");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ".json: incomplete model section (" + e.what() + ")");
  }
  c.validate();
  auto tensors = load_checkpoint(path);
  Vocabulary vocab(meta.value("vocab", std::vector<std::string>{"<pad>", "<unk>"}));
  auto model = model_from_tensors<T>(c, tensors);
  return {std::move(model), std::move(vocab), std::move(meta), std::move(tensors)};
}

}  // namespace smat
