#pragma once

// Binary model checkpoints.
//
// Layout (all integers and reals little-endian):
//   "CNEPCKPT" | u32 version | u8 kind | topology | u64 header hash
//   u64 tensor count | { u32 name length, name, u32 rank, i64 dims, f64 values }
//   u64 payload hash
// Hashes are 64-bit FNV-1a over the bytes they follow.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "cnep/errors.hpp"
#include "cnep/model_cnep.hpp"
#include "cnep/model_cnmp.hpp"

namespace cnep {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "CNEPCKPT";

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void raw(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

  void index_list(const std::vector<Index>& v) {
    u64(v.size());
    for (Index x : v) i64(x);
  }

  const std::string& bytes() const { return buf_; }

 private:
  template <class U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }

  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : data_(bytes) {}

  std::string_view raw(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)[0]); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  std::int64_t i64() { return static_cast<std::int64_t>(get_le<std::uint64_t>()); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  std::vector<Index> index_list() {
    const auto n = u64();
    if (n > 64) throw LoadError("checkpoint topology list is implausibly long");
    std::vector<Index> v;
    for (std::uint64_t i = 0; i < n; ++i) v.push_back(i64());
    return v;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::string_view consumed() const { return data_.substr(0, pos_); }
  std::string_view since(std::size_t start) const { return data_.substr(start, pos_ - start); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw LoadError("checkpoint is truncated");
  }

  template <class U>
  U get_le() {
    const auto s = raw(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

inline void write_topology(ByteWriter& w, const CnmpConfig& c) {
  w.i64(c.dm);
  w.i64(c.latent_width);
  w.i64(1);
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.index_list(c.encoder_hidden);
  w.index_list(c.query_hidden);
}

inline void write_topology(ByteWriter& w, const CnepConfig& c) {
  w.i64(c.dm);
  w.i64(c.latent_width);
  w.i64(c.experts);
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.index_list(c.encoder_hidden);
  w.index_list(c.query_hidden);
  w.index_list(c.gate_hidden);
  w.f64(c.alphas.rec);
  w.f64(c.alphas.batch);
  w.f64(c.alphas.ind);
}

inline Activation read_activation(ByteReader& r) {
  const auto a = r.u8();
  if (a > static_cast<std::uint8_t>(Activation::tanh)) throw LoadError("checkpoint has an unknown activation");
  return static_cast<Activation>(a);
}

template <class Model>
std::string serialize(const Model& model) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(Model::kind));
  write_topology(w, model.config());
  w.u64(fnv1a(w.bytes()));
  const std::size_t payload_start = w.bytes().size();
  const auto params = model.parameters();
  w.u64(params.size());
  for (const ParamTensor* p : params) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.raw(p->name);
    w.u32(static_cast<std::uint32_t>(p->shape.size()));
    for (Index s : p->shape) w.i64(s);
    for (Index i = 0; i < p->size(); ++i) w.f64(p->values(i));
  }
  w.u64(fnv1a(std::string_view(w.bytes()).substr(payload_start)));
  return w.bytes();
}

}  // namespace detail

/// Kind recorded in a serialized checkpoint; validates magic and version only.
inline ModelKind checkpoint_kind(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw LoadError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const auto kind = r.u8();
  if (kind > static_cast<std::uint8_t>(ModelKind::cnep)) throw LoadError("checkpoint has an unknown model kind");
  return static_cast<ModelKind>(kind);
}

template <class Model>
std::string serialize_checkpoint(const Model& model) {
  return detail::serialize(model);
}

template <class Model>
Model deserialize_checkpoint(std::string_view bytes) {
  const ModelKind kind = checkpoint_kind(bytes);
  if (kind != Model::kind)
    throw LoadError("checkpoint holds a " + to_string(kind) + " model, expected " + to_string(Model::kind));
  detail::ByteReader r(bytes);
  r.raw(kCheckpointMagic.size() + 4 + 1);

  typename Model::Config cfg;
  cfg.dm = r.i64();
  cfg.latent_width = r.i64();
  const Index experts = r.i64();
  cfg.activation = detail::read_activation(r);
  cfg.encoder_hidden = r.index_list();
  cfg.query_hidden = r.index_list();
  if constexpr (std::is_same_v<Model, CnepModel>) {
    cfg.experts = experts;
    cfg.gate_hidden = r.index_list();
    cfg.alphas.rec = r.f64();
    cfg.alphas.batch = r.f64();
    cfg.alphas.ind = r.f64();
  }
  const auto header_hash = detail::fnv1a(r.consumed());
  if (r.u64() != header_hash) throw LoadError("checkpoint header is corrupt (checksum mismatch)");

  const std::size_t payload_start = r.position();
  std::vector<std::pair<std::string, std::vector<double>>> arrays;
  const auto count = r.u64();
  if (count > r.remaining()) throw LoadError("checkpoint is truncated");
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = r.u32();
    std::string name(r.raw(name_len));
    const auto rank = r.u32();
    if (rank > 8) throw LoadError("checkpoint tensor '" + name + "' has an implausible rank");
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.i64();
      if (d <= 0) throw LoadError("checkpoint tensor '" + name + "' has a non-positive dimension");
      n *= static_cast<std::uint64_t>(d);
      if (n > r.remaining()) throw LoadError("checkpoint is truncated");
    }
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    arrays.emplace_back(std::move(name), std::move(values));
  }
  const auto payload_hash = detail::fnv1a(r.since(payload_start));
  if (r.u64() != payload_hash) throw LoadError("checkpoint weights are corrupt (checksum mismatch)");
  if (r.remaining() != 0) throw LoadError("checkpoint has trailing bytes");

  std::optional<Model> model;
  try {
    model.emplace(cfg);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint topology is invalid: ") + e.what());
  }
  auto params = model->parameters();
  if (params.size() != arrays.size()) throw LoadError("checkpoint tensor count does not match its topology");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != arrays[i].first)
      throw LoadError("checkpoint tensor '" + arrays[i].first + "' found where '" + params[i]->name + "' expected");
    if (static_cast<std::size_t>(params[i]->size()) != arrays[i].second.size())
      throw LoadError("checkpoint tensor '" + arrays[i].first + "' has the wrong size");
    for (Index j = 0; j < params[i]->size(); ++j) params[i]->values(j) = arrays[i].second[static_cast<std::size_t>(j)];
  }
  return std::move(*model);
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

template <class Model>
void save_checkpoint(const Model& model, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(model));
}

template <class Model>
Model load_checkpoint(const std::string& path) {
  return deserialize_checkpoint<Model>(read_file_bytes(path));
}

using AnyModel = std::variant<CnmpModel, CnepModel>;

inline AnyModel load_any_checkpoint(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  if (checkpoint_kind(bytes) == ModelKind::cnmp) return deserialize_checkpoint<CnmpModel>(bytes);
  return deserialize_checkpoint<CnepModel>(bytes);
}

}  // namespace cnep
