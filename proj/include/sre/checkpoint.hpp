#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   "SREV1"                              5-byte magic (the version lives here)
//   u32 k, d, m, height, width
//   u64 config_hash, u64 seed
//   array Q [m,k], array D [k,d]
//   u32 layer_count, then per layer: array W [in,out], array b [out]
//
// where array = u32 rank, u32 dims[rank], f64 values[prod(dims)] row-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "sre/directions.hpp"
#include "sre/sre_net.hpp"
#include "sre/synth_world.hpp"
#include "sre/tensor.hpp"

namespace sre {

inline constexpr char kCheckpointMagic[] = "SREV1";
inline constexpr std::size_t kMagicSize = 5;

class CorruptCheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::uint32_t latent_dim = 0;
  std::uint32_t directions = 0;
  std::uint32_t factors = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  Tensor q;
  DirectionMatrix direction_matrix;
  SREParams sre;

  MixingMap world() const {
    WorldConfig config{latent_dim, height, width, seed};
    return MixingMap(config, q.values());
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void array(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) f64(v);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  template <class T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  Tensor array(const char* what) {
    const std::uint32_t rank = u32();
    if (rank > 4) throw CorruptCheckpointError(std::string("checkpoint: implausible rank for ") + what);
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = u32();
      n *= d;
    }
    if (n > (bytes_.size() - pos_) / 8) throw CorruptCheckpointError(std::string("checkpoint: truncated ") + what);
    std::vector<double> values(n);
    for (double& v : values) v = f64();
    return Tensor(std::move(shape), std::move(values));
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptCheckpointError("checkpoint: unexpected end of file");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, kMagicSize);
  w.u32(ckpt.latent_dim);
  w.u32(ckpt.directions);
  w.u32(ckpt.factors);
  w.u32(ckpt.height);
  w.u32(ckpt.width);
  w.u64(ckpt.config_hash);
  w.u64(ckpt.seed);
  w.array(ckpt.q);
  w.array(ckpt.direction_matrix.tensor());
  w.u32(static_cast<std::uint32_t>(ckpt.sre.layers.size()));
  for (const auto& layer : ckpt.sre.layers) {
    w.array(layer.weight);
    w.array(layer.bias);
  }
  return w.bytes();
}

inline Checkpoint deserialize(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  const std::string magic = r.raw(kMagicSize);
  if (magic.rfind("SREV", 0) == 0 && magic != kCheckpointMagic) {
    throw CorruptCheckpointError("checkpoint: unsupported version '" + magic + "', expected " + kCheckpointMagic);
  }
  if (magic != kCheckpointMagic) throw CorruptCheckpointError("checkpoint: bad magic string");
  Checkpoint c;
  c.latent_dim = r.u32();
  c.directions = r.u32();
  c.factors = r.u32();
  c.height = r.u32();
  c.width = r.u32();
  c.config_hash = r.u64();
  c.seed = r.u64();
  c.q = r.array("Q");
  c.direction_matrix = DirectionMatrix(r.array("D"));
  const std::uint32_t layers = r.u32();
  if (layers == 0 || layers > 16) throw CorruptCheckpointError("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < layers; ++i) {
    Tensor w = r.array("layer weight");
    Tensor b = r.array("layer bias");
    c.sre.layers.push_back({std::move(w), std::move(b)});
  }
  if (!r.at_end()) throw CorruptCheckpointError("checkpoint: trailing bytes");

  const auto fail = [](const std::string& what) { throw CorruptCheckpointError("checkpoint: " + what); };
  if (c.factors != kFactorCount) fail("factor count " + std::to_string(c.factors) + " unsupported");
  if (c.q.shape() != Shape{c.factors, c.latent_dim}) fail("Q shape disagrees with header");
  if (c.direction_matrix.tensor().shape() != Shape{c.latent_dim, c.directions}) fail("D shape disagrees with header");
  std::size_t fan_in = static_cast<std::size_t>(c.height) * c.width;
  for (const auto& layer : c.sre.layers) {
    if (layer.weight.rank() != 2 || layer.weight.dim(0) != fan_in) fail("layer input size mismatch");
    if (layer.bias.shape() != Shape{layer.weight.dim(1)}) fail("layer bias size mismatch");
    fan_in = layer.weight.dim(1);
  }
  if (fan_in != c.directions) fail("network output size differs from direction count");
  return c;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(std::move(bytes));
}

}  // namespace sre
