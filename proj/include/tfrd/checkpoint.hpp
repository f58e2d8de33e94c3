#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <unordered_set>
#include <vector>

#include "tfrd/file_io.hpp"
#include "tfrd/model.hpp"

namespace tfrd {

// Layout (little-endian, no padding):
//   "TFRD" | u32 version | u32 c, T, heads, H, W | u64 records |
//   records: u16 name_len | name | u8 rank | u32 dims[rank] | f32 payload
inline constexpr std::array<char, 4> kCheckpointMagic{'T', 'F', 'R', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointConfig {
  std::uint32_t channels = 0;
  std::uint32_t stacks = 0;
  std::uint32_t heads = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;

  bool operator==(const CheckpointConfig&) const = default;

  static CheckpointConfig of(const ModelConfig& m) {
    return {static_cast<std::uint32_t>(m.channels), static_cast<std::uint32_t>(m.stacks),
            static_cast<std::uint32_t>(m.heads), static_cast<std::uint32_t>(m.input_size),
            static_cast<std::uint32_t>(m.input_size)};
  }
};

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  CheckpointConfig config;
  std::vector<CheckpointRecord> records;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > in_.size()) {
      throw IoError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.le<std::uint32_t>(ckpt.version);
  w.le<std::uint32_t>(ckpt.config.channels);
  w.le<std::uint32_t>(ckpt.config.stacks);
  w.le<std::uint32_t>(ckpt.config.heads);
  w.le<std::uint32_t>(ckpt.config.height);
  w.le<std::uint32_t>(ckpt.config.width);
  w.le<std::uint64_t>(ckpt.records.size());
  for (const auto& r : ckpt.records) {
    if (r.name.size() > std::numeric_limits<std::uint16_t>::max()) throw IoError("parameter name too long: " + r.name);
    if (r.dims.size() > std::numeric_limits<std::uint8_t>::max()) throw IoError("rank too large for " + r.name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) w.le<std::uint32_t>(d);
    for (float v : r.values) w.f32(v);
  }
  return std::move(w.data());
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  auto magic = r.text(4, "magic");
  if (magic != std::string(kCheckpointMagic.data(), 4)) throw IoError("not a checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.version = r.le<std::uint32_t>("version");
  if (ckpt.version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint format version " + std::to_string(ckpt.version));
  }
  ckpt.config.channels = r.le<std::uint32_t>("config");
  ckpt.config.stacks = r.le<std::uint32_t>("config");
  ckpt.config.heads = r.le<std::uint32_t>("config");
  ckpt.config.height = r.le<std::uint32_t>("config");
  ckpt.config.width = r.le<std::uint32_t>("config");
  const auto count = r.le<std::uint64_t>("record count");
  std::unordered_set<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const auto len = r.le<std::uint16_t>("name length");
    rec.name = r.text(len, "name");
    if (!names.insert(rec.name).second) throw IoError("checkpoint has duplicate parameter " + rec.name);
    const auto rank = r.le<std::uint8_t>("rank");
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      rec.dims.push_back(r.le<std::uint32_t>("dims"));
      numel *= rec.dims.back();
    }
    r.need(numel * 4, "payload");
    rec.values.resize(numel);
    for (auto& v : rec.values) v = r.f32("payload");
    ckpt.records.push_back(std::move(rec));
  }
  if (!r.done()) throw IoError("checkpoint has trailing bytes after record " + std::to_string(count));
  return ckpt;
}

template <typename T>
Checkpoint snapshot(const SaliencyModel<T>& model) {
  Checkpoint ckpt;
  ckpt.config = CheckpointConfig::of(model.config());
  for (const auto& [name, t] : model.params().entries()) {
    CheckpointRecord rec;
    rec.name = name;
    for (auto d : t.shape()) rec.dims.push_back(static_cast<std::uint32_t>(d));
    rec.values.assign(t.data().begin(), t.data().end());
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

template <typename T>
void save_checkpoint(const SaliencyModel<T>& model, const std::string& path) {
  write_file(path, encode_checkpoint(snapshot(model)));
}

/// Copies a decoded checkpoint into the model. Nothing is modified unless
/// the configuration, every name and every shape match.
template <typename T>
void apply_checkpoint(SaliencyModel<T>& model, const Checkpoint& ckpt) {
  const auto expected = CheckpointConfig::of(model.config());
  if (!(ckpt.config == expected)) {
    auto describe = [](const CheckpointConfig& c) {
      return "c=" + std::to_string(c.channels) + " T=" + std::to_string(c.stacks) + " heads=" +
             std::to_string(c.heads) + " input=" + std::to_string(c.height) + "x" + std::to_string(c.width);
    };
    throw VersionError("checkpoint was written for " + describe(ckpt.config) + " but the model is " +
                       describe(expected));
  }
  const auto& entries = model.params().entries();
  if (ckpt.records.size() != entries.size()) {
    throw VersionError("checkpoint has " + std::to_string(ckpt.records.size()) + " parameters, model has " +
                       std::to_string(entries.size()));
  }
  for (const auto& rec : ckpt.records) {
    if (!model.params().contains(rec.name)) throw VersionError("checkpoint parameter not in model: " + rec.name);
    const auto& t = model.params().at(rec.name);
    Shape dims(rec.dims.begin(), rec.dims.end());
    if (dims != t.shape()) {
      throw VersionError("shape mismatch for " + rec.name + ": " + shape_string(dims) + " vs " +
                         shape_string(t.shape()));
    }
  }
  for (const auto& rec : ckpt.records) {
    auto t = model.params().at(rec.name);
    std::transform(rec.values.begin(), rec.values.end(), t.data().begin(), [](float v) { return static_cast<T>(v); });
  }
}

template <typename T>
void load_checkpoint(SaliencyModel<T>& model, const std::string& path) {
  apply_checkpoint(model, decode_checkpoint(read_file(path)));
}

/// Reads the configuration block only.
inline CheckpointConfig peek_checkpoint_config(const std::string& path) {
  auto bytes = read_file(path);
  detail::ByteReader r(bytes);
  if (r.text(4, "magic") != std::string(kCheckpointMagic.data(), 4)) throw IoError("not a checkpoint: bad magic");
  if (r.le<std::uint32_t>("version") != kCheckpointVersion) throw VersionError("unsupported checkpoint version");
  CheckpointConfig c;
  c.channels = r.le<std::uint32_t>("config");
  c.stacks = r.le<std::uint32_t>("config");
  c.heads = r.le<std::uint32_t>("config");
  c.height = r.le<std::uint32_t>("config");
  c.width = r.le<std::uint32_t>("config");
  return c;
}

}  // namespace tfrd
