#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   8 bytes   magic "XFERCKPT"
//   u32       format version
//   u32       metadata length, then that many bytes of "key=value\n" lines
//             sorted by key (config, phase, step, vocab hashes, frozen set)
//   u32       tensor count
//   per tensor: u32 name length, name bytes, u32 rank, rank x u32 dims,
//               numel x 32-bit IEEE float payload
//
// Nothing may follow the last tensor record.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xfer/error.hpp"
#include "xfer/model.hpp"

namespace xfer {

inline constexpr std::string_view kCheckpointMagic = "XFERCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint64_t src_vocab_hash = 0;
  std::uint64_t tgt_vocab_hash = 0;
  // Free-form provenance (experiment name, mode, ...); must not contain '\n'.
  std::map<std::string, std::string> extra;
  friend bool operator==(const CheckpointInfo&, const CheckpointInfo&) = default;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void raw(std::string_view s) { bytes_.append(s); }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(bytes_.size() - pos_ >= n, ErrorKind::CorruptCheckpoint, "checkpoint is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const PartitionedModel<T>& model, const CheckpointInfo& info) {
  const ModelConfig& c = model.config();
  std::map<std::string, std::string> meta = {
      {"config.layers", std::to_string(c.layers)},
      {"config.heads", std::to_string(c.heads)},
      {"config.d_model", std::to_string(c.d_model)},
      {"config.d_ffn", std::to_string(c.d_ffn)},
      {"config.dropout", detail::fmt_double(c.dropout)},
      {"config.label_smoothing", detail::fmt_double(c.label_smoothing)},
      {"config.max_positions", std::to_string(c.max_positions)},
      {"init.scheme", model.init_scheme().name()},
      {"init.half_width", detail::fmt_double(model.init_scheme().half_width)},
      {"phase", std::string(phase_name(model.phase()))},
      {"step", std::to_string(model.step())},
      {"vocab.src_hash", std::to_string(info.src_vocab_hash)},
      {"vocab.tgt_hash", std::to_string(info.tgt_vocab_hash)},
  };
  std::string frozen;
  for (const auto& p : model.params()) {
    if (!p.trainable) frozen += (frozen.empty() ? "" : ",") + p.name;
  }
  meta["frozen"] = frozen;
  for (const auto& [k, v] : info.extra) {
    require(v.find('\n') == std::string::npos && k.find('=') == std::string::npos && k.find('\n') == std::string::npos,
            ErrorKind::InvalidArgument, "checkpoint metadata entries must be single-line");
    meta["extra." + k] = v;
  }
  std::string meta_text;
  for (const auto& [k, v] : meta) meta_text += k + "=" + v + "\n";

  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(meta_text.size()));
  w.raw(meta_text);
  w.u32(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (T x : p.value.data()) w.f32(static_cast<float>(x));
  }
  return w.take();
}

template <typename T>
struct LoadedCheckpoint {
  PartitionedModel<T> model;
  CheckpointInfo info;
};

template <typename T>
LoadedCheckpoint<T> deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  require(bytes.size() >= kCheckpointMagic.size() && r.raw(kCheckpointMagic.size()) == kCheckpointMagic,
          ErrorKind::CorruptCheckpoint, "bad checkpoint magic");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::UnsupportedVersion,
          "checkpoint version " + std::to_string(version) + " (supported: " + std::to_string(kCheckpointVersion) + ")");
  const std::string_view meta_text = r.raw(r.u32());
  std::map<std::string, std::string> meta;
  std::size_t start = 0;
  while (start < meta_text.size()) {
    const std::size_t nl = meta_text.find('\n', start);
    require(nl != std::string_view::npos, ErrorKind::CorruptCheckpoint, "unterminated metadata line");
    const std::string_view line = meta_text.substr(start, nl - start);
    const std::size_t eq = line.find('=');
    require(eq != std::string_view::npos, ErrorKind::CorruptCheckpoint, "metadata line without '='");
    meta.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    start = nl + 1;
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    require(it != meta.end(), ErrorKind::CorruptCheckpoint, "metadata lacks '" + key + "'");
    return it->second;
  };
  auto get_u64 = [&](const std::string& key) -> std::uint64_t {
    const std::string& s = get(key);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && end == s.data() + s.size() && !s.empty(), ErrorKind::CorruptCheckpoint,
            "metadata '" + key + "' is not an integer");
    return v;
  };
  auto get_double = [&](const std::string& key) -> double {
    const std::string& s = get(key);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    require(used == s.size() && !s.empty(), ErrorKind::CorruptCheckpoint, "metadata '" + key + "' is not a number");
    return v;
  };

  ModelConfig c;
  c.layers = get_u64("config.layers");
  c.heads = get_u64("config.heads");
  c.d_model = get_u64("config.d_model");
  c.d_ffn = get_u64("config.d_ffn");
  c.dropout = get_double("config.dropout");
  c.label_smoothing = get_double("config.label_smoothing");
  c.max_positions = get_u64("config.max_positions");
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::CorruptCheckpoint, std::string("stored config is invalid: ") + e.what());
  }

  LoadedCheckpoint<T> out;
  PartitionedModel<T>& m = out.model;
  m.set_config(c);
  InitScheme init;
  const std::string& scheme = get("init.scheme");
  require(scheme == "xavier" || scheme == "uniform", ErrorKind::CorruptCheckpoint, "unknown init scheme '" + scheme + "'");
  init.kind = scheme == "uniform" ? InitScheme::Kind::Uniform : InitScheme::Kind::Xavier;
  init.half_width = get_double("init.half_width");
  m.set_init_scheme(init);
  m.set_phase(parse_phase(get("phase")));
  m.set_step(get_u64("step"));
  out.info.src_vocab_hash = get_u64("vocab.src_hash");
  out.info.tgt_vocab_hash = get_u64("vocab.tgt_hash");
  for (const auto& [k, v] : meta) {
    if (k.starts_with("extra.")) out.info.extra[k.substr(6)] = v;
  }
  std::vector<std::string> frozen;
  {
    const std::string& f = get("frozen");
    std::size_t s = 0;
    while (s < f.size()) {
      std::size_t comma = f.find(',', s);
      if (comma == std::string::npos) comma = f.size();
      frozen.push_back(f.substr(s, comma - s));
      s = comma + 1;
    }
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Parameter<T> p;
    p.name = std::string(r.raw(r.u32()));
    const std::uint32_t rank = r.u32();
    require(rank >= 1 && rank <= 8, ErrorKind::CorruptCheckpoint, "implausible tensor rank for '" + p.name + "'");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.u32());
      require(shape.back() > 0, ErrorKind::CorruptCheckpoint, "zero dimension in '" + p.name + "'");
      n *= shape.back();
      require(n <= bytes.size(), ErrorKind::CorruptCheckpoint, "tensor '" + p.name + "' larger than the file");
    }
    std::vector<T> data(n);
    for (auto& x : data) x = static_cast<T>(r.f32());
    p.value = Tensor<T>(shape, std::move(data));
    p.trainable = std::find(frozen.begin(), frozen.end(), p.name) == frozen.end();
    m.adopt(std::move(p));
  }
  require(r.at_end(), ErrorKind::CorruptCheckpoint, "trailing bytes after the last tensor");

  // Structural check against the inventory this config implies.
  const auto expected = PartitionedModel<T>::inventory(c, 1, 1);
  require(expected.size() == m.params().size(), ErrorKind::CorruptCheckpoint,
          "tensor inventory does not match the stored config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& want = expected[i];
    const auto& got = m.params()[i];
    const bool embedding = PartitionedModel<T>::partition_of(want.name) == Partition::Embeddings;
    require(want.name == got.name, ErrorKind::CorruptCheckpoint, "unexpected tensor '" + got.name + "'");
    require(embedding ? got.value.rank() == 2 && got.value.dim(1) == c.d_model && got.value.dim(0) >= kNumSpecials
                      : want.shape == got.value.shape(),
            ErrorKind::CorruptCheckpoint, "tensor '" + got.name + "' has the wrong shape");
  }
  return out;
}

template <typename T>
void save_checkpoint(const PartitionedModel<T>& model, const CheckpointInfo& info, const std::string& path) {
  const std::string bytes = serialize_checkpoint(model, info);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::IoError, "failed writing " + path);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint<T>(ss.str());
}

}  // namespace xfer
