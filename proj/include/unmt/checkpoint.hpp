#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace unmt {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Binary layout, little-endian throughout:
///   "UNMT" | u32 version | u32 record count
///   per record: u32 name length | name bytes | u8 dtype (1 = f32) | u64 rank | u64 dims[rank] | f32 payload
///   u64 length | config text (key = value lines)
///   u64 length | state text (key = value lines: iteration, epoch, step, ...)
///   u64 length | RNG state text
struct Checkpoint {
  std::vector<CheckpointRecord> records;
  std::string config_text;
  std::map<std::string, std::string> state;
  std::string rng_state;

  const CheckpointRecord* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }

  const CheckpointRecord& at(const std::string& name) const {
    if (const auto* r = find(name)) return *r;
    throw FormatError("checkpoint has no record '" + name + "'");
  }

  template <class T>
  void add(const std::string& name, const Tensor<T>& t) {
    CheckpointRecord r{name, t.shape(), {}};
    r.data.reserve(t.size());
    for (auto v : t.data()) r.data.push_back(static_cast<float>(v));
    records.push_back(std::move(r));
  }

  void add(const std::string& name, Shape shape, std::vector<float> data) {
    if (numel(shape) != data.size()) throw DimensionError("checkpoint record '" + name + "': shape/payload mismatch");
    records.push_back({name, std::move(shape), std::move(data)});
  }

  /// Copies a record into an existing tensor of the same shape.
  template <class T>
  void restore(const std::string& name, Tensor<T>& t) const {
    const auto& r = at(name);
    if (r.shape != t.shape()) {
      throw DimensionError("checkpoint record '" + name + "' has shape " + shape_str(r.shape) + ", model expects " +
                           shape_str(t.shape()));
    }
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < r.data.size(); ++i) w[i] = static_cast<T>(r.data[i]);
  }

  const std::string& state_at(const std::string& key) const {
    auto it = state.find(key);
    if (it == state.end()) throw FormatError("checkpoint state has no key '" + key + "'");
    return it->second;
  }
};

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_text(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string path) : b_(bytes), path_(std::move(path)) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string text(std::uint64_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("checkpoint '" + path_ + "' at byte " + std::to_string(pos_) + ": " + what);
  }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) fail("truncated file");
  }

  const std::string& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string kv_text(const std::map<std::string, std::string>& m) {
  std::string s;
  for (const auto& [k, v] : m) s += k + "=" + v + "\n";
  return s;
}

inline std::map<std::string, std::string> parse_kv_text(const std::string& s) {
  std::map<std::string, std::string> m;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out = "UNMT";
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& r : ck.records) {
    detail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    detail::put_u8(out, kDtypeF32);
    detail::put_u64(out, r.shape.size());
    for (auto d : r.shape) detail::put_u64(out, d);
    for (float v : r.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  detail::put_text(out, ck.config_text);
  detail::put_text(out, detail::kv_text(ck.state));
  detail::put_text(out, ck.rng_state);
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
  detail::ByteReader in(bytes, path);
  if (in.text(4) != "UNMT") in.fail("bad magic (not a checkpoint file)");
  const auto version = in.uint(4);
  if (version != kCheckpointVersion) in.fail("unsupported format version " + std::to_string(version));
  const auto count = in.uint(4);
  Checkpoint ck;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = in.text(in.uint(4));
    if (in.uint(1) != kDtypeF32) in.fail("record '" + r.name + "' has unknown dtype");
    const auto rank = in.uint(8);
    if (rank > 8) in.fail("record '" + r.name + "' has implausible rank");
    for (std::uint64_t k = 0; k < rank; ++k) r.shape.push_back(in.uint(8));
    r.data.resize(numel(r.shape));
    for (auto& v : r.data) v = std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4)));
    ck.records.push_back(std::move(r));
  }
  ck.config_text = in.text(in.uint(8));
  ck.state = detail::parse_kv_text(in.text(in.uint(8)));
  ck.rng_state = in.text(in.uint(8));
  if (!in.done()) in.fail("trailing bytes");
  return ck;
}

/// Writes through a temporary file and renames, so a crash never leaves a
/// partially written checkpoint under the final name.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + tmp + "'");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for checkpoint '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str(), path);
}

}  // namespace unmt
