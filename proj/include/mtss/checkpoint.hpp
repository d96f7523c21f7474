#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtss/params.hpp"
#include "mtss/tensor.hpp"

namespace mtss {

namespace detail {

template <typename T>
Tensor<double> widen(const Tensor<T>& t) {
  Tensor<double> out(t.shape);
  for (std::size_t i = 0; i < t.values.size(); ++i) out.values[i] = double(t.values[i]);
  return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<double>& t) {
  Tensor<T> out(t.shape);
  for (std::size_t i = 0; i < t.values.size(); ++i) out.values[i] = T(t.values[i]);
  return out;
}

}  // namespace detail

// Little-endian binary snapshot of a training run. Tensor payloads are
// stored as 64-bit floats in both precision modes so files stay comparable.
// Layout: magic "MTSS", u32 format version, u32 precision bits, u64 seed,
// f64 accumulated cost, named parameter section, per-task section (version,
// batch counter, optimizer state), trailing CRC32 of everything before it.

struct TaskCheckpoint {
  std::uint64_t version = 0;  // applies so far
  std::uint64_t steps = 0;    // batches drawn so far
  std::map<std::string, Tensor<double>> opt_state;
};

struct Checkpoint {
  std::uint32_t precision = 64;
  std::uint64_t seed = 0;
  double accumulated_cost = 0;
  std::map<std::string, Tensor<double>> params;
  std::map<std::string, TaskCheckpoint> tasks;
};

namespace detail {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint32_t crc32_table_entry(std::uint32_t i) {
  std::uint32_t c = i;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
  return c;
}

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  static const auto table = [] {
    std::vector<std::uint32_t> t(256);
    for (std::uint32_t i = 0; i < 256; ++i) t[i] = crc32_table_entry(i);
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;

  void raw(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16),
                         std::uint8_t(v >> 24)};
    raw(b, 4);
  }
  void u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = std::uint8_t(v >> (8 * i));
    raw(b, 8);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    raw(s.data(), s.size());
  }
  void tensor(const Tensor<double>& t) {
    u32(std::uint32_t(t.shape.size()));
    for (auto d : t.shape) u64(std::uint64_t(d));
    for (auto v : t.values) f64(v);
  }
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n) : data_(data), size_(n) {}

  void raw(void* out, std::size_t n) {
    if (pos_ + n > size_) throw std::runtime_error("checkpoint truncated");
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    raw(b, 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
  }
  std::uint64_t u64() {
    std::uint8_t b[8];
    raw(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | b[i];
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    auto n = u32();
    if (n > size_ - pos_) throw std::runtime_error("checkpoint truncated");
    std::string s(std::size_t(n), '\0');
    raw(s.data(), n);
    return s;
  }
  Tensor<double> tensor() {
    auto rank = u32();
    if (rank > 8) throw std::runtime_error("checkpoint tensor rank implausible");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(std::int64_t(u64()));
    auto n = numel(shape);
    if (n < 0 || std::uint64_t(n) * 8 > size_ - pos_)
      throw std::runtime_error("checkpoint truncated");
    Tensor<double> t(shape);
    for (std::int64_t i = 0; i < n; ++i) t.values[std::size_t(i)] = f64();
    return t;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw("MTSS", 4);
  w.u32(detail::kCheckpointVersion);
  w.u32(c.precision);
  w.u64(c.seed);
  w.f64(c.accumulated_cost);
  w.u32(std::uint32_t(c.params.size()));
  for (const auto& [name, t] : c.params) {
    w.str(name);
    w.tensor(t);
  }
  w.u32(std::uint32_t(c.tasks.size()));
  for (const auto& [task, tc] : c.tasks) {
    w.str(task);
    w.u64(tc.version);
    w.u64(tc.steps);
    w.u32(std::uint32_t(tc.opt_state.size()));
    for (const auto& [name, t] : tc.opt_state) {
      w.str(name);
      w.tensor(t);
    }
  }
  w.u32(detail::crc32(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

// Fully parses (checksum first) before returning; a corrupt byte stream
// never yields a partial result.
inline Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw std::runtime_error("checkpoint truncated");
  std::uint32_t stored = std::uint32_t(bytes[bytes.size() - 4]) |
                         std::uint32_t(bytes[bytes.size() - 3]) << 8 |
                         std::uint32_t(bytes[bytes.size() - 2]) << 16 |
                         std::uint32_t(bytes[bytes.size() - 1]) << 24;
  if (detail::crc32(bytes.data(), bytes.size() - 4) != stored)
    throw std::runtime_error("checkpoint checksum mismatch");
  detail::ByteReader r(bytes.data(), bytes.size() - 4);
  char magic[4];
  r.raw(magic, 4);
  if (std::string(magic, 4) != "MTSS") throw std::runtime_error("bad checkpoint magic");
  auto fmt = r.u32();
  if (fmt != detail::kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint format version " + std::to_string(fmt));
  Checkpoint c;
  c.precision = r.u32();
  if (c.precision != 32 && c.precision != 64)
    throw std::runtime_error("checkpoint precision must be 32 or 64");
  c.seed = r.u64();
  c.accumulated_cost = r.f64();
  auto np = r.u32();
  for (std::uint32_t i = 0; i < np; ++i) {
    auto name = r.str();
    c.params.emplace(name, r.tensor());
  }
  auto nt = r.u32();
  for (std::uint32_t i = 0; i < nt; ++i) {
    auto task = r.str();
    TaskCheckpoint tc;
    tc.version = r.u64();
    tc.steps = r.u64();
    auto no = r.u32();
    for (std::uint32_t j = 0; j < no; ++j) {
      auto name = r.str();
      tc.opt_state.emplace(name, r.tensor());
    }
    c.tasks.emplace(task, std::move(tc));
  }
  return c;
}

inline void write_checkpoint_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write: " + path);
}

inline std::vector<std::uint8_t> read_checkpoint_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::fseek(f, 0, SEEK_END);
  long n = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<std::uint8_t> bytes(std::size_t(n > 0 ? n : 0));
  std::size_t got = std::fread(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (got != bytes.size()) throw std::runtime_error("short read: " + path);
  return bytes;
}

template <typename T>
void load_params(const Checkpoint& c, ParamStore<T>& store) {
  for (const auto& [name, t] : c.params)
    store.ensure(name, t.shape, Init::Zero).values = detail::narrow<T>(t).values;
}

// Copies checkpoint values into the parameters the store already declares;
// names only one side knows are left alone. Returns how many were loaded.
template <typename T>
std::size_t load_matching_params(const Checkpoint& c, ParamStore<T>& store) {
  std::size_t n = 0;
  for (auto& [name, t] : store) {
    auto it = c.params.find(name);
    if (it == c.params.end()) continue;
    if (it->second.shape != t.shape)
      throw std::invalid_argument("checkpoint shape mismatch for " + name);
    t.values = detail::narrow<T>(it->second).values;
    ++n;
  }
  return n;
}

}  // namespace mtss
