#include "seqaug/core/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "seqaug/core/error.hpp"

namespace seqaug {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'Q', 'A', 'C', 'K', 'P', 'T', '\0'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated tensor stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::string get_string(std::istream& is, std::uint64_t n) {
  if (n > (1ULL << 31)) throw DataError("implausible string length in checkpoint");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("truncated checkpoint stream");
  return s;
}

}  // namespace

void write_tensor(std::ostream& os, const TensorF& t) {
  if (t.rank() > 255) throw DimensionError("tensor rank exceeds format limit");
  os.write(kTensorMagic, 4);
  const unsigned char header[2] = {kDtypeFloat32, static_cast<unsigned char>(t.rank())};
  os.write(reinterpret_cast<const char*>(header), 2);
  for (auto e : t.shape()) put_u64(os, static_cast<std::uint64_t>(e));
  for (float v : t.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
  }
}

TensorF read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) throw DataError("bad tensor magic");
  unsigned char header[2];
  if (!is.read(reinterpret_cast<char*>(header), 2)) throw DataError("truncated tensor header");
  if (header[0] != kDtypeFloat32) throw DataError("unsupported tensor dtype code " + std::to_string(header[0]));
  Shape shape(header[1]);
  std::uint64_t total = 1;
  for (auto& e : shape) {
    const std::uint64_t v = get_u64(is);
    if (v > (1ULL << 40)) throw DataError("implausible tensor extent");
    e = static_cast<std::int64_t>(v);
    total *= v;
    if (total > (1ULL << 34)) throw DataError("implausible tensor size");
  }
  std::vector<float> data(static_cast<std::size_t>(total));
  std::vector<unsigned char> raw(data.size() * 4);
  if (!raw.empty() && !is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DataError("truncated tensor payload");
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    data[i] = std::bit_cast<float>(bits);
  }
  return TensorF(std::move(shape), std::move(data));
}

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
    writer(os);
    os.flush();
    if (!os) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_tensor(const std::filesystem::path& path, const TensorF& t) {
  atomic_write(path, [&](std::ostream& os) { write_tensor(os, t); });
}

TensorF load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_tensor(is);
}

const TensorF& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw DataError("checkpoint has no tensor named " + name);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  atomic_write(path, [&](std::ostream& os) {
    os.write(kCheckpointMagic, 8);
    put_u32(os, Checkpoint::kVersion);
    put_u64(os, ckpt.kind.size());
    os.write(ckpt.kind.data(), static_cast<std::streamsize>(ckpt.kind.size()));
    put_u64(os, ckpt.config.size());
    os.write(ckpt.config.data(), static_cast<std::streamsize>(ckpt.config.size()));
    put_u64(os, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
      put_u64(os, name.size());
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_tensor(os, t);
    }
  });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  const auto version = get_u32(is);
  if (version != Checkpoint::kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.kind = get_string(is, get_u64(is));
  c.config = get_string(is, get_u64(is));
  const auto count = get_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = get_string(is, get_u64(is));
    c.tensors.emplace_back(std::move(name), read_tensor(is));
  }
  return c;
}

}  // namespace seqaug
