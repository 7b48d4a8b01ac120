#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "seqaug/core/tensor.hpp"

namespace seqaug {

// Tensor record: "CGA1", dtype byte (0x01 = float32), rank byte, rank
// little-endian u64 extents, row-major little-endian payload.
inline constexpr char kTensorMagic[4] = {'C', 'G', 'A', '1'};
inline constexpr unsigned char kDtypeFloat32 = 0x01;

void write_tensor(std::ostream& os, const TensorF& t);
TensorF read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const TensorF& t);
TensorF load_tensor(const std::filesystem::path& path);

// Model checkpoint: versioned header, configuration text, named tensors.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::string kind;    // e.g. "autoencoder", "denoiser"
  std::string config;  // structured text (JSON)
  std::vector<std::pair<std::string, TensorF>> tensors;

  const TensorF& get(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes through a temporary sibling file and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);

}  // namespace seqaug
