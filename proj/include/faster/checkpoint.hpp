#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "faster/tensor.hpp"

namespace faster {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::int64_t epoch = 0;
  std::string rng_state;
  std::string config_hash;
  std::map<std::string, std::string> extra;
};

struct TensorRecord {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian values
};

/// Named tensors plus training metadata. On disk: a directory holding
/// `manifest.json` (names, dtypes, shapes, byte ranges, CRC32C) and one
/// blob `tensors.bin`.
class Checkpoint {
 public:
  CheckpointMetadata metadata;

  template <typename Scalar>
  void put(const std::string& name, const Tensor<Scalar>& tensor);

  /// Throws FormatError for an unknown name or a dtype mismatch.
  template <typename Scalar>
  Tensor<Scalar> get(const std::string& name) const;

  /// Copies into `target`; ShapeError naming the tensor when extents differ.
  template <typename Scalar>
  void restore(const std::string& name, Tensor<Scalar>& target) const;

  bool contains(const std::string& name) const;
  const std::vector<TensorRecord>& records() const { return records_; }
  std::vector<TensorRecord>& records() { return records_; }

 private:
  const TensorRecord& find(const std::string& name) const;
  std::vector<TensorRecord> records_;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);

/// Throws VersionError, ChecksumError (CRC mismatch or short blob), ShapeError
/// (manifest shape inconsistent with byte length) and FormatError.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::uint32_t crc32c(std::span<const std::uint8_t> bytes);

/// Hex digest of a canonical configuration string.
std::string config_hash(const std::string& canonical);

std::string rng_state_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_state(const std::string& state);

}  // namespace faster
