#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace peft {

inline constexpr char kCheckpointMagic[4] = {'P', 'E', 'F', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Tensor tensor;
};

// On-disk layout, all integers little-endian:
//   "PEFT" | u32 version | u8 method id | u32 spec length | spec UTF-8 |
//   records: u16 name length | name | u8 ndim | u32 dims... | f32 data...
struct CheckpointFile {
  std::uint8_t method_id = 0;
  std::string spec;
  std::vector<TensorRecord> records;

  const TensorRecord* find(const std::string& name) const;
  // Bytes that are not tensor payload.
  std::size_t overhead_bytes() const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::string& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace peft
