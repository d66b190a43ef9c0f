#include "core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "core/binary_io.hpp"

namespace peft {

const TensorRecord* CheckpointFile::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

std::size_t CheckpointFile::overhead_bytes() const {
  std::size_t n = 4 + 4 + 1 + 4 + spec.size();
  for (const auto& r : records) n += 2 + r.name.size() + 1 + 4 * r.tensor.ndim();
  return n;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u8(file.method_id);
  w.u32(static_cast<std::uint32_t>(file.spec.size()));
  w.bytes(file.spec.data(), file.spec.size());
  for (const auto& r : file.records) {
    if (r.name.size() > 0xFFFF) throw DataError("tensor name too long: " + r.name);
    if (r.tensor.ndim() == 0 || r.tensor.ndim() > 255) throw DataError("bad tensor rank for " + r.name);
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.u8(static_cast<std::uint8_t>(r.tensor.ndim()));
    for (auto d : r.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : r.tensor.data()) w.f32(v);
  }
  return w.take();
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError("checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  CheckpointFile file;
  file.method_id = r.u8();
  const std::uint32_t spec_len = r.u32();
  file.spec.resize(spec_len);
  r.bytes(file.spec.data(), spec_len);
  while (!r.at_end()) {
    TensorRecord rec;
    const std::uint16_t name_len = r.u16();
    rec.name.resize(name_len);
    r.bytes(rec.name.data(), name_len);
    const std::uint8_t ndim = r.u8();
    if (ndim == 0) throw DataError("checkpoint: tensor '" + rec.name + "' has rank 0");
    Shape shape(ndim);
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw DataError("checkpoint: tensor '" + rec.name + "' has a zero dimension");
    }
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / 4) throw DataError("checkpoint: truncated tensor '" + rec.name + "'");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    rec.tensor = Tensor(std::move(shape), std::move(data));
    file.records.push_back(std::move(rec));
  }
  return file;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

void write_checkpoint(const std::string& path, const CheckpointFile& file) {
  write_file_bytes(path, encode_checkpoint(file));
}

CheckpointFile read_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace peft
