#include "core/hsi_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "core/binary_io.hpp"
#include "core/checkpoint.hpp"

namespace peft {

namespace {

constexpr std::uint32_t kHsiVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

void expect_magic(ByteReader& r, const char* magic, const std::string& path) {
  char buf[4];
  r.bytes(buf, 4);
  if (std::memcmp(buf, magic, 4) != 0) throw DataError("'" + path + "': bad magic bytes");
  const std::uint32_t version = r.u32();
  if (version != kHsiVersion)
    throw DataError("'" + path + "': unsupported version " + std::to_string(version));
}

}  // namespace

void write_cube_file(const std::string& path, const HsiCube& cube) {
  ByteWriter w;
  w.bytes("HSIC", 4);
  w.u32(kHsiVersion);
  w.u32(static_cast<std::uint32_t>(cube.height));
  w.u32(static_cast<std::uint32_t>(cube.width));
  w.u32(static_cast<std::uint32_t>(cube.bands));
  w.u8(kDtypeF32);
  for (float v : cube.reflectance.data()) w.f32(v);
  write_file_bytes(path, w.take());
}

void write_label_file(const std::string& path, const HsiCube& cube) {
  ByteWriter w;
  w.bytes("HSGT", 4);
  w.u32(kHsiVersion);
  w.u32(static_cast<std::uint32_t>(cube.height));
  w.u32(static_cast<std::uint32_t>(cube.width));
  for (auto l : cube.labels) w.u16(l);
  write_file_bytes(path, w.take());
}

HsiCube read_cube(const std::string& cube_path, const std::string& label_path) {
  HsiCube cube;
  {
    const auto bytes = read_file_bytes(cube_path);
    ByteReader r(bytes, cube_path);
    expect_magic(r, "HSIC", cube_path);
    cube.height = r.u32();
    cube.width = r.u32();
    cube.bands = r.u32();
    if (r.u8() != kDtypeF32) throw DataError("'" + cube_path + "': unsupported dtype");
    if (cube.height == 0 || cube.width == 0 || cube.bands == 0)
      throw DataError("'" + cube_path + "': zero dimension");
    const std::size_t n = cube.height * cube.width * cube.bands;
    if (r.remaining() != 4 * n) throw DataError("'" + cube_path + "': payload size mismatch");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    cube.reflectance = Tensor({cube.height, cube.width, cube.bands}, std::move(data));
  }
  {
    const auto bytes = read_file_bytes(label_path);
    ByteReader r(bytes, label_path);
    expect_magic(r, "HSGT", label_path);
    const std::size_t h = r.u32(), w = r.u32();
    if (h != cube.height || w != cube.width)
      throw DataError("label raster " + std::to_string(h) + "x" + std::to_string(w) +
                      " does not match cube " + std::to_string(cube.height) + "x" +
                      std::to_string(cube.width));
    if (r.remaining() != 2 * h * w) throw DataError("'" + label_path + "': payload size mismatch");
    cube.labels.resize(h * w);
    for (auto& l : cube.labels) l = r.u16();
  }
  cube.validate();
  return cube;
}

void write_split_file(const std::string& path, const SplitTable& split) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  for (int part = 0; part < 2; ++part) {
    const auto& table = part == 0 ? split.train : split.test;
    for (std::size_t c = 0; c < table.size(); ++c)
      for (const PixelCoord& p : table[c])
        out << (c + 1) << ' ' << p.row << ' ' << p.col << ' ' << (part == 0 ? "train" : "test") << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

SplitTable read_split_file(const std::string& path, const HsiCube& cube) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file '" + path + "'");
  const std::size_t k = cube.class_count();
  SplitTable split;
  split.train.resize(k);
  split.test.resize(k);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream is(line);
    std::size_t cls = 0;
    std::uint32_t row = 0, col = 0;
    std::string part, extra;
    if (!(is >> cls >> row >> col >> part) || (is >> extra) || cls == 0 || cls > k ||
        (part != "train" && part != "test"))
      throw DataError("'" + path + "' line " + std::to_string(line_no) + ": expected 'class row col {train|test}'");
    (part == "train" ? split.train : split.test)[cls - 1].push_back({row, col});
  }
  split.validate(cube);
  return split;
}

}  // namespace peft
