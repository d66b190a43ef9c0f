#pragma once

#include <string>

#include "core/hsi.hpp"

namespace peft {

// .hsic: "HSIC" | u32 version | u32 H | u32 W | u32 B | u8 dtype (1 = f32) |
//        H·W·B f32, pixel-major, band-fastest. Little-endian throughout.
void write_cube_file(const std::string& path, const HsiCube& cube);
// .hsgt: "HSGT" | u32 version | u32 H | u32 W | H·W u16 (0 = unlabeled).
void write_label_file(const std::string& path, const HsiCube& cube);

// Reads both files and validates that their geometry agrees.
HsiCube read_cube(const std::string& cube_path, const std::string& label_path);

// One line per pixel: "class row col {train|test}".
void write_split_file(const std::string& path, const SplitTable& split);
SplitTable read_split_file(const std::string& path, const HsiCube& cube);

}  // namespace peft
