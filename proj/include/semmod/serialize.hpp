#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "semmod/tensor.hpp"

namespace semmod {

// One entry of the named-tensor container used by checkpoints and world
// files.
struct NamedArray {
  std::string name;
  Array value;
};

// Binary container layout: magic "FFC1", then a 64-bit little-endian entry
// count; each entry is name length, name bytes, rank, extents (all 64-bit
// little-endian integers) followed by the raw 64-bit little-endian IEEE-754
// payload. Round-trips are bit-exact.
void write_container(std::ostream& out, const std::vector<NamedArray>& entries);
std::vector<NamedArray> read_container(std::istream& in);

void write_container_file(const std::filesystem::path& path, const std::vector<NamedArray>& entries);
std::vector<NamedArray> read_container_file(const std::filesystem::path& path);

// Fixed 17-significant-digit decimal rendering; round-trips doubles exactly.
std::string format_g17(double v);

}  // namespace semmod
