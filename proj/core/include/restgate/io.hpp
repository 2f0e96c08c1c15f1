#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace restgate {

// Writes to `<path>.tmp` and renames over `path`, so a failed write never
// leaves a partial file behind. Throws IoError.
void atomic_write(const std::string& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::string& path, std::string_view text);

// Several files as one unit: every temporary is written before any rename, so
// an unwritable path leaves none of the outputs behind.
struct PendingFile {
  std::string path;
  std::string contents;
};
void atomic_write_all(const std::vector<PendingFile>& files);

std::vector<std::uint8_t> read_file(const std::string& path);

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32le(std::vector<std::uint8_t>& out, float v);
void put_f64le(std::vector<std::uint8_t>& out, double v);
std::uint32_t get_u32le(const std::uint8_t* p);
float get_f32le(const std::uint8_t* p);
double get_f64le(const std::uint8_t* p);

// FNV-1a, used for config fingerprints.
std::uint64_t fnv1a64(std::string_view text);
// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

}  // namespace restgate
