#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "slick/tensor.hpp"

namespace slick {

// Binary tensor file: magic "SLKT", u8 version, u8 rank, rank x u64 dims
// (little-endian), then the f64 payload little-endian row-major.
void write_slkt(const std::filesystem::path& path, const Tensor& t);
Tensor read_slkt(const std::filesystem::path& path);

// In-memory variants, used by the .slkp prediction container.
void append_slkt(std::vector<uint8_t>& out, const Tensor& t);
Tensor parse_slkt(const uint8_t* data, size_t size, size_t* consumed);

// FNV-1a over bytes; stable content hash for run manifests and golden tests.
uint64_t fnv1a(const void* data, size_t size);
uint64_t tensor_fingerprint(const Tensor& t);
std::string hex64(uint64_t v);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace slick
