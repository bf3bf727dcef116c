#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace catface {

// IEEE 802.3 CRC32 (reflected 0xEDB88320, init/final 0xFFFFFFFF).
uint32_t crc32(const uint8_t* data, size_t len);

// 8-bit binary PGM from an H×W or H×W×1 tensor; values clamped to [0,1] and
// rounded to 0..255.
void write_pgm(const Tensor& img, const std::string& path);

// Binary tensor archive. Layout, all integers little-endian:
//   "CATF" | u32 version=1 | u64 count
//   per tensor: u32 name_len | name | u32 rank | u64 dims[rank]
//               | u8 dtype (0=f32, 1=f64) | payload
//   u32 crc32 over every preceding byte
// Writes go to path+".tmp" then rename, so a crash never leaves a partial
// archive at the target path. With as_f32 the f64 values are rounded to
// float on write and widened back on load.
void save_archive(const std::vector<NamedTensor>& tensors, const std::string& path,
                  bool as_f32 = false);

// Verifies the checksum and every length field before trusting any of them.
// Bad magic, unsupported version, checksum mismatch, and truncation each
// raise IoError with a distinct message.
std::vector<NamedTensor> load_archive(const std::string& path);

}  // namespace catface
