#include "io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "errors.hpp"

namespace catface {

namespace {

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> table{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

// Cursor over a loaded archive. Every read checks the remaining length
// first, so a truncated file is reported as such rather than read past.
struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("truncated archive");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

void write_file_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) throw IoError("cannot open for writing: " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out.good()) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("rename failed: " + path);
  }
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len) {
  static const std::array<uint32_t, 256> table = make_crc_table();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void write_pgm(const Tensor& img, const std::string& path) {
  if (!(img.rank() == 2 || (img.rank() == 3 && img.dim(2) == 1))) {
    throw DimensionError("write_pgm: expected H×W or H×W×1");
  }
  const int H = img.dim(0), W = img.dim(1);
  std::vector<uint8_t> bytes;
  const std::string header = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.ptr()[i], 0.0, 1.0);
    bytes.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
  }
  write_file_atomic(path, bytes);
}

void save_archive(const std::vector<NamedTensor>& tensors, const std::string& path,
                  bool as_f32) {
  std::vector<uint8_t> bytes;
  bytes.insert(bytes.end(), {'C', 'A', 'T', 'F'});
  put_u32(bytes, 1);
  put_u64(bytes, tensors.size());
  for (const auto& nt : tensors) {
    put_u32(bytes, static_cast<uint32_t>(nt.name.size()));
    bytes.insert(bytes.end(), nt.name.begin(), nt.name.end());
    put_u32(bytes, static_cast<uint32_t>(nt.t.rank()));
    for (int d = 0; d < nt.t.rank(); ++d) {
      put_u64(bytes, static_cast<uint64_t>(nt.t.dim(d)));
    }
    bytes.push_back(as_f32 ? 0 : 1);
    for (size_t i = 0; i < nt.t.size(); ++i) {
      if (as_f32) {
        put_u32(bytes, std::bit_cast<uint32_t>(static_cast<float>(nt.t.ptr()[i])));
      } else {
        put_u64(bytes, std::bit_cast<uint64_t>(nt.t.ptr()[i]));
      }
    }
  }
  put_u32(bytes, crc32(bytes.data(), bytes.size()));
  write_file_atomic(path, bytes);
}

std::vector<NamedTensor> load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw IoError("cannot open archive: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  in.close();

  if (buf.size() < 4 || std::memcmp(buf.data(), "CATF", 4) != 0) {
    throw IoError("bad magic: not a tensor archive");
  }
  if (buf.size() < 8 + 4) throw IoError("truncated archive");
  const uint32_t stored_crc = static_cast<uint32_t>(buf[buf.size() - 4]) |
                              static_cast<uint32_t>(buf[buf.size() - 3]) << 8 |
                              static_cast<uint32_t>(buf[buf.size() - 2]) << 16 |
                              static_cast<uint32_t>(buf[buf.size() - 1]) << 24;
  if (crc32(buf.data(), buf.size() - 4) != stored_crc) {
    throw IoError("checksum mismatch: archive corrupted");
  }

  Reader r{buf, 4};
  const uint32_t version = r.u32();
  if (version != 1) {
    throw IoError("unsupported archive version " + std::to_string(version));
  }
  const uint64_t count = r.u64();
  const size_t payload_end = buf.size() - 4;

  std::vector<NamedTensor> out;
  out.reserve(count);
  for (uint64_t k = 0; k < count; ++k) {
    const uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const uint32_t rank = r.u32();
    if (rank > 8) throw IoError("truncated archive");
    Shape shape;
    size_t total = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint64_t dim = r.u64();
      if (dim == 0 || dim > (1ull << 32)) throw IoError("truncated archive");
      shape.push_back(static_cast<int>(dim));
      total *= static_cast<size_t>(dim);
    }
    const uint8_t dtype = r.u8();
    if (dtype > 1) throw IoError("unsupported dtype code " + std::to_string(dtype));
    std::vector<double> data(total);
    for (size_t i = 0; i < total; ++i) {
      if (dtype == 0) {
        data[i] = static_cast<double>(std::bit_cast<float>(r.u32()));
      } else {
        data[i] = std::bit_cast<double>(r.u64());
      }
    }
    out.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
  }
  if (r.pos != payload_end) throw IoError("trailing bytes in archive");
  return out;
}

}  // namespace catface
