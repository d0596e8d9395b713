#include "slick/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace slick {

static_assert(std::endian::native == std::endian::little,
              "SLKT I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'L', 'K', 'T'};
constexpr uint8_t kVersion = 1;

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void append_slkt(std::vector<uint8_t>& out, const Tensor& t) {
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  if (t.rank() > 255) throw std::invalid_argument("tensor rank exceeds SLKT limit");
  out.push_back(static_cast<uint8_t>(t.rank()));
  for (int d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
  const size_t off = out.size();
  out.resize(off + t.numel() * sizeof(double));
  std::memcpy(out.data() + off, t.value().data(), t.numel() * sizeof(double));
}

Tensor parse_slkt(const uint8_t* data, size_t size, size_t* consumed) {
  if (size < 6 || std::memcmp(data, kMagic, 4) != 0) {
    throw std::runtime_error("not an SLKT tensor (bad magic)");
  }
  if (data[4] != kVersion) {
    throw std::runtime_error("unsupported SLKT version " + std::to_string(data[4]));
  }
  const int rank = data[5];
  size_t need = 6 + static_cast<size_t>(rank) * 8;
  if (size < need) throw std::runtime_error("truncated SLKT header");
  Shape shape(static_cast<size_t>(rank));
  size_t n = 1;
  for (int i = 0; i < rank; ++i) {
    uint64_t d = get_u64(data + 6 + static_cast<size_t>(i) * 8);
    if (d == 0 || d > (1ull << 31)) throw std::runtime_error("bad SLKT dimension");
    shape[static_cast<size_t>(i)] = static_cast<int>(d);
    n *= d;
  }
  if (size < need + n * sizeof(double)) throw std::runtime_error("truncated SLKT payload");
  std::vector<double> payload(n);
  std::memcpy(payload.data(), data + need, n * sizeof(double));
  if (consumed != nullptr) *consumed = need + n * sizeof(double);
  return Tensor::from(std::move(shape), std::move(payload));
}

void write_slkt(const std::filesystem::path& path, const Tensor& t) {
  std::vector<uint8_t> buf;
  append_slkt(buf, t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_slkt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  size_t consumed = 0;
  Tensor t = parse_slkt(buf.data(), buf.size(), &consumed);
  if (consumed != buf.size()) throw std::runtime_error("trailing bytes in SLKT file: " + path.string());
  return t;
}

uint64_t fnv1a(const void* data, size_t size) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t tensor_fingerprint(const Tensor& t) {
  std::vector<uint8_t> buf;
  append_slkt(buf, t);
  return fnv1a(buf.data(), buf.size());
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace slick
