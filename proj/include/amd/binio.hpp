#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace amd {

/// Little-endian byte sink independent of host byte order.
class ByteWriter {
 public:
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void put_u8(std::uint8_t v) { buf_.push_back(v); }
  void put_u16(std::uint16_t v) { put_le(v, 2); }
  void put_u32(std::uint32_t v) { put_le(v, 4); }
  void put_f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }

  const std::vector<unsigned char>& bytes() const { return buf_; }
  std::vector<unsigned char> take() { return std::move(buf_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::uint8_t get_u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t get_u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t get_u32() { return static_cast<std::uint32_t>(get_le(4)); }
  double get_f64() { return std::bit_cast<double>(get_le(8)); }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error(what_ + ": truncated input");
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::vector<unsigned char>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// 64-bit FNV-1a, used for input fingerprints in run manifests.
std::uint64_t fnv1a64(const std::vector<unsigned char>& bytes);

}  // namespace amd
