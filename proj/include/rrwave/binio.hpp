#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rrwave/errors.hpp"

namespace rrwave {

// Little-endian byte buffer writer.
class ByteWriter {
 public:
  void put_bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void put_u8(uint8_t v) { buf_.push_back(v); }
  void put_u16(uint16_t v) { put_le(v); }
  void put_u32(uint32_t v) { put_le(v); }
  void put_u64(uint64_t v) { put_le(v); }
  void put_f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_le(u);
  }
  void put_f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_le(u);
  }
  void put_str(const std::string& s, bool u16_len = true) {
    if (u16_len) {
      require(s.size() <= UINT16_MAX, Err::Precondition, "string too long");
      put_u16(static_cast<uint16_t>(s.size()));
    } else {
      put_u32(static_cast<uint32_t>(s.size()));
    }
    put_bytes(s.data(), s.size());
  }

  const std::vector<uint8_t>& bytes() const { return buf_; }
  std::vector<uint8_t>& bytes() { return buf_; }
  size_t size() const { return buf_.size(); }

 private:
  template <typename T>
  void put_le(T v) {
    for (size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

// Bounds-checked little-endian reader; raises `truncated_err` on overrun.
class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t n, Err truncated_err)
      : p_(data), n_(n), err_(truncated_err) {}
  explicit ByteReader(const std::vector<uint8_t>& v, Err truncated_err)
      : ByteReader(v.data(), v.size(), truncated_err) {}

  size_t pos() const { return pos_; }
  size_t remaining() const { return n_ - pos_; }

  void get_bytes(void* out, size_t n) {
    require(pos_ + n <= n_, err_, "unexpected end of data");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  uint8_t get_u8() {
    uint8_t v;
    get_bytes(&v, 1);
    return v;
  }
  uint16_t get_u16() { return get_le<uint16_t>(); }
  uint32_t get_u32() { return get_le<uint32_t>(); }
  uint64_t get_u64() { return get_le<uint64_t>(); }
  float get_f32() {
    uint32_t u = get_le<uint32_t>();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  double get_f64() {
    uint64_t u = get_le<uint64_t>();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  std::string get_str(bool u16_len = true) {
    size_t len = u16_len ? get_u16() : get_u32();
    require(pos_ + len <= n_, err_, "unexpected end of data");
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }

 private:
  template <typename T>
  T get_le() {
    require(pos_ + sizeof(T) <= n_, err_, "unexpected end of data");
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
  Err err_;
};

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Err::MissingFile, path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

// Write-to-temp then atomic rename, so aborted runs leave no partial outputs.
inline void write_file_atomic(const std::string& path, const void* data, size_t n) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Err::MissingFile, "cannot open for write: " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    require(out.good(), Err::MissingFile, "write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline void write_file_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

}  // namespace rrwave
