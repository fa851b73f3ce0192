#pragma once

// Little-endian primitives shared by the record and weight file formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace amlhp::io {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
void write_le(std::ostream& os, T value) {
  std::string buf;
  put_le(buf, value);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <typename T>
T from_le(const unsigned char* p) {
  T value;
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

// Reads sizeof(T) bytes; returns false on short read.
template <typename T>
bool read_le(std::istream& is, T& value) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  value = from_le<T>(buf);
  return true;
}

// Cursor over an in-memory byte string.
class Reader {
 public:
  // Borrows `bytes`, which must outlive the reader.
  explicit Reader(const std::string& bytes)
      : data_(reinterpret_cast<const unsigned char*>(bytes.data())), size_(bytes.size()) {}
  explicit Reader(std::string&&) = delete;

  std::size_t remaining() const { return size_ - pos_; }
  bool done() const { return pos_ >= size_; }

  template <typename T>
  bool get(T& value) {
    if (remaining() < sizeof(T)) return false;
    value = from_le<T>(data_ + pos_);
    pos_ += sizeof(T);
    return true;
  }

  bool get_bytes(std::size_t n, std::string& out) {
    if (remaining() < n) return false;
    out.assign(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return true;
  }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace amlhp::io
