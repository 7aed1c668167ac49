#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "onerec/error.hpp"

namespace onerec::io {

// Stream writer/reader pair that maintains a running FNV-1a hash of all
// bytes, used as the trailing checksum of binary artifacts.
class HashingWriter {
 public:
  explicit HashingWriter(std::ostream& os) : os_(os) {}

  void write(const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ull;
    }
    os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }

  template <class T>
  void writeValue(const T& v) {
    write(&v, sizeof(T));
  }

  void writeString(const std::string& s) {
    writeValue(static_cast<uint32_t>(s.size()));
    write(s.data(), s.size());
  }

  // Appends the checksum (not itself hashed).
  void finish() {
    const uint64_t h = hash_;
    os_.write(reinterpret_cast<const char*>(&h), sizeof(h));
  }

  uint64_t hash() const { return hash_; }

 private:
  std::ostream& os_;
  uint64_t hash_ = 0xcbf29ce484222325ull;
};

class HashingReader {
 public:
  HashingReader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  void read(void* data, size_t n) {
    is_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!is_) throw IntegrityError("truncated file: " + path_);
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ull;
    }
  }

  template <class T>
  T readValue() {
    T v;
    read(&v, sizeof(T));
    return v;
  }

  std::string readString() {
    const uint32_t n = readValue<uint32_t>();
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  // Reads and verifies the trailing checksum.
  void verifyChecksum() {
    const uint64_t computed = hash_;
    uint64_t stored = 0;
    is_.read(reinterpret_cast<char*>(&stored), sizeof(stored));
    if (!is_) throw IntegrityError("truncated file before checksum: " + path_);
    if (stored != computed) throw IntegrityError("checksum mismatch in " + path_);
  }

  uint64_t hash() const { return hash_; }

 private:
  std::istream& is_;
  std::string path_;
  uint64_t hash_ = 0xcbf29ce484222325ull;
};

}  // namespace onerec::io
