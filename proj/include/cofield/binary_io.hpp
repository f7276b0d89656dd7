// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

// Little-endian primitive I/O shared by the sample, field and checkpoint files.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cofield/error.hpp"

namespace cofield::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
  void Put(T value) {
    static_assert(std::is_arithmetic_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void PutMagic(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

  /// Writes to a sibling temporary and renames it over `path`.
  void Commit(const std::filesystem::path& path) const;

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  /// Reads the whole file; throws IoError if it cannot be opened.
  explicit Reader(const std::filesystem::path& path);

  template <typename T>
  T Get() {
    static_assert(std::is_arithmetic_v<T>);
    Need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  /// Throws ParseError when the next bytes are not `magic`.
  void ExpectMagic(std::string_view magic);
  /// Throws VersionMismatch unless the next u32 equals `version`.
  void ExpectVersion(uint32_t version);
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void Need(std::size_t n) const;

  std::string name_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace cofield::io
