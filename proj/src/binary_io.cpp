// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace cofield::io {

void Writer::Commit(const std::filesystem::path& path) const {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw Error(ErrorCode::kIoError, "write failure on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

Reader::Reader(const std::filesystem::path& path) : name_(path.string()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + name_);
  bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void Reader::Need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kIoError, "unexpected end of file in " + name_);
}

void Reader::ExpectMagic(std::string_view magic) {
  Need(magic.size());
  if (std::string_view(bytes_.data() + pos_, magic.size()) != magic) {
    throw Error(ErrorCode::kParseError, name_ + ": bad magic, expected " + std::string(magic));
  }
  pos_ += magic.size();
}

void Reader::ExpectVersion(uint32_t version) {
  const auto v = Get<uint32_t>();
  if (v != version) {
    throw Error(ErrorCode::kVersionMismatch,
                name_ + ": file version " + std::to_string(v) + ", reader supports " + std::to_string(version));
  }
}

}  // namespace cofield::io
