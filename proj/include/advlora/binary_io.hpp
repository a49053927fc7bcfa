// SPDX-License-Identifier: Apache-2.0

// Little-endian binary encoding shared by the dataset (ADVL), model checkpoint
// (ADVC), adapter (ADVA) and probe head (ADVP) containers.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advlora/tensor.hpp"

namespace advlora::io {

using Magic = std::array<char, 4>;

class BinaryWriter {
 public:
  void magic(const Magic& m);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void f64s(std::span<const double> values);
  void string(std::string_view s);
  // Shape (rank + dims) followed by the raw values.
  void tensor(const Tensor& t);
  void bytes(std::span<const std::uint8_t> b) { buffer_.insert(buffer_.end(), b.begin(), b.end()); }

  const std::vector<std::uint8_t>& buffer() const { return buffer_; }
  std::size_t size() const { return buffer_.size(); }

 private:
  std::vector<std::uint8_t> buffer_;
};

// Reads from an in-memory buffer. Every failure is a FormatError carrying the
// absolute byte offset at which decoding failed.
class BinaryReader {
 public:
  explicit BinaryReader(std::span<const std::uint8_t> data, std::uint64_t base_offset = 0)
      : data_(data), base_(base_offset) {}

  void expect_magic(const Magic& m);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  void f64s(std::span<double> out);
  std::string string();
  Tensor tensor();
  std::span<const std::uint8_t> bytes(std::size_t n);

  std::uint64_t offset() const { return base_ + pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n, const char* what);

  std::span<const std::uint8_t> data_;
  std::uint64_t base_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

// Container chunk: magic, u16 version, u64 payload length, payload.
struct Chunk {
  Magic magic{};
  std::uint16_t version = 0;
  std::uint64_t payload_offset = 0;
  std::span<const std::uint8_t> payload;
};

void write_chunk(BinaryWriter& out, const Magic& magic, std::uint16_t version, const BinaryWriter& payload);
std::vector<Chunk> read_chunks(std::span<const std::uint8_t> file);

std::string magic_string(const Magic& m);

}  // namespace advlora::io
