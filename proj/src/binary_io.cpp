// SPDX-License-Identifier: Apache-2.0

#include "advlora/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "advlora/error.hpp"

namespace advlora::io {

namespace {

constexpr std::uint64_t kMaxRank = 8;

}  // namespace

void BinaryWriter::magic(const Magic& m) {
  for (char c : m) buffer_.push_back(static_cast<std::uint8_t>(c));
}

void BinaryWriter::u8(std::uint8_t v) { buffer_.push_back(v); }

void BinaryWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::f64s(std::span<const double> values) {
  buffer_.reserve(buffer_.size() + 8 * values.size());
  for (double v : values) f64(v);
}

void BinaryWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buffer_.insert(buffer_.end(), s.begin(), s.end());
}

void BinaryWriter::tensor(const Tensor& t) {
  u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) u64(d);
  f64s(t.data());
}

void BinaryReader::fail(const std::string& what) const { throw FormatError(what, offset()); }

void BinaryReader::need(std::size_t n, const char* what) {
  if (remaining() < n) fail(std::string("truncated input while reading ") + what);
}

void BinaryReader::expect_magic(const Magic& m) {
  need(4, "magic");
  if (std::memcmp(data_.data() + pos_, m.data(), 4) != 0) fail("bad magic, expected " + magic_string(m));
  pos_ += 4;
}

std::uint8_t BinaryReader::u8() {
  need(1, "u8");
  return data_[pos_++];
}

std::uint16_t BinaryReader::u16() {
  need(2, "u16");
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(data_[pos_++]) << (8 * i);
  return v;
}

std::uint32_t BinaryReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
  return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

void BinaryReader::f64s(std::span<double> out) {
  need(8 * out.size(), "f64 array");
  for (double& v : out) v = f64();
}

std::string BinaryReader::string() {
  const std::uint32_t n = u32();
  need(n, "string");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

Tensor BinaryReader::tensor() {
  const std::uint64_t start = offset();
  const std::uint8_t rank = u8();
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " too large", start);
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = u64();
    if (d != 0 && count > remaining() / d) fail("tensor dimensions exceed remaining input");
    count *= d;
  }
  Tensor t(shape);
  f64s(t.data());
  return t;
}

std::span<const std::uint8_t> BinaryReader::bytes(std::size_t n) {
  need(n, "bytes");
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open " + path.string() + " for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw PathError("failed writing " + path.string());
}

void write_chunk(BinaryWriter& out, const Magic& magic, std::uint16_t version, const BinaryWriter& payload) {
  out.magic(magic);
  out.u16(version);
  out.u64(payload.size());
  out.bytes(payload.buffer());
}

std::vector<Chunk> read_chunks(std::span<const std::uint8_t> file) {
  std::vector<Chunk> chunks;
  BinaryReader r(file);
  while (!r.at_end()) {
    Chunk c;
    auto m = r.bytes(4);
    std::memcpy(c.magic.data(), m.data(), 4);
    c.version = r.u16();
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) r.fail("chunk " + magic_string(c.magic) + " payload truncated");
    c.payload_offset = r.offset();
    c.payload = r.bytes(static_cast<std::size_t>(len));
    chunks.push_back(c);
  }
  return chunks;
}

std::string magic_string(const Magic& m) { return std::string(m.begin(), m.end()); }

}  // namespace advlora::io
