// SPDX-License-Identifier: Apache-2.0
#include "dance/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <system_error>

#include "dance/error.hpp"

namespace dance {
namespace {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are not supported");

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  if (size < 0) throw IoError("cannot size " + path.string());
  in.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
  if (size > 0 && !in.read(reinterpret_cast<char*>(buf.data()), size))
    throw IoError("short read on " + path.string());
  return buf;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw IoError("write failed on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void ByteWriter::u16(std::uint16_t v) { bytes(&v, sizeof v); }
void ByteWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }
void ByteWriter::u64(std::uint64_t v) { bytes(&v, sizeof v); }
void ByteWriter::f32(float v) { bytes(&v, sizeof v); }
void ByteWriter::f64(double v) { bytes(&v, sizeof v); }

void ByteWriter::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf_.insert(buf_.end(), p, p + n);
}

void ByteWriter::str16(std::string_view s) {
  if (s.size() > 0xFFFF) throw IoError("string too long for u16 length: " + std::string(s.substr(0, 32)));
  u16(static_cast<std::uint16_t>(s.size()));
  bytes(s.data(), s.size());
}

void ByteReader::fail(const std::string& msg) const {
  throw IoError(what_ + ": " + msg + " (offset " + std::to_string(pos_) + ")");
}

void ByteReader::need(std::size_t n) {
  if (n > size_ - pos_)
    fail("truncated, need " + std::to_string(n) + " bytes, " + std::to_string(size_ - pos_) +
         " left");
}

void ByteReader::bytes(void* out, std::size_t n) {
  need(n);
  if (n) std::memcpy(out, data_ + pos_, n);
  pos_ += n;
}

void ByteReader::skip(std::size_t n) {
  need(n);
  pos_ += n;
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint16_t ByteReader::u16() {
  std::uint16_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint32_t ByteReader::u32_be() {
  std::uint8_t b[4];
  bytes(b, 4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

std::uint64_t ByteReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}

float ByteReader::f32() {
  float v;
  bytes(&v, sizeof v);
  return v;
}

double ByteReader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}

std::string ByteReader::str16() {
  const std::uint16_t n = u16();
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

}  // namespace dance
