#include "fergcn/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fergcn/errors.hpp"

namespace fergcn {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

void ByteWriter::magic(std::string_view m) { text(m); }
void ByteWriter::u16(std::uint16_t v) { put_le(bytes_, v); }
void ByteWriter::u32(std::uint32_t v) { put_le(bytes_, v); }
void ByteWriter::f64(double v) { put_le(bytes_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> vs) {
  bytes_.reserve(bytes_.size() + vs.size() * 8);
  for (double v : vs) f64(v);
}

void ByteWriter::header_line(const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string line;
  for (const auto& [k, v] : entries) {
    if (!line.empty()) line += ' ';
    line += k + "=" + v;
  }
  line += '\n';
  text(line);
}

void ByteReader::require(std::size_t n, std::string_view what) const {
  if (remaining() < n) {
    throw ParseError("truncated " + std::string(what) + ": expected " + std::to_string(n) + " bytes, found " +
                         std::to_string(remaining()),
                     pos_);
  }
}

void ByteReader::expect_magic(std::string_view m) {
  if (bytes_.empty()) throw ParseError("empty file", 0);
  require(m.size(), "magic");
  if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0) {
    throw ParseError("bad magic bytes, expected \"" + std::string(m) + "\"", pos_);
  }
  pos_ += m.size();
}

void ByteReader::expect_version(std::uint8_t version) {
  const std::size_t at = pos_;
  const std::uint8_t v = u8();
  if (v != version) {
    throw ParseError("unsupported container version " + std::to_string(v) + " (reader supports " +
                         std::to_string(version) + ")",
                     at);
  }
}

Header ByteReader::header_line() {
  const std::size_t start = pos_;
  std::size_t end = start;
  while (end < bytes_.size() && bytes_[end] != '\n') ++end;
  if (end == bytes_.size()) throw ParseError("header line is not terminated", start);
  std::string line(bytes_.begin() + static_cast<std::ptrdiff_t>(start), bytes_.begin() + static_cast<std::ptrdiff_t>(end));
  pos_ = end + 1;
  Header h;
  std::istringstream in(line);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("malformed header entry '" + token + "'", start);
    h[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return h;
}

std::uint8_t ByteReader::u8() {
  require(1, "u8 field");
  return bytes_[pos_++];
}

std::uint16_t ByteReader::u16() {
  require(2, "u16 field");
  const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  require(4, "u32 field");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

double ByteReader::f64() {
  require(8, "f64 field");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return std::bit_cast<double>(v);
}

void ByteReader::f64s(std::span<double> out) {
  require(out.size() * 8, "f64 array");
  for (auto& v : out) v = f64();
}

void ByteReader::raw(std::span<std::uint8_t> out) {
  require(out.size(), "byte array");
  std::memcpy(out.data(), bytes_.data() + pos_, out.size());
  pos_ += out.size();
}

std::string ByteReader::text(std::size_t n) {
  require(n, "text field");
  std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string header_get(const Header& h, const std::string& key, std::size_t offset) {
  const auto it = h.find(key);
  if (it == h.end()) throw ParseError("header is missing key '" + key + "'", offset);
  return it->second;
}

std::uint64_t header_get_uint(const Header& h, const std::string& key, std::size_t offset) {
  const std::string v = header_get(h, key, offset);
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ParseError("header key '" + key + "' is not an unsigned integer: '" + v + "'", offset);
  }
}

}  // namespace fergcn
