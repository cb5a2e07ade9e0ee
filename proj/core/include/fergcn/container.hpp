#pragma once

// Binary container framing shared by datasets, feature files and
// checkpoints:
//
//   4 magic bytes | 1 version byte | "key=value key=value ...\n" | payload
//
// All multi-byte payload fields are little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fergcn {

inline constexpr std::uint8_t kContainerVersion = 1;

using Header = std::map<std::string, std::string>;

class ByteWriter {
 public:
  void magic(std::string_view m);
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f64(double v);
  void f64s(std::span<const double> vs);
  void raw(std::span<const std::uint8_t> vs) { bytes_.insert(bytes_.end(), vs.begin(), vs.end()); }
  void text(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  /// Writes keys in the given order as one space-separated line.
  void header_line(const std::vector<std::pair<std::string, std::string>>& entries);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Sequential reader; every failure is a ParseError carrying the offset.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  void expect_magic(std::string_view m);
  void expect_version(std::uint8_t version);
  Header header_line();

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  double f64();
  void f64s(std::span<double> out);
  void raw(std::span<std::uint8_t> out);
  std::string text(std::size_t n);

  /// Throws if fewer than `n` bytes remain, naming expected and actual counts.
  void require(std::size_t n, std::string_view what) const;
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Looks up a header key, throwing ParseError(offset) when absent.
std::string header_get(const Header& h, const std::string& key, std::size_t offset);
std::uint64_t header_get_uint(const Header& h, const std::string& key, std::size_t offset);

}  // namespace fergcn
