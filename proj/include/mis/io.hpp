#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mis/image.hpp"
#include "mis/tensor.hpp"

namespace mis {

/// Filesystem failure; the message carries the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Readable bytes that are not a valid file of the expected kind.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
/// Dispatches on the extension (.png or .ppm).
Image read_image(const std::filesystem::path& path);

// Tensor files: "MIST", u32 version, u32 rank, u32 dtype (0 = f32), rank x
// u32 extents, then little-endian f32 values.
inline constexpr std::uint32_t kMistVersion = 1;

void write_mist(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_mist(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Little-endian append/read helpers shared by the binary formats.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(const std::string& s);
  void raw(const void* data, std::size_t n);
  std::size_t size() const { return bytes_.size(); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void raw(void* out, std::size_t n);
  std::size_t offset() const { return pos_; }
  void seek(std::size_t pos);
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n);
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace mis
