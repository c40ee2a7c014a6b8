#include "mis/io.hpp"

#include <png.h>

#include <bit>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace mis {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const fs::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
  return f;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
}

}  // namespace

void write_png(const fs::path& path, const Image& image) {
  if (image.rgb.size() != image.width * image.height * 3 || image.width == 0 || image.height == 0)
    throw std::invalid_argument("write_png: malformed image for " + path.string());
  ensure_parent(path);
  File f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 9);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() + y * image.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw IoError("write failed for " + path.string());
}

Image read_png(const fs::path& path) {
  File f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(path.string() + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path.string());
  }
  Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img = Image(png_get_image_width(png, info), png_get_image_height(png, info));
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.rgb.data() + y * img.width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_ppm(const fs::path& path, const Image& image) {
  ensure_parent(path);
  std::ostringstream head;
  head << "P6\n" << image.width << " " << image.height << "\n255\n";
  const std::string h = head.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.insert(bytes.end(), image.rgb.begin(), image.rgb.end());
  write_bytes(path, bytes);
}

Image read_ppm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && (std::isspace(bytes[pos]) || bytes[pos] == '#')) {
      if (bytes[pos] == '#')
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      else
        ++pos;
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6") throw FormatError(path.string() + " is not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError("bad PPM header in " + path.string());
  }
  if (maxval != 255) throw FormatError(path.string() + ": only 8-bit PPM is supported");
  ++pos;
  if (bytes.size() - pos < w * h * 3) throw FormatError(path.string() + ": truncated PPM data");
  Image img(w, h);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), w * h * 3, img.rgb.begin());
  return img;
}

Image read_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ppm") return read_ppm(path);
  if (ext == ".png") return read_png(path);
  throw FormatError("unsupported image extension for " + path.string());
}

void write_mist(const fs::path& path, const Tensor<float>& t) {
  ByteWriter w;
  w.raw("MIST", 4);
  w.u32(kMistVersion);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  w.u32(0);
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.raw(t.data().data(), t.numel() * sizeof(float));
  write_bytes(path, w.bytes());
}

Tensor<float> read_mist(const fs::path& path) {
  const auto bytes = read_bytes(path);
  ByteReader r(bytes, path.string());
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "MIST", 4) != 0) throw FormatError(path.string() + ": bad tensor file magic");
  const auto version = r.u32();
  if (version != kMistVersion)
    throw FormatError(path.string() + ": unsupported tensor file version " + std::to_string(version));
  const auto rank = r.u32();
  if (r.u32() != 0) throw FormatError(path.string() + ": unsupported dtype");
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  std::vector<float> values(numel(shape));
  r.raw(values.data(), values.size() * sizeof(float));
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after tensor data");
  return Tensor<float>(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void ByteWriter::raw(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  bytes_.insert(bytes_.end(), p, p + n);
}
void ByteWriter::u32(std::uint32_t v) { raw(&v, 4); }
void ByteWriter::u64(std::uint64_t v) { raw(&v, 8); }
void ByteWriter::f32(float v) { raw(&v, 4); }
void ByteWriter::f64(double v) { raw(&v, 8); }
void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteReader::need(std::size_t n) {
  if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": unexpected end of file at byte " + std::to_string(pos_));
}
void ByteReader::raw(void* out, std::size_t n) {
  need(n);
  std::memcpy(out, bytes_.data() + pos_, n);
  pos_ += n;
}
std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  raw(&v, 4);
  return v;
}
std::uint64_t ByteReader::u64() {
  std::uint64_t v;
  raw(&v, 8);
  return v;
}
float ByteReader::f32() {
  float v;
  raw(&v, 4);
  return v;
}
double ByteReader::f64() {
  double v;
  raw(&v, 8);
  return v;
}
std::string ByteReader::str() {
  const auto n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}
void ByteReader::seek(std::size_t pos) {
  if (pos > bytes_.size()) throw FormatError(what_ + ": offset " + std::to_string(pos) + " past end of file");
  pos_ = pos;
}

}  // namespace mis
