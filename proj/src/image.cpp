#include "hivar/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>

#include "hivar/binio.hpp"

namespace hivar {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  std::streamoff n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
  if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw IoError("cannot read file: " + path);
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open file for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("cannot write file: " + path);
}

Tensor Image::to_tensor() const { return Tensor::from_data({kChannels, height, width}, data); }

Image Image::from_tensor(const Tensor& t, bool clamp) {
  if (t.shape().size() != 3 || t.dim(0) != kChannels)
    throw ShapeError("Image::from_tensor: expected [3,H,W], got " + shape_str(t.shape()));
  Image img(t.dim(1), t.dim(2));
  img.data = t.values();
  if (clamp) img.clamp01();
  return img;
}

void Image::clamp01() {
  for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
}

Image interpolate(const Image& src, std::int64_t h2, std::int64_t w2, ResampleMode mode) {
  if (src.height < 1 || src.width < 1) throw ShapeError("interpolate: empty image");
  Image out(h2, w2);
  out.data = resize_chw(src.data.data(), Image::kChannels, src.height, src.width, h2, w2, mode);
  return out;
}

namespace {

struct PngReadCtx {
  const std::uint8_t* data = nullptr;
  std::size_t size = 0;
  std::size_t pos = 0;
  char message[256] = {0};
};

extern "C" void hivar_png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
  if (ctx->pos + n > ctx->size) {
    png_error(png, "truncated PNG stream");
    return;
  }
  std::memcpy(out, ctx->data + ctx->pos, n);
  ctx->pos += n;
}

extern "C" void hivar_png_error_cb(png_structp png, png_const_charp msg) {
  auto* ctx = static_cast<PngReadCtx*>(png_get_error_ptr(png));
  std::snprintf(ctx->message, sizeof(ctx->message), "%s", msg);
  longjmp(png_jmpbuf(png), 1);
}

extern "C" void hivar_png_warn_cb(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  PngReadCtx ctx;
  ctx.data = bytes.data();
  ctx.size = bytes.size();

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &ctx, hivar_png_error_cb, hivar_png_warn_cb);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed");
  }

  // Row storage is allocated before setjmp so the error path never skips a
  // live destructor.
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;

  if (setjmp(png_jmpbuf(png))) {
    std::uint64_t off = ctx.pos;
    std::string msg = ctx.message[0] ? ctx.message : "PNG decode error";
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path + ": " + msg, off);
  }

  png_set_read_fn(png, &ctx, hivar_png_read_cb);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(static_cast<std::int64_t>(h), static_cast<std::int64_t>(w));
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        img.at(c, y, x) = pixels[y * rowbytes + 3 * x + c] / 255.0;
  img.clamp01();
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.height < 1 || img.width < 1) throw IoError("write_png: empty image");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open file for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("libpng init failed");
  }

  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(img.height * img.width * 3));
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        pixels[(y * img.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y) rows[y] = pixels.data() + y * img.width * 3;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encode error: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

namespace {
constexpr char kRawMagic[4] = {'H', 'V', 'T', 'N'};
constexpr std::uint32_t kRawVersion = 1;
}  // namespace

Tensor read_raw_tensor(const std::string& path) {
  ByteReader r(read_file_bytes(path));
  r.expect_magic(kRawMagic);
  std::uint32_t version = r.read_u32();
  if (version != kRawVersion)
    throw ParseError("unsupported HVTN version " + std::to_string(version), r.pos() - 4);
  std::uint32_t rank = r.read_u32();
  if (rank > 8) throw ParseError("implausible tensor rank " + std::to_string(rank), r.pos() - 4);
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::int64_t>(r.read_u64());
  std::int64_t n = numel_of(shape);
  if (n < 0 || n > (1LL << 32)) throw ParseError("implausible tensor size", r.pos());
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = r.read_f64();
  if (!r.at_end()) throw ParseError("trailing bytes after tensor payload", r.pos());
  return Tensor::from_data(std::move(shape), std::move(data));
}

void write_raw_tensor(const std::string& path, const Tensor& t) {
  ByteWriter w;
  w.write_magic(kRawMagic);
  w.write_u32(kRawVersion);
  w.write_u32(static_cast<std::uint32_t>(t.shape().size()));
  for (auto e : t.shape()) w.write_u64(static_cast<std::uint64_t>(e));
  for (double v : t.values()) w.write_f64(v);
  write_file_bytes(path, w.bytes());
}

}  // namespace hivar
