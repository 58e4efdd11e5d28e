#include "handfit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <vector>

namespace handfit {

namespace {

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Low-level writer used for bit depths the simplified API cannot emit.
// Errors longjmp back here; only trivially destructible state lives between
// setjmp and the libpng calls.
bool write_gray1(std::FILE* f, int w, int h, std::vector<png_bytep>& rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 1, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("corrupt PNG " + path.string() + ": " + msg);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  Tensor out(Shape{h, w, channels});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i] / 255.0;
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const Tensor src = image.rank() == 2 ? image.reshaped({image.dim(0), image.dim(1), 1}) : image;
  if (src.rank() != 3 || (src.dim(2) != 1 && src.dim(2) != 3)) throw ShapeError("write_png: unsupported shape " + shape_str(image.shape()));
  std::vector<std::uint8_t> buf(src.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = quantize(src[i]);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(src.dim(1));
  img.height = static_cast<png_uint_32>(src.dim(0));
  img.format = src.dim(2) == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
}

void write_png_1bit(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.rank() != 2) throw ShapeError("write_png_1bit: expected [H, W]");
  const int h = mask.dim(0), w = mask.dim(1);
  const std::size_t stride = static_cast<std::size_t>((w + 7) / 8);
  std::vector<std::uint8_t> buf(stride * h, 0);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[y] = buf.data() + stride * y;
    for (int x = 0; x < w; ++x)
      if (mask.at(y, x) >= 0.5) rows[y][x / 8] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
  }
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path.string());
  const bool ok = write_gray1(f, w, h, rows);
  std::fclose(f);
  if (!ok) throw std::runtime_error("cannot write PNG " + path.string());
}

Tensor to_gray(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ShapeError("to_gray: expected [H, W, 3], got " + shape_str(rgb.shape()));
  Tensor g(Shape{rgb.dim(0), rgb.dim(1)});
  for (int y = 0; y < rgb.dim(0); ++y)
    for (int x = 0; x < rgb.dim(1); ++x)
      g.at(y, x) = 0.299 * rgb.at(y, x, 0) + 0.587 * rgb.at(y, x, 1) + 0.114 * rgb.at(y, x, 2);
  return g;
}

Tensor resize_bilinear(const Tensor& image, int height, int width) {
  const bool flat = image.rank() == 2;
  const Tensor src = flat ? image.reshaped({image.dim(0), image.dim(1), 1}) : image;
  if (src.rank() != 3 || src.dim(0) < 1 || src.dim(1) < 1) throw ShapeError("resize_bilinear: bad input " + shape_str(image.shape()));
  const int h = src.dim(0), w = src.dim(1), c = src.dim(2);
  Tensor out(Shape{height, width, c});
  for (int y = 0; y < height; ++y) {
    const double sy = std::clamp((y + 0.5) * h / height - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = std::clamp((x + 0.5) * w / width - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int ch = 0; ch < c; ++ch)
        out.at(y, x, ch) = (1 - fy) * ((1 - fx) * src.at(y0, x0, ch) + fx * src.at(y0, x1, ch)) +
                           fy * ((1 - fx) * src.at(y1, x0, ch) + fx * src.at(y1, x1, ch));
    }
  }
  return flat ? out.reshaped({height, width}) : out;
}

Tensor squeeze_channel(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 1) throw ShapeError("squeeze_channel: expected [H, W, 1]");
  return image.reshaped({image.dim(0), image.dim(1)});
}

}  // namespace handfit
