#include "medagent/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "medagent/error.hpp"

namespace medagent {

Window window_for_organ(const std::string& organ) {
  std::string lower = organ;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const char* key : {"lung", "airway", "pleura", "bronch"}) {
    if (lower.find(key) != std::string::npos) return kLungWindow;
  }
  return kSoftTissueWindow;
}

std::uint8_t window_level(double hu, Window w) noexcept {
  const double lo = w.center - w.width / 2.0;
  double t = (hu - lo) / w.width;
  if (!(t > 0.0)) t = 0.0;
  if (t > 1.0) t = 1.0;
  return static_cast<std::uint8_t>(std::lround(t * 255.0));
}

RgbImage render_slice(const ScalarVolume& hu, std::int64_t z, Window w) {
  const Dims d = hu.dims();
  if (z < 0 || z >= d.d) throw Error(Errc::SliceOutOfRange, fmt::format("slice {} outside [0, {})", z, d.d));
  RgbImage img{static_cast<int>(d.h), static_cast<int>(d.w), {}};
  img.rgb.resize(static_cast<std::size_t>(d.h * d.w) * 3);
  for (std::int64_t y = 0; y < d.w; ++y) {
    for (std::int64_t x = 0; x < d.h; ++x) {
      const auto g = window_level(hu.at(x, y, z), w);
      img.set(static_cast<int>(x), static_cast<int>(y), {g, g, g});
    }
  }
  return img;
}

std::array<std::uint8_t, 3> label_color(std::uint32_t label) noexcept {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
      {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
  }};
  return kPalette[(label - 1) % kPalette.size()];
}

RgbImage overlay_contours(RgbImage base, const LabelVolume& labels, std::int64_t z) {
  const Dims d = labels.dims();
  if (z < 0 || z >= d.d) throw Error(Errc::SliceOutOfRange, fmt::format("slice {} outside [0, {})", z, d.d));
  if (base.width != d.h || base.height != d.w) throw Error(Errc::DimsMismatch, "overlay raster and label slice differ");
  const auto& data = labels.data();
  auto label = [&](std::int64_t x, std::int64_t y) -> std::uint32_t {
    if (x < 0 || y < 0 || x >= d.h || y >= d.w) return 0;
    return data[d.index(x, y, z)];
  };
  const RgbImage src = base;
  for (std::int64_t y = 0; y < d.w; ++y) {
    for (std::int64_t x = 0; x < d.h; ++x) {
      const auto l = label(x, y);
      if (l == 0) continue;
      const bool edge = x == 0 || y == 0 || x == d.h - 1 || y == d.w - 1 || label(x - 1, y) != l ||
                        label(x + 1, y) != l || label(x, y - 1) != l || label(x, y + 1) != l;
      if (edge) base.set(static_cast<int>(x), static_cast<int>(y), label_color(l));
    }
  }
  return base;
}

RgbImage crop_zoom(const RgbImage& img, PlaneBox box) {
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > img.width || box.y1 > img.height || box.x0 >= box.x1 || box.y0 >= box.y1) {
    throw Error(Errc::InvalidArgument,
                fmt::format("crop box [{},{})x[{},{}) outside {}x{}", box.x0, box.x1, box.y0, box.y1, img.width, img.height));
  }
  RgbImage out{static_cast<int>(2 * (box.x1 - box.x0)), static_cast<int>(2 * (box.y1 - box.y0)), {}};
  out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.set(x, y, img.pixel(static_cast<int>(box.x0) + x / 2, static_cast<int>(box.y0) + y / 2));
    }
  }
  return out;
}

namespace {

void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}
void png_warn_silent(png_structp, png_const_charp) {}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos = 0;
};

void png_read_from_vector(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->bytes->size()) png_error(png, "truncated stream");
  std::memcpy(out, cur->bytes->data() + cur->pos, len);
  cur->pos += len;
}

// libpng signals errors by longjmp; these frames hold no objects with
// destructors so the jump is safe.
bool write_rows(const RgbImage* img, std::vector<std::uint8_t>* out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn_silent);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img->width), static_cast<png_uint_32>(img->height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img->height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&img->rgb[3 * static_cast<std::size_t>(y) * img->width]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

bool read_rows(ReadCursor* cur, RgbImage* img) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn_silent);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, cur, png_read_from_vector);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  img->width = static_cast<int>(png_get_image_width(png, info));
  img->height = static_cast<int>(png_get_image_height(png, info));
  img->rgb.resize(static_cast<std::size_t>(img->width) * img->height * 3);
  for (int y = 0; y < img->height; ++y) {
    png_read_row(png, &img->rgb[3 * static_cast<std::size_t>(y) * img->width], nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  if (img.width <= 0 || img.height <= 0) throw Error(Errc::InvalidArgument, "empty raster");
  std::vector<std::uint8_t> out;
  if (!write_rows(&img, &out)) throw Error(Errc::IoError, "png encoding failed");
  return out;
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw Error(Errc::MalformedHeader, "not a PNG stream");
  ReadCursor cur{&bytes, 0};
  RgbImage img;
  if (!read_rows(&cur, &img)) throw Error(Errc::MalformedHeader, "corrupt PNG stream");
  return img;
}

}  // namespace medagent
