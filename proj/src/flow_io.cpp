#include "epitraj/flow_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include <png.h>

#include "epitraj/errors.hpp"
#include "bytes.hpp"

namespace epitraj {

namespace {

using namespace detail;

constexpr float kFloMagic = 202021.25f;

struct PfmData {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> samples;  // top-to-bottom rows, interleaved channels
};

PfmData parse_pfm(const std::string& bytes, const fs::path& path) {
  std::istringstream in(bytes);
  std::string tag;
  in >> tag;
  PfmData d;
  if (tag == "Pf") {
    d.channels = 1;
  } else if (tag == "PF") {
    d.channels = 3;
  } else {
    throw FormatError("PFM: bad header tag in " + path.string());
  }
  double scale = 0;
  if (!(in >> d.width >> d.height >> scale) || d.width <= 0 || d.height <= 0 ||
      scale == 0 || !std::isfinite(scale)) {
    throw FormatError("PFM: malformed header in " + path.string());
  }
  // Exactly one whitespace byte separates the header from the payload.
  in.get();
  if (!in) throw FormatError("PFM: missing payload in " + path.string());
  const auto offset = static_cast<std::size_t>(in.tellg());
  const std::size_t count =
      static_cast<std::size_t>(d.width) * d.height * d.channels;
  if (bytes.size() - offset != count * 4) {
    throw FormatError("PFM: payload size mismatch in " + path.string());
  }
  const bool little = scale < 0;
  d.samples.resize(count);
  const char* p = bytes.data() + offset;
  // Rows are stored bottom-to-top.
  const std::size_t row = static_cast<std::size_t>(d.width) * d.channels;
  for (int y = 0; y < d.height; ++y) {
    const char* src = p + static_cast<std::size_t>(d.height - 1 - y) * row * 4;
    float* dst = d.samples.data() + static_cast<std::size_t>(y) * row;
    for (std::size_t i = 0; i < row; ++i) dst[i] = get_f32(src + 4 * i, little);
  }
  return d;
}

std::string encode_pfm(int width, int height, int channels,
                       const std::vector<float>& samples) {
  std::string out = (channels == 1 ? "Pf\n" : "PF\n") + std::to_string(width) +
                    " " + std::to_string(height) + "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(width) * channels;
  out.reserve(out.size() + samples.size() * 4);
  for (int y = height - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row; ++i) {
      put_f32(out, samples[static_cast<std::size_t>(y) * row + i]);
    }
  }
  return out;
}

struct PngWriteDeleter {
  png_structp png;
  png_infop info;
  ~PngWriteDeleter() { png_destroy_write_struct(&png, &info); }
};
struct PngReadDeleter {
  png_structp png;
  png_infop info;
  ~PngReadDeleter() { png_destroy_read_struct(&png, &info, nullptr); }
};

void png_error_throw(png_structp, png_const_charp msg) {
  throw FormatError(std::string("PNG: ") + msg);
}
void png_warning_ignore(png_structp, png_const_charp) {}

void png_append(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}
void png_flush_noop(png_structp) {}

struct PngSource {
  const std::string* bytes;
  std::size_t pos;
};
void png_consume(png_structp png, png_bytep data, png_size_t len) {
  auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
  if (src->pos + len > src->bytes->size()) {
    png_error(png, "truncated file");
  }
  std::memcpy(data, src->bytes->data() + src->pos, len);
  src->pos += len;
}

std::string encode_png(int width, int height, int channels,
                       const std::vector<std::uint8_t>& pixels) {
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            png_error_throw, png_warning_ignore);
  if (!png) throw IoError("PNG: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  PngWriteDeleter guard{png, info};
  png_set_write_fn(png, &out, png_append, png_flush_noop);
  png_set_IHDR(png, info, width, height, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * stride));
  }
  png_write_end(png, nullptr);
  return out;
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

void check_finite(const FlowField& field) {
  if (field.u.size() != field.v.size()) {
    throw DataError("flow channels differ in size");
  }
  for (std::size_t i = 0; i < field.u.size(); ++i) {
    if (!std::isfinite(field.u[i]) || !std::isfinite(field.v[i])) {
      throw DataError("flow field contains non-finite values");
    }
  }
}

FlowField read_flo(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 12) throw FormatError(".flo: truncated header in " + path.string());
  if (get_f32(bytes.data()) != kFloMagic) {
    throw FormatError(".flo: bad magic in " + path.string());
  }
  const auto w = static_cast<std::int32_t>(get_u32(bytes.data() + 4));
  const auto h = static_cast<std::int32_t>(get_u32(bytes.data() + 8));
  if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
    throw FormatError(".flo: implausible dimensions in " + path.string());
  }
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() != 12 + n * 8) {
    throw FormatError(".flo: payload size mismatch in " + path.string());
  }
  FlowField f(w, h);
  const char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < n; ++i) {
    f.u[i] = get_f32(p + 8 * i);
    f.v[i] = get_f32(p + 8 * i + 4);
  }
  check_finite(f);
  return f;
}

void write_flo(const FlowField& field, const fs::path& path) {
  if (!field.u.same_shape(field.v)) throw ArgError("flow channels differ in shape");
  check_finite(field);
  std::string out;
  out.reserve(12 + field.u.size() * 8);
  put_f32(out, kFloMagic);
  put_u32(out, static_cast<std::uint32_t>(field.width()));
  put_u32(out, static_cast<std::uint32_t>(field.height()));
  for (std::size_t i = 0; i < field.u.size(); ++i) {
    put_f32(out, field.u[i]);
    put_f32(out, field.v[i]);
  }
  write_file_atomic(path, out);
}

FloatRaster read_pfm_gray(const fs::path& path) {
  PfmData d = parse_pfm(read_file(path), path);
  if (d.channels != 1) throw FormatError("PFM: expected grayscale in " + path.string());
  FloatRaster r(d.width, d.height);
  r.data() = std::move(d.samples);
  return r;
}

void write_pfm(const FloatRaster& raster, const fs::path& path) {
  if (raster.empty()) throw ArgError("PFM: empty raster");
  write_file_atomic(path, encode_pfm(raster.width(), raster.height(), 1, raster.data()));
}

MotionImage read_pfm_color(const fs::path& path) {
  PfmData d = parse_pfm(read_file(path), path);
  if (d.channels != 3) throw FormatError("PFM: expected 3 channels in " + path.string());
  MotionImage m{FloatRaster(d.width, d.height), FloatRaster(d.width, d.height),
                FloatRaster(d.width, d.height)};
  for (std::size_t i = 0; i < m.u.size(); ++i) {
    m.u[i] = d.samples[3 * i];
    m.v[i] = d.samples[3 * i + 1];
    m.ed[i] = d.samples[3 * i + 2];
  }
  return m;
}

void write_pfm(const MotionImage& image, const fs::path& path) {
  if (!image.u.same_shape(image.v) || !image.u.same_shape(image.ed)) {
    throw ArgError("PFM: motion image channels differ in shape");
  }
  if (image.u.empty()) throw ArgError("PFM: empty motion image");
  std::vector<float> s(image.u.size() * 3);
  for (std::size_t i = 0; i < image.u.size(); ++i) {
    s[3 * i] = image.u[i];
    s[3 * i + 1] = image.v[i];
    s[3 * i + 2] = image.ed[i];
  }
  write_file_atomic(path, encode_pfm(image.width(), image.height(), 3, s));
}

Mask read_mask(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8)) {
    throw FormatError("PNG: bad signature in " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           png_error_throw, png_warning_ignore);
  if (!png) throw IoError("PNG: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  PngReadDeleter guard{png, info};
  PngSource src{&bytes, 0};
  png_set_read_fn(png, &src, png_consume);
  png_read_info(png, info);

  // Reduce everything to one 8-bit channel; nonzero-ness survives.
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * channels);
  Mask m(w, h);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      bool set = false;
      for (int c = 0; c < channels; ++c) set |= row[x * channels + c] != 0;
      m(x, y) = set ? 1 : 0;
    }
  }
  return m;
}

void write_mask(const Mask& mask, const fs::path& path) {
  if (mask.empty()) throw ArgError("PNG: empty mask");
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) px[i] = mask[i] ? 255 : 0;
  write_file_atomic(path, encode_png(mask.width(), mask.height(), 1, px));
}

void write_png_rgb(const ColorImage& image, const fs::path& path) {
  write_file_atomic(path, encode_png(image.width, image.height, 3, image.rgb));
}

ColorImage flow_to_color(const FlowField& field) {
  // Hue from direction, saturation from magnitude relative to the field's
  // maximum, full value.
  const std::size_t n = field.u.size();
  double max_mag = 0;
  for (std::size_t i = 0; i < n; ++i) {
    max_mag = std::max(max_mag, std::hypot(double(field.u[i]), double(field.v[i])));
  }
  ColorImage img{field.width(), field.height(), std::vector<std::uint8_t>(n * 3, 255)};
  if (max_mag == 0) return img;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = field.u[i];
    const double v = field.v[i];
    const double sat = std::hypot(u, v) / max_mag;
    double hue = std::atan2(-v, -u) / std::numbers::pi;  // (-1, 1]
    hue = (hue + 1.0) * 3.0;                             // [0, 6)
    if (hue >= 6.0) hue -= 6.0;
    const int sector = static_cast<int>(hue);
    const double f = hue - sector;
    // Fully saturated RGB on the hue circle.
    std::array<double, 3> rgb{};
    switch (sector) {
      case 0: rgb = {1, f, 0}; break;
      case 1: rgb = {1 - f, 1, 0}; break;
      case 2: rgb = {0, 1, f}; break;
      case 3: rgb = {0, 1 - f, 1}; break;
      case 4: rgb = {f, 0, 1}; break;
      default: rgb = {1, 0, 1 - f}; break;
    }
    for (int c = 0; c < 3; ++c) {
      const double value = 1.0 - sat * (1.0 - rgb[c]);
      img.rgb[3 * i + c] = static_cast<std::uint8_t>(std::lround(255.0 * value));
    }
  }
  return img;
}

std::vector<fs::path> list_frames(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
  }
  // Numeric-aware: compare digit runs by value, everything else bytewise.
  auto key_less = [](const std::string& a, const std::string& b) {
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
      if (std::isdigit(static_cast<unsigned char>(a[i])) &&
          std::isdigit(static_cast<unsigned char>(b[j]))) {
        std::size_t i2 = i, j2 = j;
        while (i2 < a.size() && std::isdigit(static_cast<unsigned char>(a[i2]))) ++i2;
        while (j2 < b.size() && std::isdigit(static_cast<unsigned char>(b[j2]))) ++j2;
        std::string da = a.substr(i, i2 - i), db = b.substr(j, j2 - j);
        da.erase(0, std::min(da.find_first_not_of('0'), da.size()));
        db.erase(0, std::min(db.find_first_not_of('0'), db.size()));
        if (da.size() != db.size()) return da.size() < db.size();
        if (da != db) return da < db;
        i = i2;
        j = j2;
      } else {
        if (a[i] != b[j]) return a[i] < b[j];
        ++i;
        ++j;
      }
    }
    if ((a.size() - i) != (b.size() - j)) return (a.size() - i) < (b.size() - j);
    return a < b;
  };
  std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
    return key_less(a.filename().string(), b.filename().string());
  });
  return files;
}

}  // namespace epitraj
