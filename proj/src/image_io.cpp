#include "psigan/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace psigan {

void write_pgm(const std::filesystem::path& path, const torch::Tensor& values, int maxval) {
  TORCH_CHECK(values.dim() == 2, "write_pgm: expected HxW tensor");
  TORCH_CHECK(maxval > 0 && maxval <= 65535, "write_pgm: maxval out of range");
  auto v = values.to(torch::kInt32).contiguous();
  const int64_t h = v.size(0), w = v.size(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
  out << "P5\n" << w << " " << h << "\n" << maxval << "\n";
  auto acc = v.accessor<int32_t, 2>();
  std::string buf;
  buf.reserve(static_cast<size_t>(h * w * (maxval > 255 ? 2 : 1)));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      int32_t s = acc[y][x];
      if (s < 0 || s > maxval)
        throw std::runtime_error("write_pgm: sample out of range at (" + std::to_string(y) +
                                 "," + std::to_string(x) + ")");
      if (maxval > 255) buf.push_back(static_cast<char>((s >> 8) & 0xff));
      buf.push_back(static_cast<char>(s & 0xff));
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

namespace {
int next_pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) throw std::runtime_error("read_pgm: truncated header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}
}  // namespace

torch::Tensor read_pgm(const std::filesystem::path& path, int* maxval_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5') throw std::runtime_error("read_pgm: not a P5 file: " + path.string());
  const int w = next_pnm_token(in);
  const int h = next_pnm_token(in);
  const int maxval = next_pnm_token(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw std::runtime_error("read_pgm: bad header in " + path.string());
  const int bytes = maxval > 255 ? 2 : 1;
  std::string buf(static_cast<size_t>(w) * h * bytes, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("read_pgm: truncated pixel data in " + path.string());
  auto t = torch::empty({h, w}, torch::kInt32);
  auto acc = t.accessor<int32_t, 2>();
  size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (bytes == 2) {
        const auto hi = static_cast<unsigned char>(buf[i++]);
        const auto lo = static_cast<unsigned char>(buf[i++]);
        acc[y][x] = (hi << 8) | lo;
      } else {
        acc[y][x] = static_cast<unsigned char>(buf[i++]);
      }
    }
  }
  if (maxval_out) *maxval_out = maxval;
  return t;
}

void write_png_rgb8(const std::filesystem::path& path, int h, int w,
                    const std::vector<unsigned char>& rgb) {
  if (rgb.size() != static_cast<size_t>(h) * w * 3)
    throw std::runtime_error("write_png_rgb8: buffer size mismatch");
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw std::runtime_error("write_png_rgb8: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png_rgb8: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png_rgb8: libpng error writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<size_t>(y) * w * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace psigan
