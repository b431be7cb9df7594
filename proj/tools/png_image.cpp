#include "png_image.hpp"

#include <png.h>

#include <cstdio>
#include <stdexcept>

namespace midline::tools {

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw std::runtime_error("write_png: cannot open " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: encoding failed for " + path.string());
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.cols),
               static_cast<png_uint_32>(image.rows), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.rows; ++y)
    png_write_row(png, const_cast<png_bytep>(image.data.data() +
                                             static_cast<size_t>(y) * image.cols * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace midline::tools
