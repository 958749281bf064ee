#include <png.h>

#include <cstring>

#include "bioanon/error.hpp"
#include "bioanon/image.hpp"

namespace bioanon {

Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());

  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&info, path.c_str()))
    fail(ErrorKind::ParseError, path.string() + ": " + info.message);

  info.format = PNG_FORMAT_RGB;
  Image image(static_cast<int>(info.width), static_cast<int>(info.height));
  if (!png_image_finish_read(&info, nullptr, image.pixels.data(), 0, nullptr)) {
    std::string message = info.message;
    png_image_free(&info);
    fail(ErrorKind::ParseError, path.string() + ": " + message);
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(image.width);
  info.height = static_cast<png_uint_32>(image.height);
  info.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&info, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    fail(ErrorKind::IoError, "cannot write " + path.string() + ": " + info.message);
}

}  // namespace bioanon
