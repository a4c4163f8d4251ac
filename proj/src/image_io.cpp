#include "sthq/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace sthq {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

void skip_space_and_comments(std::istream& in) {
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw ImageError(path.string() + ": only binary PGM (P5) and PPM (P6) are supported");
  Image img;
  img.channels = magic == "P5" ? 1 : 3;
  std::size_t maxval = 0;
  skip_space_and_comments(in);
  in >> img.width;
  skip_space_and_comments(in);
  in >> img.height;
  skip_space_and_comments(in);
  in >> maxval;
  if (!in || img.width == 0 || img.height == 0) throw ImageError(path.string() + ": bad header");
  if (maxval != 255) throw ImageError(path.string() + ": only 8-bit images (maxval 255) are supported");
  in.get();
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw ImageError(path.string() + ": truncated pixel data");
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw ImageError("write failed: " + path.string());
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ImageError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageError("libpng initialisation failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError(path.string() + ": invalid PNG");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError(path.string() + ": unsupported channel layout");
  }
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw ImageError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("PNG write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void check_image(const Image& img) {
  if (img.width == 0 || img.height == 0) throw ImageError("empty image");
  if (img.channels != 1 && img.channels != 3) throw ImageError("images must have 1 or 3 channels");
  if (img.pixels.size() != img.width * img.height * img.channels) throw ImageError("pixel buffer size mismatch");
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".pgm" || ext == ".ppm") return read_pnm(path);
  if (ext == ".png") return read_png(path);
  throw ImageError(path.string() + ": unknown image extension (expected .pgm, .ppm or .png)");
}

void write_image(const std::filesystem::path& path, const Image& image) {
  check_image(image);
  const std::string ext = lower_ext(path);
  if (ext == ".pgm" || ext == ".ppm") {
    if ((ext == ".pgm") != (image.channels == 1)) throw ImageError(path.string() + ": extension does not match channel count");
    write_pnm(path, image);
  } else if (ext == ".png") {
    write_png(path, image);
  } else {
    throw ImageError(path.string() + ": unknown image extension (expected .pgm, .ppm or .png)");
  }
}

Image to_gray(const Image& image) {
  check_image(image);
  if (image.channels == 1) return image;
  Image out{image.width, image.height, 1, std::vector<std::uint8_t>(image.width * image.height)};
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double y = 0.299 * image.pixels[3 * i] + 0.587 * image.pixels[3 * i + 1] + 0.114 * image.pixels[3 * i + 2];
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
  }
  return out;
}

Tensor image_to_tensor(const Image& image) {
  check_image(image);
  if (image.channels != 1) throw ImageError("image_to_tensor expects a gray image");
  Tensor t({1, 1, image.height, image.width});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = image.pixels[i] / 255.0;
  return t;
}

Image tensor_to_image(const Tensor& tensor) {
  std::size_t h = 0, w = 0;
  if (tensor.rank() == 4 && tensor.dim(0) == 1 && tensor.dim(1) == 1) {
    h = tensor.dim(2);
    w = tensor.dim(3);
  } else if (tensor.rank() == 2) {
    h = tensor.dim(0);
    w = tensor.dim(1);
  } else {
    throw ImageError("tensor_to_image expects [1,1,H,W] or [H,W], got " + shape_string(tensor.shape()));
  }
  Image img{w, h, 1, std::vector<std::uint8_t>(w * h)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(tensor[i] * 255.0), 0L, 255L));
  return img;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ImageError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string ext = lower_ext(entry.path());
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".png")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Image center_crop(const Image& image, std::size_t size) {
  const Image gray = to_gray(image);
  if (gray.width < size || gray.height < size)
    throw ImageError("image " + std::to_string(gray.width) + "x" + std::to_string(gray.height) + " is smaller than crop " +
                     std::to_string(size));
  const std::size_t x0 = (gray.width - size) / 2, y0 = (gray.height - size) / 2;
  Image out{size, size, 1, std::vector<std::uint8_t>(size * size)};
  for (std::size_t y = 0; y < size; ++y)
    std::copy_n(gray.pixels.begin() + static_cast<std::ptrdiff_t>((y0 + y) * gray.width + x0), size,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * size));
  return out;
}

}  // namespace sthq
