#pragma once

// 8-bit image files: binary PGM/PPM and PNG.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "sthq/tensor.hpp"

namespace sthq {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit pixels, 1 (gray) or 3 (RGB) channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Image&) const = default;
};

/// Format chosen from the extension: .pgm, .ppm or .png.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

Image to_gray(const Image& image);

/// Gray image -> [1, 1, H, W] tensor with values in [0, 1].
Tensor image_to_tensor(const Image& image);
/// [1, 1, H, W] (or [H, W]) tensor -> gray image, clamped and rounded.
Image tensor_to_image(const Tensor& tensor);

/// Sorted list of .pgm/.ppm/.png files in a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Center crop of a gray image to size x size.
Image center_crop(const Image& image, std::size_t size);

}  // namespace sthq
