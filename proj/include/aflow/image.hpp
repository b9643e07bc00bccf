#ifndef AFLOW_IMAGE_HPP_
#define AFLOW_IMAGE_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "aflow/tensor.hpp"

namespace aflow {

// 8-bit image, row-major, interleaved channels (1 = grayscale, 3 = RGB).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<std::size_t>((static_cast<std::int64_t>(y) * width + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<std::size_t>((static_cast<std::int64_t>(y) * width + x) * channels + c)];
  }
};

void write_png(const std::filesystem::path& path, const ImageU8& image);
ImageU8 read_png(const std::filesystem::path& path);

// (C,H,W) in [0,1] <-> 8-bit image. Values are clamped and rounded on write.
Tensor image_to_tensor(const ImageU8& image);
ImageU8 tensor_to_image(const Tensor& chw);

}  // namespace aflow

#endif  // AFLOW_IMAGE_HPP_
