#include "aflow/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "aflow/errors.hpp"

namespace aflow {
namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t read_u32_be(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const std::uint32_t crc =
      static_cast<std::uint32_t>(::crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32_be(out, crc);
}

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) {
    return a;
  }
  if (pb <= pc) {
    return b;
  }
  return c;
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ConfigError("write_png: only 1- or 3-channel images supported");
  }
  if (image.width < 1 || image.height < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw ConfigError("write_png: inconsistent image dimensions");
  }

  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.push_back(8);                                     // bit depth
  ihdr.push_back(image.channels == 1 ? 0 : 2);           // gray / RGB
  ihdr.push_back(0);                                     // compression
  ihdr.push_back(0);                                     // filter method
  ihdr.push_back(0);                                     // no interlace

  // Scanlines, each prefixed with filter type 0 (None).
  const std::size_t row_bytes = static_cast<std::size_t>(image.width) * image.channels;
  std::vector<std::uint8_t> raw((row_bytes + 1) * static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    std::uint8_t* dst = raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1);
    dst[0] = 0;
    std::memcpy(dst + 1, image.pixels.data() + static_cast<std::size_t>(y) * row_bytes, row_bytes);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("write_png: deflate failed");
  }
  idat.resize(bound);

  std::vector<std::uint8_t> file(kSignature, kSignature + 8);
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", idat);
  append_chunk(file, "IEND", {});

  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("write_png: cannot open " + path.string());
  }
  os.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
  if (!os) {
    throw IoError("write_png: write failed for " + path.string());
  }
}

ImageU8 read_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError("read_png: cannot open " + path.string());
  }
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0) {
    throw DataError("read_png: not a PNG file: " + path.string());
  }

  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  bool saw_ihdr = false;
  while (pos + 8 <= file.size()) {
    const std::uint32_t len = read_u32_be(file.data() + pos);
    if (pos + 12 + len > file.size()) {
      throw DataError("read_png: truncated chunk in " + path.string());
    }
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    const std::uint8_t* payload = file.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) {
        throw DataError("read_png: bad IHDR");
      }
      width = static_cast<int>(read_u32_be(payload));
      height = static_cast<int>(read_u32_be(payload + 4));
      const int depth = payload[8];
      const int color = payload[9];
      if (depth != 8 || (color != 0 && color != 2)) {
        throw DataError("read_png: only 8-bit grayscale or RGB supported: " + path.string());
      }
      if (payload[12] != 0) {
        throw DataError("read_png: interlaced PNG not supported");
      }
      channels = color == 0 ? 1 : 3;
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || width < 1 || height < 1) {
    throw DataError("read_png: missing image header in " + path.string());
  }

  const std::size_t row_bytes = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw((row_bytes + 1) * static_cast<std::size_t>(height));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  const int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (rc != Z_OK || raw_len != raw.size()) {
    throw DataError("read_png: inflate failed for " + path.string());
  }

  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.resize(row_bytes * static_cast<std::size_t>(height));
  const int bpp = channels;  // bytes per pixel at depth 8
  std::vector<std::uint8_t> prev(row_bytes, 0);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1);
    const std::uint8_t filter = src[0];
    ++src;
    std::uint8_t* dst = img.pixels.data() + static_cast<std::size_t>(y) * row_bytes;
    for (std::size_t i = 0; i < row_bytes; ++i) {
      const int x = src[i];
      const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
      int v = 0;
      switch (filter) {
        case 0:
          v = x;
          break;
        case 1:
          v = x + a;
          break;
        case 2:
          v = x + b;
          break;
        case 3:
          v = x + (a + b) / 2;
          break;
        case 4:
          v = x + paeth(a, b, c);
          break;
        default:
          throw DataError("read_png: unknown filter type");
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), dst, row_bytes);
  }
  return img;
}

Tensor image_to_tensor(const ImageU8& image) {
  Tensor t({image.channels, image.height, image.width});
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        t.at3(c, y, x) = image.at(y, x, c) / 255.0;
      }
    }
  }
  return t;
}

ImageU8 tensor_to_image(const Tensor& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3)) {
    throw ConfigError("tensor_to_image: need (C,H,W) with 1 or 3 channels, got " + chw.shape_str());
  }
  ImageU8 img;
  img.channels = chw.dim(0);
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  img.pixels.resize(static_cast<std::size_t>(img.channels) * img.height * img.width);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double v = std::clamp(chw.at3(c, y, x), 0.0, 1.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

}  // namespace aflow
