#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "maanet/common.hpp"

namespace maanet {

// Grayscale raster, row-major, values in [0,1].
struct ImageF {
  int h = 0, w = 0;
  std::vector<float> v;

  ImageF() = default;
  ImageF(int h_, int w_, float fill = 0.f) : h(h_), w(w_), v(size_t(h_) * size_t(w_), fill) {}
  float& at(int y, int x) { return v[size_t(y) * w + x]; }
  float at(int y, int x) const { return v[size_t(y) * w + x]; }
};

// 8-bit grayscale raster (PGM payload, also the binary mask carrier).
struct ImageU8 {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  ImageU8() = default;
  ImageU8(int h_, int w_, std::uint8_t fill = 0) : h(h_), w(w_), v(size_t(h_) * size_t(w_), fill) {}
  std::uint8_t& at(int y, int x) { return v[size_t(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[size_t(y) * w + x]; }
};

// [0,1] -> 0..255, round half up.
ImageU8 quantize(const ImageF& img);
ImageF to_float(const ImageU8& img);

// Binary masks live as 0/1 in memory and 0/255 on disk.
ImageF mask_to_float(const ImageU8& mask);     // nonzero -> 1.0
ImageU8 mask_to_bytes(const ImageU8& mask);    // nonzero -> 255
ImageU8 bytes_to_mask(const ImageU8& bytes);   // >= 128 -> 1

// Binary PGM (P5), maxval 255.
void write_pgm(const std::filesystem::path& path, const ImageU8& img);
ImageU8 read_pgm(const std::filesystem::path& path);

// Zero-padding split evenly; for odd differences the extra row/column goes
// on the bottom/right.
ImageF pad_to_square(const ImageF& img);
ImageU8 pad_to_square(const ImageU8& img);

// Half-pixel-centre bilinear; output values stay within [min,max] of input.
ImageF resize_bilinear(const ImageF& img, int out_h, int out_w);
// Nearest neighbour, keeps masks binary.
ImageU8 resize_nearest(const ImageU8& img, int out_h, int out_w);

// Block mean over an integer factor; conserves mass, output soft in [0,1].
ImageF downsample_area(const ImageF& img, int factor);

ImageF hflip(const ImageF& img);
ImageU8 hflip(const ImageU8& img);

ImageF crop(const ImageF& img, int y0, int x0, int ch, int cw);
ImageU8 crop(const ImageU8& img, int y0, int x0, int ch, int cw);

}  // namespace maanet
