#include "maanet/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace maanet {

ImageU8 quantize(const ImageF& img) {
  ImageU8 out(img.h, img.w);
  for (size_t i = 0; i < img.v.size(); ++i) {
    const float c = std::clamp(img.v[i], 0.f, 1.f);
    out.v[i] = static_cast<std::uint8_t>(std::min(255.0, std::floor(c * 255.0 + 0.5)));
  }
  return out;
}

ImageF to_float(const ImageU8& img) {
  ImageF out(img.h, img.w);
  for (size_t i = 0; i < img.v.size(); ++i) out.v[i] = img.v[i] / 255.f;
  return out;
}

ImageF mask_to_float(const ImageU8& mask) {
  ImageF out(mask.h, mask.w);
  for (size_t i = 0; i < mask.v.size(); ++i) out.v[i] = mask.v[i] ? 1.f : 0.f;
  return out;
}

ImageU8 mask_to_bytes(const ImageU8& mask) {
  ImageU8 out(mask.h, mask.w);
  for (size_t i = 0; i < mask.v.size(); ++i) out.v[i] = mask.v[i] ? 255 : 0;
  return out;
}

ImageU8 bytes_to_mask(const ImageU8& bytes) {
  ImageU8 out(bytes.h, bytes.w);
  for (size_t i = 0; i < bytes.v.size(); ++i) out.v[i] = bytes.v[i] >= 128 ? 1 : 0;
  return out;
}

void write_pgm(const std::filesystem::path& path, const ImageU8& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_pgm: cannot open " + path.string());
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
  if (!f) throw DataError("write_pgm: write failed for " + path.string());
}

namespace {
int pgm_next_int(std::istream& in, const std::filesystem::path& path) {
  // Skips whitespace and '#' comments between header tokens.
  while (true) {
    const int c = in.peek();
    if (c == EOF) throw DataError("read_pgm: truncated header in " + path.string());
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    break;
  }
  int value = 0;
  in >> value;
  if (!in) throw DataError("read_pgm: malformed header in " + path.string());
  return value;
}
}  // namespace

ImageU8 read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_pgm: cannot open " + path.string());
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '5') throw DataError("read_pgm: not a binary PGM: " + path.string());
  const int w = pgm_next_int(f, path);
  const int h = pgm_next_int(f, path);
  const int maxval = pgm_next_int(f, path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw DataError("read_pgm: unsupported header in " + path.string());
  f.get();  // the single whitespace after maxval
  ImageU8 img(h, w);
  f.read(reinterpret_cast<char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.v.size()))
    throw DataError("read_pgm: truncated pixel data in " + path.string());
  return img;
}

namespace {
template <typename Img>
Img pad_square(const Img& img) {
  if (img.h == 0 || img.w == 0) throw ContractError("pad_to_square: empty image");
  if (img.h == img.w) return img;
  const int side = std::max(img.h, img.w);
  Img out(side, side);
  const int py = (side - img.h) / 2;  // extra pixel goes bottom/right
  const int px = (side - img.w) / 2;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) out.at(y + py, x + px) = img.at(y, x);
  return out;
}
}  // namespace

ImageF pad_to_square(const ImageF& img) { return pad_square(img); }
ImageU8 pad_to_square(const ImageU8& img) { return pad_square(img); }

ImageF resize_bilinear(const ImageF& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ContractError("resize_bilinear: bad target size");
  ImageF out(out_h, out_w);
  const double sy = static_cast<double>(img.h) / out_h;
  const double sx = static_cast<double>(img.w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - x0;
      const double top = img.at(y0, x0) * (1 - wx) + img.at(y0, x1) * wx;
      const double bot = img.at(y1, x0) * (1 - wx) + img.at(y1, x1) * wx;
      out.at(oy, ox) = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return out;
}

ImageU8 resize_nearest(const ImageU8& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ContractError("resize_nearest: bad target size");
  ImageU8 out(out_h, out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    const int iy = std::min(img.h - 1, static_cast<int>((oy + 0.5) * img.h / out_h));
    for (int ox = 0; ox < out_w; ++ox) {
      const int ix = std::min(img.w - 1, static_cast<int>((ox + 0.5) * img.w / out_w));
      out.at(oy, ox) = img.at(iy, ix);
    }
  }
  return out;
}

ImageF downsample_area(const ImageF& img, int factor) {
  if (factor <= 0 || img.h % factor != 0 || img.w % factor != 0)
    throw ContractError("downsample_area: factor must divide image dims");
  ImageF out(img.h / factor, img.w / factor);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int oy = 0; oy < out.h; ++oy)
    for (int ox = 0; ox < out.w; ++ox) {
      double acc = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) acc += img.at(oy * factor + dy, ox * factor + dx);
      out.at(oy, ox) = static_cast<float>(acc * inv);
    }
  return out;
}

namespace {
template <typename Img>
Img flip_h(const Img& img) {
  Img out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) out.at(y, x) = img.at(y, img.w - 1 - x);
  return out;
}
template <typename Img>
Img crop_impl(const Img& img, int y0, int x0, int ch, int cw) {
  if (y0 < 0 || x0 < 0 || y0 + ch > img.h || x0 + cw > img.w)
    throw ContractError("crop: window outside image");
  Img out(ch, cw);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}
}  // namespace

ImageF hflip(const ImageF& img) { return flip_h(img); }
ImageU8 hflip(const ImageU8& img) { return flip_h(img); }
ImageF crop(const ImageF& img, int y0, int x0, int ch, int cw) {
  return crop_impl(img, y0, x0, ch, cw);
}
ImageU8 crop(const ImageU8& img, int y0, int x0, int ch, int cw) {
  return crop_impl(img, y0, x0, ch, cw);
}

}  // namespace maanet
