#include "cmwm/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

namespace cmwm {

std::vector<float> obs_to_float(const Observation& obs) {
  std::vector<float> img(obs.pixels.size());
  for (size_t i = 0; i < img.size(); ++i) img[i] = float(obs.pixels[i]) / 255.f;
  return img;
}

Observation float_to_obs(const std::vector<float>& img) {
  Observation obs;
  if (img.size() != obs.pixels.size()) throw InvalidArgument("float_to_obs: size mismatch");
  for (size_t i = 0; i < img.size(); ++i) {
    float v = std::clamp(img[i], 0.f, 1.f);
    obs.pixels[i] = uint8_t(std::lround(v * 255.f));
  }
  return obs;
}

std::vector<float> gaussian_blur(const std::vector<float>& img, int h, int w, int c,
                                 double sigma) {
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(size_t(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
    kernel[size_t(i + radius)] = float(v);
    sum += v;
  }
  for (auto& v : kernel) v = float(double(v) / sum);

  auto at = [&](const std::vector<float>& buf, int r, int col, int ch) {
    r = std::clamp(r, 0, h - 1);
    col = std::clamp(col, 0, w - 1);
    return buf[(size_t(r) * w + size_t(col)) * c + size_t(ch)];
  };
  std::vector<float> tmp(img.size()), out(img.size());
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k)
          acc += double(kernel[size_t(k + radius)]) * at(img, r, col + k, ch);
        tmp[(size_t(r) * w + size_t(col)) * c + size_t(ch)] = float(acc);
      }
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k)
          acc += double(kernel[size_t(k + radius)]) * at(tmp, r + k, col, ch);
        out[(size_t(r) * w + size_t(col)) * c + size_t(ch)] = float(acc);
      }
  return out;
}

std::vector<float> bilinear_upsample_grid(const std::vector<float>& grid, int gh, int gw,
                                          int stride, int out_h, int out_w) {
  std::vector<float> out(size_t(out_h) * out_w);
  double off = (stride - 1) / 2.0;
  for (int r = 0; r < out_h; ++r)
    for (int col = 0; col < out_w; ++col) {
      double gy = (double(r) - off) / stride;
      double gx = (double(col) - off) / stride;
      int y0 = int(std::floor(gy)), x0 = int(std::floor(gx));
      double ty = gy - y0, tx = gx - x0;
      auto sample = [&](int yy, int xx) {
        yy = std::clamp(yy, 0, gh - 1);
        xx = std::clamp(xx, 0, gw - 1);
        return double(grid[size_t(yy) * gw + size_t(xx)]);
      };
      double v0 = sample(y0, x0) * (1 - tx) + sample(y0, x0 + 1) * tx;
      double v1 = sample(y0 + 1, x0) * (1 - tx) + sample(y0 + 1, x0 + 1) * tx;
      out[size_t(r) * out_w + size_t(col)] = float(v0 * (1 - ty) + v1 * ty);
    }
  return out;
}

namespace {

void put_be32(std::vector<uint8_t>& buf, uint32_t v) {
  buf.push_back(uint8_t(v >> 24));
  buf.push_back(uint8_t(v >> 16));
  buf.push_back(uint8_t(v >> 8));
  buf.push_back(uint8_t(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_be32(out, uint32_t(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = uint32_t(crc32(0, out.data() + start, uInt(out.size() - start)));
  put_be32(out, crc);
}

}  // namespace

void write_png(const std::filesystem::path& path, const uint8_t* rgb, int h, int w) {
  std::vector<uint8_t> raw;
  raw.reserve(size_t(h) * (size_t(w) * 3 + 1));
  for (int r = 0; r < h; ++r) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), rgb + size_t(r) * w * 3, rgb + (size_t(r) + 1) * w * 3);
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw FormatError("write_png: compression failed");
  comp.resize(comp_len);

  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_be32(ihdr, uint32_t(w));
  put_be32(ihdr, uint32_t(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", {});
  write_file(path, out.data(), out.size());
}

}  // namespace cmwm
