#pragma once

#include <filesystem>
#include <vector>

#include "cmwm/env.hpp"

namespace cmwm {

/// Planar float image helpers used by the saliency pipeline. Buffers are
/// HxWxC interleaved float in [0,1].

std::vector<float> obs_to_float(const Observation& obs);
Observation float_to_obs(const std::vector<float>& img);

/// Separable Gaussian blur (per channel), truncated at 3 sigma.
std::vector<float> gaussian_blur(const std::vector<float>& img, int h, int w, int c,
                                 double sigma);

/// Bilinear upsample of a coarse grid whose samples sit at
/// (gy*stride + (stride-1)/2, gx*stride + (stride-1)/2) in pixel coords.
std::vector<float> bilinear_upsample_grid(const std::vector<float>& grid, int gh, int gw,
                                          int stride, int out_h, int out_w);

/// Minimal RGB8 PNG writer (zlib-compressed, filter 0).
void write_png(const std::filesystem::path& path, const uint8_t* rgb, int h, int w);

}  // namespace cmwm
