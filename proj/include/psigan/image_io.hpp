#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace psigan {

// Binary PGM (P5). 16-bit samples are big-endian per the PNM spec.
// `values` is an HxW integer tensor in [0, maxval].
void write_pgm(const std::filesystem::path& path, const torch::Tensor& values, int maxval);

// Returns HxW kInt32; maxval_out receives the file's declared max sample value.
torch::Tensor read_pgm(const std::filesystem::path& path, int* maxval_out = nullptr);

// 8-bit RGB PNG, rgb is h*w*3 bytes row-major.
void write_png_rgb8(const std::filesystem::path& path, int h, int w,
                    const std::vector<unsigned char>& rgb);

}  // namespace psigan
