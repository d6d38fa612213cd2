#pragma once

#include <filesystem>
#include <vector>

#include "mvadv/tensor.hpp"

namespace mvadv {

/// Writes an H x W x 3 (or H x W x 1) tensor in [0, 1] as binary 8-bit PPM.
/// Values are clamped and rounded to the nearest level.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

/// Places equally sized images side by side.
Tensor hconcat(const std::vector<Tensor>& images);

/// Maps noise to a viewable image: 0.5 + gain * noise, clamped to [0, 1].
Tensor visualize_noise(const Tensor& noise, double gain);

}  // namespace mvadv
