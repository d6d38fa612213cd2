#include "mvadv/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace mvadv {

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.extent(2) != 3 && image.extent(2) != 1)) {
    throw std::invalid_argument("write_ppm: expected an H x W x 3 or H x W x 1 image");
  }
  const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::string row(w * 3, '\0');
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < 3; ++k) {
        const double v = image[(y * w + x) * c + (c == 1 ? 0 : k)];
        const auto level = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        row[x * 3 + k] = static_cast<char>(level);
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw std::runtime_error("read_ppm: only 8-bit P6 is supported");
  in.get();
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error("read_ppm: truncated pixel data");
  std::vector<double> data(bytes.size());
  std::transform(bytes.begin(), bytes.end(), data.begin(), [](unsigned char b) { return b / 255.0; });
  return Tensor({h, w, 3}, std::move(data));
}

Tensor hconcat(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("hconcat: no images");
  const Shape& s = images.front().shape();
  if (s.size() != 3) throw std::invalid_argument("hconcat: expected H x W x C images");
  for (const auto& im : images) {
    if (im.shape() != s) throw std::invalid_argument("hconcat: image shapes differ");
  }
  const std::size_t h = s[0], w = s[1], c = s[2], n = images.size();
  std::vector<double> out(h * w * c * n);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < n; ++i) {
      auto src = images[i].values().subspan(y * w * c, w * c);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>((y * n + i) * w * c));
    }
  }
  return Tensor({h, w * n, c}, std::move(out));
}

Tensor visualize_noise(const Tensor& noise, double gain) {
  std::vector<double> out(noise.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(0.5 + gain * noise[i], 0.0, 1.0);
  return Tensor(noise.shape(), std::move(out));
}

}  // namespace mvadv
