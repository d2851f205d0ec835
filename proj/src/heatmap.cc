#include "interpalg/heatmap.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "interpalg/error.h"
#include "interpalg/window.h"

namespace interpalg {

GrayImage heatmap(const AttributionMap& map) {
  const Grid g = grid_of(map.shape);
  if (map.values.size() != g.channels * g.rows * g.cols) {
    throw ShapeError("map has " + std::to_string(map.values.size()) + " values for shape " +
                     shape_to_string(map.shape));
  }
  std::vector<double> mag(g.rows * g.cols, 0.0);
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    for (std::size_t i = 0; i < mag.size(); ++i) {
      mag[i] += std::abs(map.values[ch * mag.size() + i]);
    }
  }
  const double peak = *std::max_element(mag.begin(), mag.end());
  GrayImage img{g.cols, g.rows, std::vector<std::uint8_t>(mag.size(), 0)};
  if (peak > 0.0) {
    for (std::size_t i = 0; i < mag.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * mag[i] / peak));
    }
  }
  return img;
}

GrayImage heatmap(const AttributionResult& result) {
  std::vector<GrayImage> parts;
  for (const AttributionMap& m : result.maps) parts.push_back(heatmap(m));
  GrayImage out;
  out.height = 0;
  for (const GrayImage& p : parts) {
    out.height = std::max(out.height, p.height);
    out.width += p.width;
  }
  out.width += parts.size() - 1;
  out.pixels.assign(out.width * out.height, 0);
  std::size_t x0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const GrayImage& p = parts[k];
    for (std::size_t r = 0; r < p.height; ++r) {
      std::copy_n(p.pixels.begin() + static_cast<std::ptrdiff_t>(r * p.width), p.width,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(r * out.width + x0));
    }
    x0 += p.width;
    if (k + 1 < parts.size()) {
      for (std::size_t r = 0; r < out.height; ++r) out.pixels[r * out.width + x0] = 255;
      ++x0;
    }
  }
  return out;
}

std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_pgm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace interpalg
