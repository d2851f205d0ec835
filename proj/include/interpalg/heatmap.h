#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "interpalg/attribution.h"

namespace interpalg {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// One pixel per grid cell: round(255 * |v| / max|v|), channels summed by
// absolute value first. An all-zero map is all black. Throws ShapeError for
// shapes without a grid.
GrayImage heatmap(const AttributionMap& map);
// Maps side by side, each scaled on its own, separated by 1-pixel white columns.
GrayImage heatmap(const AttributionResult& result);

// Binary portable graymap (P5) bytes.
std::string encode_pgm(const GrayImage& img);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

}  // namespace interpalg
