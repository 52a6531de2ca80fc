#pragma once

#include "pinlab/dissect.hpp"
#include "pinlab/tensor.hpp"

#include <string>
#include <vector>

namespace pinlab {

// [3,H,W] in [-1,1] -> binary P6, byte = round((v + 1) / 2 * 255) clamped.
std::string encode_ppm(const Tensor<float>& rgb);

// Row-major 8-bit gray -> binary P5.
std::string encode_pgm(const std::vector<unsigned char>& pixels, Index h, Index w);

struct ChannelRange {
  double min = 0.0;
  double max = 0.0;
};

struct TracePanel {
  std::vector<unsigned char> pixels;
  Index height = 0;
  Index width = 0;
  std::vector<ChannelRange> ranges;  // per channel, before rescaling
};

// Channels of a [C,H,W] activation tiled in a near-square grid (1 px gaps),
// each rescaled from its own min/max to 0..255. Constant channels map to 0.
TracePanel trace_panel(const Tensor<float>& act);
// channel,min,max
std::string panel_ranges_csv(const TracePanel& p);

// Magnitude map scaled to 0..191 with the pixels of detected regions drawn
// at 255, enlarged by an integer factor.
std::vector<unsigned char> region_overlay(const std::vector<double>& mag, const ArtifactReport& rep,
                                          Index scale);

void write_file(const std::string& path, const std::string& bytes);

}  // namespace pinlab
