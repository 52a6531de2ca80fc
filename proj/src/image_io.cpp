#include "pinlab/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pinlab {

namespace {

unsigned char to_byte(double v01) {
  return static_cast<unsigned char>(std::lround(std::clamp(v01, 0.0, 1.0) * 255.0));
}

}  // namespace

std::string encode_ppm(const Tensor<float>& rgb) {
  if (rgb.rank() != 3 || rgb.channels() != 3)
    throw DimensionError("encode_ppm expects [3,H,W], got " + shape_string(rgb.shape()));
  const Index h = rgb.height(), w = rgb.width();
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        out.push_back(static_cast<char>(to_byte((double(rgb(c, y, x)) + 1.0) / 2.0)));
  return out;
}

std::string encode_pgm(const std::vector<unsigned char>& pixels, Index h, Index w) {
  if (static_cast<Index>(pixels.size()) != h * w) throw DimensionError("encode_pgm: size mismatch");
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

TracePanel trace_panel(const Tensor<float>& act) {
  if (act.rank() != 3) throw DimensionError("trace_panel expects [C,H,W]");
  const Index c = act.channels(), h = act.height(), w = act.width();
  const Index cols = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(c))));
  const Index rows = (c + cols - 1) / cols;
  TracePanel p;
  p.width = cols * (w + 1) - 1;
  p.height = rows * (h + 1) - 1;
  p.pixels.assign(static_cast<std::size_t>(p.width * p.height), 0);
  for (Index k = 0; k < c; ++k) {
    const auto ch = act.array().segment(k * h * w, h * w);
    const double lo = ch.minCoeff(), hi = ch.maxCoeff();
    p.ranges.push_back({lo, hi});
    const Index oy = (k / cols) * (h + 1), ox = (k % cols) * (w + 1);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double v = hi > lo ? (double(act(k, y, x)) - lo) / (hi - lo) : 0.0;
        p.pixels[static_cast<std::size_t>((oy + y) * p.width + ox + x)] = to_byte(v);
      }
  }
  return p;
}

std::string panel_ranges_csv(const TracePanel& p) {
  std::ostringstream os;
  os.precision(9);
  os << "channel,min,max\n";
  for (std::size_t k = 0; k < p.ranges.size(); ++k)
    os << k << ',' << p.ranges[k].min << ',' << p.ranges[k].max << '\n';
  return os.str();
}

std::vector<unsigned char> region_overlay(const std::vector<double>& mag, const ArtifactReport& rep,
                                          Index scale) {
  const Index h = rep.height, w = rep.width;
  if (static_cast<Index>(mag.size()) != h * w || scale < 1)
    throw DimensionError("region_overlay: map does not match report");
  const double hi = mag.empty() ? 0.0 : *std::max_element(mag.begin(), mag.end());
  std::vector<unsigned char> base(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i)
    base[i] = static_cast<unsigned char>(hi > 0.0 ? std::lround(mag[i] / hi * 191.0) : 0);
  for (const auto& r : rep.regions)
    for (Index p : r.pixels) base[static_cast<std::size_t>(p)] = 255;
  std::vector<unsigned char> out(static_cast<std::size_t>(h * w * scale * scale));
  for (Index y = 0; y < h * scale; ++y)
    for (Index x = 0; x < w * scale; ++x)
      out[static_cast<std::size_t>(y * w * scale + x)] = base[static_cast<std::size_t>((y / scale) * w + x / scale)];
  return out;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace pinlab
