#pragma once

// CLEAR map composition and the heatmap baselines.
//
// dominant class   C(x) = argmax_c R(x | c)          (ties -> lowest class)
// dominant level   D(x) = R(x | C(x))
// rendering        H = F(C(x)), S = 1, V = max(D, 0) / max_x max(D, 0)
//
// Response maps with several input channels are first reduced to one plane by
// taking, per pixel, the largest absolute value over channels.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <cstdint>
#include <string>
#include <vector>

#include "clearmap/backproject.hpp"
#include "clearmap/error.hpp"
#include "clearmap/io.hpp"
#include "clearmap/tensor.hpp"

namespace clearmap {

using Rgb = std::array<std::uint8_t, 3>;

// Round half up to a byte; input is clamped to [0, 1].
inline std::uint8_t to_byte(double unit) {
  const double c = std::clamp(unit, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(255.0 * c + 0.5));
}

// Standard hexcone HSV -> RGB.
inline Rgb hsv_to_rgb(double h, double s, double v) {
  if (!(h >= 0.0 && h < 1.0) || !(s >= 0.0 && s <= 1.0) || !(v >= 0.0 && v <= 1.0)) {
    throw ArgumentError("hsv out of range: (" + std::to_string(h) + ", " + std::to_string(s) + ", " +
                        std::to_string(v) + ")");
  }
  const double h6 = h * 6.0;
  const int sector = std::min(5, static_cast<int>(std::floor(h6)));
  const double f = h6 - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {to_byte(r), to_byte(g), to_byte(b)};
}

// Black -> red -> yellow -> white, linear between knots at 0, 1/3, 2/3, 1.
inline Rgb hot_ramp(double t) {
  const double x = std::clamp(t, 0.0, 1.0) * 3.0;
  return {to_byte(x), to_byte(x - 1.0), to_byte(x - 2.0)};
}

// Class index -> hue.
class ColorMap {
 public:
  explicit ColorMap(std::vector<double> hues) : hues_(std::move(hues)) {
    for (std::size_t i = 0; i < hues_.size(); ++i) {
      if (!(hues_[i] >= 0.0 && hues_[i] < 1.0)) throw ArgumentError("hue outside [0, 1)");
      for (std::size_t j = 0; j < i; ++j) {
        if (hues_[i] == hues_[j]) throw ArgumentError("color map assigns one hue to two classes");
      }
    }
  }

  // F(c) = c / N.
  static ColorMap evenly_spaced(std::size_t num_classes) {
    std::vector<double> h(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) h[c] = static_cast<double>(c) / static_cast<double>(num_classes);
    return ColorMap(std::move(h));
  }

  std::size_t size() const noexcept { return hues_.size(); }
  double hue(std::size_t c) const {
    if (c >= hues_.size()) throw ArgumentError("no color for class " + std::to_string(c));
    return hues_[c];
  }

 private:
  std::vector<double> hues_;
};

struct ClassMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> classes;  // row-major

  std::size_t at(std::size_t y, std::size_t x) const { return classes[y * width + x]; }
  friend bool operator==(const ClassMap&, const ClassMap&) = default;
};

struct ClearMap {
  ClassMap dominant_class;
  Tensor dominant_response;  // 1 x H x W
  std::size_t num_classes = 0;
};

// Single-channel view of a response map.
inline Tensor reduce_channels(const Tensor& map) {
  if (map.channels() == 1) return map;
  Tensor out(Shape{1, map.height(), map.width()});
  const std::size_t plane = map.shape().plane();
  for (std::size_t p = 0; p < plane; ++p) {
    double best = 0.0;
    for (std::size_t c = 0; c < map.channels(); ++c) best = std::max(best, std::abs(map[c * plane + p]));
    out[p] = best;
  }
  return out;
}

namespace detail {

inline std::vector<Tensor> reduced_planes(const ResponseStack& stack) {
  if (stack.maps.empty()) throw ArgumentError("response stack is empty");
  std::vector<Tensor> planes;
  planes.reserve(stack.maps.size());
  for (const auto& m : stack.maps) {
    planes.push_back(reduce_channels(m));
    if (planes.back().shape() != planes.front().shape()) throw ArgumentError("response maps differ in shape");
  }
  return planes;
}

inline double max_positive(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, v);
  return m;
}

// max(t, 0) / max(max(t, 0)), or all zeros when nothing is positive.
inline std::vector<double> normalized_positive(const Tensor& t) {
  const double m = max_positive(t);
  std::vector<double> out(t.size(), 0.0);
  if (m > 0.0) {
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = std::max(t[i], 0.0) / m;
  }
  return out;
}

// Per-pixel max over every class except `skip`.
inline Tensor max_excluding(const std::vector<Tensor>& planes, std::size_t skip) {
  Tensor out(planes.front().shape(), -std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < planes.size(); ++c) {
    if (c == skip) continue;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], planes[c][i]);
  }
  return out;
}

struct ForAgainst {
  std::vector<double> support;  // normalized positive part of the true-class map
  std::vector<double> against;  // normalized positive part of the rest-of-kernels max
  std::size_t height = 0;
  std::size_t width = 0;
};

inline ForAgainst for_against(const ResponseStack& stack, std::size_t true_class) {
  if (stack.num_classes() < 2) throw ArgumentError("for/against maps need at least two classes");
  if (true_class >= stack.num_classes()) {
    throw ArgumentError("true class " + std::to_string(true_class) + " out of range");
  }
  const auto planes = reduced_planes(stack);
  ForAgainst fa;
  fa.height = planes.front().height();
  fa.width = planes.front().width();
  fa.support = normalized_positive(planes[true_class]);
  fa.against = normalized_positive(max_excluding(planes, true_class));
  return fa;
}

}  // namespace detail

inline ClassMap dominant_class_map(const ResponseStack& stack) {
  const auto planes = detail::reduced_planes(stack);
  ClassMap out{planes.front().height(), planes.front().width(), {}};
  out.classes.assign(planes.front().size(), 0);
  for (std::size_t i = 0; i < out.classes.size(); ++i) {
    double best = planes[0][i];
    for (std::size_t c = 1; c < planes.size(); ++c) {
      if (planes[c][i] > best) {
        best = planes[c][i];
        out.classes[i] = c;
      }
    }
  }
  return out;
}

inline Tensor dominant_response_map(const ResponseStack& stack, const ClassMap& class_map) {
  const auto planes = detail::reduced_planes(stack);
  if (planes.front().height() != class_map.height || planes.front().width() != class_map.width ||
      class_map.classes.size() != class_map.height * class_map.width) {
    throw ArgumentError("class map does not match the response stack");
  }
  Tensor out(Shape{1, class_map.height, class_map.width});
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = class_map.classes[i];
    if (c >= planes.size()) throw ArgumentError("class map entry " + std::to_string(c) + " out of range");
    out[i] = planes[c][i];
  }
  return out;
}

inline ClearMap make_clear_map(const ResponseStack& stack) {
  ClearMap m;
  m.dominant_class = dominant_class_map(stack);
  m.dominant_response = dominant_response_map(stack, m.dominant_class);
  m.num_classes = stack.num_classes();
  return m;
}

inline RgbImage compose_clear(const ClearMap& clear, const ColorMap& colors) {
  const auto& cm = clear.dominant_class;
  RgbImage img(cm.width, cm.height);
  const double top = detail::max_positive(clear.dominant_response);
  for (std::size_t y = 0; y < cm.height; ++y) {
    for (std::size_t x = 0; x < cm.width; ++x) {
      const std::size_t i = y * cm.width + x;
      const double v = top > 0.0 ? std::max(clear.dominant_response[i], 0.0) / top : 0.0;
      img.set(y, x, hsv_to_rgb(colors.hue(cm.classes[i]), 1.0, std::min(v, 1.0)));
    }
  }
  return img;
}

// Luma of an input tensor in [0, 1]: the single channel, ITU-R 601 weights for
// three channels, the channel mean otherwise.
inline std::vector<double> grayscale(const Tensor& base) {
  const std::size_t plane = base.shape().plane();
  std::vector<double> g(plane, 0.0);
  for (std::size_t p = 0; p < plane; ++p) {
    if (base.channels() == 1) {
      g[p] = base[p];
    } else if (base.channels() == 3) {
      g[p] = 0.299 * base[p] + 0.587 * base[plane + p] + 0.114 * base[2 * plane + p];
    } else {
      double s = 0.0;
      for (std::size_t c = 0; c < base.channels(); ++c) s += base[c * plane + p];
      g[p] = s / static_cast<double>(base.channels());
    }
  }
  return g;
}

// Renders an input tensor (values in [0, 1]) as an RGB image.
inline RgbImage render_input(const Tensor& base) {
  RgbImage img(base.width(), base.height());
  const std::size_t plane = base.shape().plane();
  const auto gray = grayscale(base);
  for (std::size_t p = 0; p < plane; ++p) {
    if (base.channels() == 3) {
      img.pixels[3 * p] = to_byte(base[p]);
      img.pixels[3 * p + 1] = to_byte(base[plane + p]);
      img.pixels[3 * p + 2] = to_byte(base[2 * plane + p]);
    } else {
      const auto b = to_byte(gray[p]);
      img.pixels[3 * p] = img.pixels[3 * p + 1] = img.pixels[3 * p + 2] = b;
    }
  }
  return img;
}

// out = (1 - alpha) * grayscale(base) + alpha * map, per channel.
inline RgbImage overlay(const Tensor& base, const RgbImage& map, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("overlay alpha must lie in [0, 1]");
  if (base.width() != map.width || base.height() != map.height) {
    throw ArgumentError("overlay base " + std::to_string(base.width()) + "x" + std::to_string(base.height()) +
                        " does not match map " + std::to_string(map.width) + "x" + std::to_string(map.height));
  }
  const auto gray = grayscale(base);
  RgbImage out(map.width, map.height);
  for (std::size_t p = 0; p < gray.size(); ++p) {
    const double g = 255.0 * std::clamp(gray[p], 0.0, 1.0);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = (1.0 - alpha) * g + alpha * map.pixels[3 * p + ch];
      out.pixels[3 * p + ch] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
    }
  }
  return out;
}

// Hot ramp of the true-class support where it dominates, green intensity of the
// strongest competing class elsewhere. Ties go to the support side.
inline RgbImage binary_heatmap(const ResponseStack& stack, std::size_t true_class) {
  const auto fa = detail::for_against(stack, true_class);
  RgbImage img(fa.width, fa.height);
  for (std::size_t i = 0; i < fa.support.size(); ++i) {
    const Rgb px = fa.support[i] >= fa.against[i] ? hot_ramp(fa.support[i])
                                                  : Rgb{0, to_byte(fa.against[i]), 0};
    std::copy(px.begin(), px.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return img;
}

inline RgbImage binary_heatmap(const ResponseStack& stack, std::size_t true_class, const Tensor& base,
                               double alpha) {
  return overlay(base, binary_heatmap(stack, true_class), alpha);
}

inline constexpr Rgb kSupportColor{255, 0, 0};
inline constexpr Rgb kAgainstColor{0, 0, 255};
inline constexpr Rgb kBackgroundColor{0, 0, 0};
inline constexpr double kDefaultBinaryThreshold = 0.2;

// Constant red where the normalized support beats both the competing response
// and the threshold, constant blue for the reverse, background elsewhere.
inline RgbImage binary_map(const ResponseStack& stack, std::size_t true_class,
                           double threshold = kDefaultBinaryThreshold) {
  const auto fa = detail::for_against(stack, true_class);
  RgbImage img(fa.width, fa.height);
  for (std::size_t i = 0; i < fa.support.size(); ++i) {
    const double s = fa.support[i];
    const double a = fa.against[i];
    Rgb px = kBackgroundColor;
    if (s > a && s > threshold) {
      px = kSupportColor;
    } else if (a > s && a > threshold) {
      px = kAgainstColor;
    }
    std::copy(px.begin(), px.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return img;
}

namespace detail {

// 3x5 bitmaps, one row per 3-bit group, most significant bit on the left.
inline constexpr std::array<std::array<std::uint8_t, 5>, 10> kDigitFont{{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
}};

inline void draw_number(RgbImage& img, std::size_t left, std::size_t top, std::size_t box_w,
                        std::size_t value, Rgb ink) {
  const std::string digits = std::to_string(value);
  const std::size_t scale = digits.size() == 1 ? 2 : 1;
  const std::size_t text_w = digits.size() * 4 * scale - scale;
  std::size_t x0 = left + (box_w > text_w ? (box_w - text_w) / 2 : 0);
  for (char ch : digits) {
    const auto& glyph = kDigitFont[static_cast<std::size_t>(ch - '0')];
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        if (!((glyph[r] >> (2 - c)) & 1)) continue;
        for (std::size_t dy = 0; dy < scale; ++dy) {
          for (std::size_t dx = 0; dx < scale; ++dx) {
            const std::size_t y = top + r * scale + dy;
            const std::size_t x = x0 + c * scale + dx;
            if (y < img.height && x < img.width) img.set(y, x, ink);
          }
        }
      }
    }
    x0 += 4 * scale;
  }
}

}  // namespace detail

// One full-brightness swatch per class with its index printed underneath.
inline RgbImage legend_strip(const ColorMap& colors, std::size_t swatch = 16) {
  constexpr std::size_t kLabelRows = 14;
  RgbImage img(colors.size() * swatch, swatch + kLabelRows);
  std::fill(img.pixels.begin(), img.pixels.end(), std::uint8_t{255});
  for (std::size_t c = 0; c < colors.size(); ++c) {
    const Rgb col = hsv_to_rgb(colors.hue(c), 1.0, 1.0);
    for (std::size_t y = 0; y < swatch; ++y) {
      for (std::size_t x = 0; x < swatch; ++x) img.set(y, c * swatch + x, col);
    }
    detail::draw_number(img, c * swatch, swatch + 2, swatch, c, Rgb{0, 0, 0});
  }
  return img;
}

}  // namespace clearmap
