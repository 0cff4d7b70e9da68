#pragma once

// Strong-feature occlusion experiment: threshold the true-class attentive
// response, then classify the image with only those pixels kept and with
// those pixels removed.

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "clearmap/backproject.hpp"
#include "clearmap/clearviz.hpp"
#include "clearmap/error.hpp"
#include "clearmap/io.hpp"
#include "clearmap/net.hpp"
#include "clearmap/parallel.hpp"

namespace clearmap {

enum class OcclusionMode { KeepStrongOnly, RemoveStrong };

struct FillRule {
  enum class Kind { BackgroundZero, GrayPatch };
  Kind kind = Kind::BackgroundZero;
  std::uint8_t level = 128;

  static FillRule zero() { return {}; }
  static FillRule gray(std::uint8_t level = 128) { return {Kind::GrayPatch, level}; }

  double value() const { return kind == Kind::BackgroundZero ? 0.0 : static_cast<double>(level) / 255.0; }
};

struct OcclusionConfig {
  double threshold_frac = 0.2;
  FillRule fill;
  OcclusionMode mode = OcclusionMode::KeepStrongOnly;
  BackprojectMode response_mode = BackprojectMode::Rectified;

  void check() const {
    if (!(threshold_frac > 0.0 && threshold_frac < 1.0)) {
      throw ArgumentError("threshold fraction must lie in (0, 1)");
    }
  }
};

struct OcclusionReport {
  double accuracy_full = 0.0;
  double accuracy_strong_only = 0.0;
  double accuracy_without_strong = 0.0;
  std::size_t n_images = 0;
  double mean_mask_fraction = 0.0;  // average share of pixels marked strong
};

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 1 = strong

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

// Pixels whose positive response reaches threshold_frac of the map's largest
// positive response. Empty when nothing is positive.
inline Mask strong_feature_mask(const Tensor& response, double threshold_frac) {
  if (!(threshold_frac > 0.0 && threshold_frac < 1.0)) {
    throw ArgumentError("threshold fraction must lie in (0, 1)");
  }
  const Tensor plane = reduce_channels(response);
  Mask m{plane.height(), plane.width(), std::vector<std::uint8_t>(plane.size(), 0)};
  double top = 0.0;
  for (double v : plane.data()) top = std::max(top, v);
  if (top <= 0.0) return m;
  const double cut = threshold_frac * top;
  for (std::size_t i = 0; i < plane.size(); ++i) m.bits[i] = std::max(plane[i], 0.0) >= cut;
  return m;
}

inline Mask strong_feature_mask(const ResponseStack& stack, std::size_t true_class, double threshold_frac) {
  if (true_class >= stack.num_classes()) {
    throw ArgumentError("true class " + std::to_string(true_class) + " out of range");
  }
  return strong_feature_mask(stack[true_class], threshold_frac);
}

inline Tensor apply_occlusion(const Tensor& image, const Mask& mask, const OcclusionConfig& config) {
  if (mask.height != image.height() || mask.width != image.width() ||
      mask.bits.size() != mask.height * mask.width) {
    throw ArgumentError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                        " does not match image " + std::to_string(image.height()) + "x" +
                        std::to_string(image.width()));
  }
  const bool replace_strong = config.mode == OcclusionMode::RemoveStrong;
  const double fill = config.fill.value();
  Tensor out = image;
  const std::size_t plane = mask.bits.size();
  for (std::size_t p = 0; p < plane; ++p) {
    if ((mask.bits[p] != 0) != replace_strong) continue;
    for (std::size_t c = 0; c < image.channels(); ++c) out[c * plane + p] = fill;
  }
  return out;
}

inline OcclusionReport run_occlusion_experiment(const Network& net, const Dataset& data,
                                                const OcclusionConfig& config) {
  config.check();
  if (data.empty()) throw ArgumentError("occlusion dataset is empty");
  if (data.labels.size() != data.images.size()) throw ArgumentError("dataset images and labels differ in length");

  struct Outcome {
    std::uint8_t full = 0, strong_only = 0, without = 0;
    double mask_fraction = 0.0;
  };
  std::vector<Outcome> outcomes(data.size());
  OcclusionConfig keep = config;
  keep.mode = OcclusionMode::KeepStrongOnly;
  OcclusionConfig remove = config;
  remove.mode = OcclusionMode::RemoveStrong;

  parallel_for(data.size(), [&](std::size_t i) {
    const Tensor& image = data.images[i];
    const std::size_t label = data.labels[i];
    if (label >= net.num_classes()) throw ArgumentError("label " + std::to_string(label) + " out of range");
    const ForwardTrace trace = forward(net, image);
    // Only the positive-kernel map is needed for the mask.
    const Tensor response = attentive_response(net, trace, label, config.response_mode);
    const Mask mask = strong_feature_mask(response, config.threshold_frac);
    Outcome& o = outcomes[i];
    o.full = argmax_prediction(trace.probabilities).label == label;
    o.strong_only = predict(net, apply_occlusion(image, mask, keep)).label == label;
    o.without = predict(net, apply_occlusion(image, mask, remove)).label == label;
    o.mask_fraction = static_cast<double>(mask.count()) / static_cast<double>(mask.bits.size());
  });

  OcclusionReport r;
  r.n_images = data.size();
  std::size_t full = 0, strong = 0, without = 0;
  double frac = 0.0;
  for (const auto& o : outcomes) {
    full += o.full;
    strong += o.strong_only;
    without += o.without;
    frac += o.mask_fraction;
  }
  const double n = static_cast<double>(data.size());
  r.accuracy_full = static_cast<double>(full) / n;
  r.accuracy_strong_only = static_cast<double>(strong) / n;
  r.accuracy_without_strong = static_cast<double>(without) / n;
  r.mean_mask_fraction = frac / n;
  return r;
}

// Three-row accuracy table followed by key=value lines.
inline std::string format_report(const OcclusionReport& r) {
  char buf[256];
  std::ostringstream os;
  os << "Accuracy(%)                 \n";
  std::snprintf(buf, sizeof buf, "Full image                  %6.2f\n", 100.0 * r.accuracy_full);
  os << buf;
  std::snprintf(buf, sizeof buf, "with only strong features   %6.2f\n", 100.0 * r.accuracy_strong_only);
  os << buf;
  std::snprintf(buf, sizeof buf, "without strong features     %6.2f\n", 100.0 * r.accuracy_without_strong);
  os << buf;
  std::snprintf(buf, sizeof buf,
                "n_images=%zu\naccuracy_full=%.6f\naccuracy_strong_only=%.6f\naccuracy_without_strong=%.6f\n"
                "mean_mask_fraction=%.6f\n",
                r.n_images, r.accuracy_full, r.accuracy_strong_only, r.accuracy_without_strong,
                r.mean_mask_fraction);
  os << buf;
  return os.str();
}

}  // namespace clearmap
