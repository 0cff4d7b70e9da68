#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "clearmap/error.hpp"

namespace clearmap {

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const noexcept { return channels * height * width; }
  std::size_t plane() const noexcept { return height * width; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

// Dense (channels, height, width) array of doubles. Channels outermost,
// row-major inside each channel.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.size(), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ArgumentError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return data_.size(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> channel(std::size_t c) {
    return std::span<double>(data_).subspan(c * shape_.plane(), shape_.plane());
  }
  std::span<const double> channel(std::size_t c) const {
    return std::span<const double>(data_).subspan(c * shape_.plane(), shape_.plane());
  }

  const std::vector<double>& values() const noexcept { return data_; }

  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Convolution parameters for one layer: weights laid out as
// [out_channel][in_channel][kh][kw], plus one bias per output channel.
struct KernelBank {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  KernelBank() = default;
  KernelBank(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw)
      : out_channels(out),
        in_channels(in),
        kernel_h(kh),
        kernel_w(kw),
        weights(out * in * kh * kw, 0.0),
        bias(out, 0.0) {}

  std::size_t weight_count() const noexcept {
    return out_channels * in_channels * kernel_h * kernel_w;
  }
  // Length of one output channel's filter.
  std::size_t filter_size() const noexcept { return in_channels * kernel_h * kernel_w; }

  double& weight(std::size_t k, std::size_t c, std::size_t y, std::size_t x) {
    return weights[((k * in_channels + c) * kernel_h + y) * kernel_w + x];
  }
  double weight(std::size_t k, std::size_t c, std::size_t y, std::size_t x) const {
    return weights[((k * in_channels + c) * kernel_h + y) * kernel_w + x];
  }

  bool consistent() const noexcept {
    return weights.size() == weight_count() && bias.size() == out_channels;
  }

  bool same_shape(const KernelBank& o) const noexcept {
    return out_channels == o.out_channels && in_channels == o.in_channels &&
           kernel_h == o.kernel_h && kernel_w == o.kernel_w;
  }

  friend bool operator==(const KernelBank&, const KernelBank&) = default;
};

// Argmax record of a max-pool: for each pooled cell, the flat offset
// (row * window + col) inside its pooling window.
struct SwitchMap {
  Shape pooled_shape;
  Shape input_shape;
  std::size_t window = 0;
  std::size_t stride = 0;
  std::vector<std::size_t> offsets;

  friend bool operator==(const SwitchMap&, const SwitchMap&) = default;
};

}  // namespace clearmap
