#pragma once

// Numerical kernels over Tensor: convolution and its adjoint, max-pooling with
// switches, unpooling, ReLU, global average pooling and softmax.
//
// Convolution convention: cross-correlation (no kernel flip),
//   out[k](y, x) = bias[k] + sum_{c, i, j} in[c](y*s + i - p, x*s + j - p) * w[k, c, i, j]
// with zero padding p. conv2d_transpose is the exact adjoint of the bias-free
// part of conv2d_forward.

// Route every product through GEMM.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 1
#endif
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "clearmap/error.hpp"
#include "clearmap/tensor.hpp"

namespace clearmap {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline bool is_pointwise(const KernelBank& k, std::size_t stride, std::size_t padding) {
  return k.kernel_h == 1 && k.kernel_w == 1 && stride == 1 && padding == 0;
}

// Output columns [lo, hi) whose input column ox * stride + offset lies in [0, width).
struct Span {
  std::size_t lo, hi;
};

inline Span valid_span(std::ptrdiff_t offset, std::ptrdiff_t stride, std::ptrdiff_t width,
                       std::size_t out_w) {
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::ptrdiff_t hi = width - offset <= 0 ? 0 : (width - offset - 1) / stride + 1;
  hi = std::min(hi, static_cast<std::ptrdiff_t>(out_w));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Unfold input patches into a (C*kh*kw) x (out_h*out_w) matrix.
inline RowMatrix im2col(const Tensor& in, std::size_t kh, std::size_t kw, std::size_t stride,
                        std::size_t padding, std::size_t out_h, std::size_t out_w) {
  const std::size_t rows = in.channels() * kh * kw;
  RowMatrix cols(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_h * out_w));
  const auto H = static_cast<std::ptrdiff_t>(in.height());
  const auto W = static_cast<std::ptrdiff_t>(in.width());
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < in.channels(); ++c) {
    const double* plane = in.channel(c).data();
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j, ++row) {
        double* dst = cols.data() + row * out_h * out_w;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) - pad;
        const Span span = valid_span(dx, s, W, out_w);
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          double* d = dst + oy * out_w;
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * s + static_cast<std::ptrdiff_t>(i) - pad;
          if (y < 0 || y >= H) {
            std::fill(d, d + out_w, 0.0);
            continue;
          }
          std::fill(d, d + span.lo, 0.0);
          std::fill(d + span.hi, d + out_w, 0.0);
          const double* src = plane + y * W;
          if (s == 1) {
            std::copy(src + static_cast<std::ptrdiff_t>(span.lo) + dx, src + static_cast<std::ptrdiff_t>(span.hi) + dx,
                      d + span.lo);
          } else {
            for (std::size_t ox = span.lo; ox < span.hi; ++ox) d[ox] = src[static_cast<std::ptrdiff_t>(ox) * s + dx];
          }
        }
      }
    }
  }
  return cols;
}

// Fold a (C*kh*kw) x (out_h*out_w) matrix back onto `out`, summing overlaps.
inline void col2im(const RowMatrix& cols, std::size_t kh, std::size_t kw, std::size_t stride,
                   std::size_t padding, std::size_t out_h, std::size_t out_w, Tensor& out) {
  const auto H = static_cast<std::ptrdiff_t>(out.height());
  const auto W = static_cast<std::ptrdiff_t>(out.width());
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < out.channels(); ++c) {
    double* plane = out.channel(c).data();
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j, ++row) {
        const double* src = cols.data() + row * out_h * out_w;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) - pad;
        const Span span = valid_span(dx, s, W, out_w);
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * s + static_cast<std::ptrdiff_t>(i) - pad;
          if (y < 0 || y >= H) continue;
          double* d = plane + y * W;
          const double* r = src + oy * out_w;
          for (std::size_t ox = span.lo; ox < span.hi; ++ox) d[static_cast<std::ptrdiff_t>(ox) * s + dx] += r[ox];
        }
      }
    }
  }
}

inline ConstMatrixMap weight_matrix(const KernelBank& k) {
  return ConstMatrixMap(k.weights.data(), static_cast<Eigen::Index>(k.out_channels),
                        static_cast<Eigen::Index>(k.filter_size()));
}

inline void check_bank(const KernelBank& k) {
  if (!k.consistent()) throw ArgumentError("kernel bank storage does not match its shape");
  if (k.out_channels == 0 || k.in_channels == 0 || k.kernel_h == 0 || k.kernel_w == 0) {
    throw ArgumentError("kernel bank has a zero dimension");
  }
}

}  // namespace detail

// Output shape of conv2d_forward; throws if the kernel does not fit.
inline Shape conv_output_shape(const Shape& in, const KernelBank& k, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ArgumentError("convolution stride must be positive");
  if (in.channels != k.in_channels) {
    throw ArgumentError("convolution input has " + std::to_string(in.channels) +
                        " channels but kernels expect " + std::to_string(k.in_channels));
  }
  const std::size_t ph = in.height + 2 * padding;
  const std::size_t pw = in.width + 2 * padding;
  if (ph < k.kernel_h || pw < k.kernel_w) {
    throw ArgumentError("kernel " + std::to_string(k.kernel_h) + "x" + std::to_string(k.kernel_w) +
                        " larger than padded input " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  return {k.out_channels, (ph - k.kernel_h) / stride + 1, (pw - k.kernel_w) / stride + 1};
}

// `patches`, when given, receives the unfolded input (left empty for 1x1 kernels)
// so a later conv2d_kernel_gradient can skip the unfold.
inline Tensor conv2d_forward(const Tensor& input, const KernelBank& kernels, std::size_t stride,
                             std::size_t padding, detail::RowMatrix* patches = nullptr) {
  detail::check_bank(kernels);
  const Shape out_shape = conv_output_shape(input.shape(), kernels, stride, padding);
  Tensor out(out_shape);
  const auto K = static_cast<Eigen::Index>(out_shape.channels);
  const auto P = static_cast<Eigen::Index>(out_shape.plane());
  detail::MatrixMap result(out.data().data(), K, P);
  const auto W = detail::weight_matrix(kernels);
  if (detail::is_pointwise(kernels, stride, padding)) {
    detail::ConstMatrixMap cols(input.data().data(), static_cast<Eigen::Index>(input.channels()), P);
    result.noalias() = W * cols;
  } else {
    auto cols = detail::im2col(input, kernels.kernel_h, kernels.kernel_w, stride, padding,
                               out_shape.height, out_shape.width);
    result.noalias() = W * cols;
    if (patches) *patches = std::move(cols);
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    result.row(k).array() += kernels.bias[static_cast<std::size_t>(k)];
  }
  return out;
}

// Adjoint of the linear (bias-free) part of conv2d_forward. `out_shape` is the
// shape of the forward input; `response` must have the forward output shape.
inline Tensor conv2d_transpose(const Tensor& response, const KernelBank& kernels,
                               std::size_t stride, std::size_t padding, const Shape& out_shape) {
  detail::check_bank(kernels);
  const Shape expected = conv_output_shape(out_shape, kernels, stride, padding);
  if (response.shape() != expected) {
    throw ArgumentError("transposed convolution response is " + to_string(response.shape()) +
                        " but out_shape " + to_string(out_shape) + " implies " +
                        to_string(expected));
  }
  Tensor out(out_shape);
  const auto P = static_cast<Eigen::Index>(expected.plane());
  detail::ConstMatrixMap y(response.data().data(), static_cast<Eigen::Index>(expected.channels), P);
  const auto W = detail::weight_matrix(kernels);
  if (detail::is_pointwise(kernels, stride, padding)) {
    detail::MatrixMap result(out.data().data(), static_cast<Eigen::Index>(out_shape.channels), P);
    result.noalias() = W.transpose() * y;
  } else {
    detail::RowMatrix cols = W.transpose() * y;
    detail::col2im(cols, kernels.kernel_h, kernels.kernel_w, stride, padding, expected.height,
                   expected.width, out);
  }
  return out;
}

// Gradient of sum(grad_output * conv2d_forward(input)) with respect to the
// weights and biases of a bank shaped like `like`.
inline KernelBank conv2d_kernel_gradient(const Tensor& input, const Tensor& grad_output,
                                         const KernelBank& like, std::size_t stride,
                                         std::size_t padding, const detail::RowMatrix* patches = nullptr) {
  detail::check_bank(like);
  const Shape expected = conv_output_shape(input.shape(), like, stride, padding);
  if (grad_output.shape() != expected) {
    throw ArgumentError("gradient shape " + to_string(grad_output.shape()) +
                        " does not match convolution output " + to_string(expected));
  }
  KernelBank grad(like.out_channels, like.in_channels, like.kernel_h, like.kernel_w);
  const auto K = static_cast<Eigen::Index>(expected.channels);
  const auto P = static_cast<Eigen::Index>(expected.plane());
  detail::ConstMatrixMap dy(grad_output.data().data(), K, P);
  detail::MatrixMap dw(grad.weights.data(), K, static_cast<Eigen::Index>(like.filter_size()));
  if (detail::is_pointwise(like, stride, padding)) {
    detail::ConstMatrixMap cols(input.data().data(), static_cast<Eigen::Index>(input.channels()), P);
    dw.noalias() = dy * cols.transpose();
  } else if (patches && patches->rows() == static_cast<Eigen::Index>(like.filter_size()) && patches->cols() == P) {
    dw.noalias() = dy * patches->transpose();
  } else {
    const auto cols = detail::im2col(input, like.kernel_h, like.kernel_w, stride, padding,
                                     expected.height, expected.width);
    dw.noalias() = dy * cols.transpose();
  }
  const auto& g = grad_output.data();
  for (std::size_t k = 0; k < grad.bias.size(); ++k) {
    double s = 0.0;
    for (std::size_t p = 0; p < expected.plane(); ++p) s += g[k * expected.plane() + p];
    grad.bias[k] = s;
  }
  return grad;
}

struct PoolResult {
  Tensor output;
  SwitchMap switches;
};

// Max over each window; ties go to the first element in row-major order.
inline PoolResult maxpool_forward(const Tensor& input, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ArgumentError("pool window and stride must be positive");
  if (input.height() < window || input.width() < window) {
    throw ArgumentError("pool window " + std::to_string(window) + " exceeds spatial extent " +
                        std::to_string(input.height()) + "x" + std::to_string(input.width()));
  }
  const Shape pooled{input.channels(), (input.height() - window) / stride + 1,
                     (input.width() - window) / stride + 1};
  PoolResult r{Tensor(pooled), SwitchMap{pooled, input.shape(), window, stride, {}}};
  r.switches.offsets.resize(pooled.size());
  std::size_t idx = 0;
  for (std::size_t c = 0; c < pooled.channels; ++c) {
    for (std::size_t oy = 0; oy < pooled.height; ++oy) {
      for (std::size_t ox = 0; ox < pooled.width; ++ox, ++idx) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_off = 0;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const double v = input.at(c, oy * stride + i, ox * stride + j);
            if (v > best) {
              best = v;
              best_off = i * window + j;
            }
          }
        }
        r.output[idx] = best;
        r.switches.offsets[idx] = best_off;
      }
    }
  }
  return r;
}

// Places every pooled value at its switch location; everything else is zero.
// Values whose switches coincide (overlapping windows) are summed, which makes
// this also the exact backward pass of maxpool_forward.
inline Tensor unpool(const Tensor& pooled, const SwitchMap& switches, const Shape& out_shape) {
  if (pooled.shape() != switches.pooled_shape || switches.offsets.size() != pooled.size()) {
    throw ArgumentError("pooled tensor " + to_string(pooled.shape()) +
                        " does not match switch map " + to_string(switches.pooled_shape));
  }
  if (out_shape.channels != pooled.channels()) {
    throw ArgumentError("unpool output channels " + std::to_string(out_shape.channels) +
                        " differ from pooled channels " + std::to_string(pooled.channels()));
  }
  const std::size_t window = switches.window;
  Tensor out(out_shape);
  std::size_t idx = 0;
  for (std::size_t c = 0; c < pooled.channels(); ++c) {
    for (std::size_t oy = 0; oy < pooled.height(); ++oy) {
      for (std::size_t ox = 0; ox < pooled.width(); ++ox, ++idx) {
        const std::size_t off = switches.offsets[idx];
        const std::size_t y = oy * switches.stride + (window ? off / window : 0);
        const std::size_t x = ox * switches.stride + (window ? off % window : 0);
        if (window == 0 || off >= window * window || y >= out_shape.height || x >= out_shape.width) {
          throw ArgumentError("switch " + std::to_string(off) + " at pooled cell (" +
                              std::to_string(c) + "," + std::to_string(oy) + "," +
                              std::to_string(ox) + ") falls outside " + to_string(out_shape));
        }
        out.at(c, y, x) += pooled[idx];
      }
    }
  }
  return out;
}

inline Tensor relu(Tensor t) {
  for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
  return t;
}

inline std::vector<double> global_avg_pool(const Tensor& input) {
  if (input.height() == 0 || input.width() == 0) {
    throw ArgumentError("global average pool over an empty plane");
  }
  std::vector<double> out(input.channels());
  const double inv = 1.0 / static_cast<double>(input.shape().plane());
  for (std::size_t c = 0; c < input.channels(); ++c) {
    double sum = 0.0;
    for (double v : input.channel(c)) sum += v;
    out[c] = sum * inv;
  }
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double top = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace clearmap
