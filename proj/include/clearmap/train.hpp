#pragma once

// Mini-batch SGD with momentum and full backpropagation for straight-line
// networks. Loss is mean softmax cross-entropy.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "clearmap/error.hpp"
#include "clearmap/io.hpp"
#include "clearmap/kernels.hpp"
#include "clearmap/net.hpp"
#include "clearmap/parallel.hpp"

namespace clearmap {

enum class WeightInit { HeNormal };

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  WeightInit weight_init = WeightInit::HeNormal;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over the epoch's samples, before each update
  double accuracy = 0.0;  // training accuracy of the same forward passes
};

// Weights ~ N(0, 2 / fan_in), biases zero.
inline void init_he_normal(Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& k : net.params()) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(k.filter_size())));
    for (double& w : k.weights) w = dist(rng);
    std::fill(k.bias.begin(), k.bias.end(), 0.0);
  }
}

// -log softmax(logits)[label], computed through log-sum-exp.
inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  double top = logits[0];
  for (double v : logits) top = std::max(top, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - top);
  return top + std::log(sum) - logits[label];
}

struct LossAndGradients {
  double loss = 0.0;
  std::vector<KernelBank> grads;
};

namespace detail {

inline std::vector<KernelBank> zero_like(const std::vector<KernelBank>& params) {
  std::vector<KernelBank> out;
  out.reserve(params.size());
  for (const auto& k : params) out.emplace_back(k.out_channels, k.in_channels, k.kernel_h, k.kernel_w);
  return out;
}

inline void accumulate(KernelBank& dst, const KernelBank& src, double scale = 1.0) {
  for (std::size_t i = 0; i < dst.weights.size(); ++i) dst.weights[i] += scale * src.weights[i];
  for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += scale * src.bias[i];
}

inline void check_label(const Network& net, std::size_t label) {
  if (label >= net.num_classes()) {
    throw ArgumentError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(net.num_classes()) + " classes");
  }
}

// Adds scale * d(loss)/d(params) for one traced image into `grads`.
inline void backward(const Network& net, const ForwardTrace& trace, std::size_t label, double scale,
                     std::vector<KernelBank>& grads, const std::vector<RowMatrix>* patches = nullptr) {
  const auto& layers = net.spec().layers;
  const std::size_t last = net.spec().last_conv_index();

  std::vector<double> dlogits = trace.probabilities;
  dlogits[label] -= 1.0;

  // Through the global average pool.
  const Tensor& class_maps = trace.activations[last + 1];
  Tensor grad(class_maps.shape());
  const double inv_plane = 1.0 / static_cast<double>(class_maps.shape().plane());
  for (std::size_t c = 0; c < grad.channels(); ++c) {
    for (double& v : grad.channel(c)) v = scale * dlogits[c] * inv_plane;
  }

  std::size_t pool_index = net.spec().pool_count();
  std::size_t conv_index = net.params().size();
  for (std::size_t i = last + 1; i-- > 0;) {
    const auto& l = layers[i];
    const Tensor& in = trace.activations[i];
    if (l.kind == LayerKind::Conv) {
      --conv_index;
      if (l.relu) {
        const Tensor& out = trace.activations[i + 1];
        for (std::size_t j = 0; j < grad.size(); ++j) {
          if (!(out[j] > 0.0)) grad[j] = 0.0;
        }
      }
      const KernelBank& k = net.params()[conv_index];
      const RowMatrix* unfolded = patches && i < patches->size() ? &(*patches)[i] : nullptr;
      accumulate(grads[conv_index], conv2d_kernel_gradient(in, grad, k, 1, l.padding(), unfolded));
      if (i > 0) grad = conv2d_transpose(grad, k, 1, l.padding(), in.shape());
    } else if (l.kind == LayerKind::MaxPool) {
      --pool_index;
      grad = unpool(grad, trace.switches[pool_index], in.shape());
    }
  }
}

struct BatchPass {
  std::vector<double> losses;
  std::vector<char> hits;
  std::vector<KernelBank> grads;  // of the mean loss
};

// Forward + backward over a batch. Per-worker gradient buffers are reduced in
// worker order, so results are bitwise reproducible for a fixed thread count.
inline BatchPass batch_pass(const Network& net, std::span<const Tensor> images,
                            std::span<const std::size_t> labels) {
  if (images.empty() || images.size() != labels.size()) {
    throw ArgumentError("batch must be non-empty with one label per image");
  }
  for (std::size_t label : labels) check_label(net, label);

  const std::size_t n = images.size();
  const double scale = 1.0 / static_cast<double>(n);
  const std::size_t workers = std::min(thread_count(), n);
  std::vector<std::vector<KernelBank>> partial(workers, zero_like(net.params()));
  BatchPass out;
  out.losses.resize(n);
  out.hits.resize(n);
  parallel_chunks(n, workers, [&](std::size_t w, std::size_t begin, std::size_t end) {
    std::vector<RowMatrix> patches;
    for (std::size_t i = begin; i < end; ++i) {
      const ForwardTrace trace = forward(net, images[i], &patches);
      out.losses[i] = cross_entropy(trace.logits, labels[i]);
      out.hits[i] = argmax_prediction(trace.probabilities).label == labels[i];
      backward(net, trace, labels[i], scale, partial[w], &patches);
    }
  });
  out.grads = std::move(partial[0]);
  for (std::size_t w = 1; w < workers; ++w) {
    for (std::size_t k = 0; k < out.grads.size(); ++k) accumulate(out.grads[k], partial[w][k]);
  }
  return out;
}

}  // namespace detail

// Mean cross-entropy over the batch and its gradient with respect to every
// conv weight and bias.
inline LossAndGradients loss_and_gradients(const Network& net, std::span<const Tensor> images,
                                           std::span<const std::size_t> labels) {
  auto pass = detail::batch_pass(net, images, labels);
  LossAndGradients out;
  for (double l : pass.losses) out.loss += l;
  out.loss /= static_cast<double>(images.size());
  if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");
  out.grads = std::move(pass.grads);
  return out;
}

// Mean cross-entropy only.
inline double batch_loss(const Network& net, std::span<const Tensor> images,
                         std::span<const std::size_t> labels) {
  if (images.empty() || images.size() != labels.size()) {
    throw ArgumentError("batch must be non-empty with one label per image");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    detail::check_label(net, labels[i]);
    sum += cross_entropy(forward(net, images[i]).logits, labels[i]);
  }
  return sum / static_cast<double>(images.size());
}

// Classic momentum update: v <- momentum * v - lr * g; w <- w + v.
class SgdMomentum {
 public:
  SgdMomentum(const Network& net, double learning_rate, double momentum)
      : lr_(learning_rate), momentum_(momentum), velocity_(detail::zero_like(net.params())) {}

  void step(Network& net, const std::vector<KernelBank>& grads) {
    auto& params = net.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto update = [&](std::vector<double>& w, std::vector<double>& v, const std::vector<double>& g) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = momentum_ * v[i] - lr_ * g[i];
          w[i] += v[i];
        }
      };
      update(params[k].weights, velocity_[k].weights, grads[k].weights);
      update(params[k].bias, velocity_[k].bias, grads[k].bias);
    }
  }

 private:
  double lr_;
  double momentum_;
  std::vector<KernelBank> velocity_;
};

struct TrainResult {
  Network net;
  std::vector<EpochMetrics> history;
};

// Trains `net` in place of a copy and returns it. Parameters are (re)initialised
// only when `initialise` is set. Epoch lines `epoch <n> loss <v> acc <v>` go to
// `log` when given.
inline TrainResult train(Network net, const Dataset& data, const TrainConfig& config,
                         std::ostream* log = nullptr, bool initialise = true) {
  if (data.empty()) throw ArgumentError("training dataset is empty");
  if (data.labels.size() != data.images.size()) throw ArgumentError("dataset images and labels differ in length");
  if (!(config.learning_rate >= 0.0) || config.batch_size == 0) {
    throw ArgumentError("learning rate must be non-negative and batch size at least 1");
  }
  if (initialise) init_he_normal(net, config.seed);

  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  SgdMomentum opt(net, config.learning_rate, config.momentum);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{std::move(net), {}};
  std::vector<Tensor> batch_images;
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(shuffle_rng)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch_images.clear();
      batch_labels.clear();
      for (std::size_t j = start; j < end; ++j) {
        batch_images.push_back(data.images[order[j]]);
        batch_labels.push_back(data.labels[order[j]]);
      }
      const auto pass = detail::batch_pass(result.net, batch_images, batch_labels);
      for (std::size_t i = 0; i < pass.losses.size(); ++i) {
        loss_sum += pass.losses[i];
        correct += static_cast<std::size_t>(pass.hits[i]);
      }
      if (!std::isfinite(loss_sum)) throw NumericError("training loss diverged in epoch " + std::to_string(epoch));
      opt.step(result.net, pass.grads);
    }
    EpochMetrics m{epoch, loss_sum / static_cast<double>(data.size()),
                   static_cast<double>(correct) / static_cast<double>(data.size())};
    result.history.push_back(m);
    if (log) *log << "epoch " << m.epoch << " loss " << m.loss << " acc " << m.accuracy << std::endl;
  }
  return result;
}

// Fraction of images whose predicted class equals the label.
inline double evaluate_accuracy(const Network& net, const Dataset& data) {
  if (data.empty()) throw ArgumentError("evaluation dataset is empty");
  if (data.labels.size() != data.images.size()) throw ArgumentError("dataset images and labels differ in length");
  std::vector<char> hits(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    hits[i] = predict(net, data.images[i]).label == data.labels[i];
  });
  std::size_t correct = 0;
  for (char h : hits) correct += static_cast<std::size_t>(h);
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace clearmap
