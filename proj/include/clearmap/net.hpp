#pragma once

// Straight-line all-convolutional networks: a line-oriented description format,
// parameter storage, and a forward pass that keeps everything back-projection
// needs (activations and pooling switches).
//
// Description format, one directive per line, '#' starts a comment:
//   input <C> <H> <W>
//   classes <N>                      (optional; defaults to the last conv width)
//   conv <kH> <kW> <outC> [relu|linear]   (relu when omitted)
//   maxpool <window> <stride>
//   gap
//   softmax
// Convolutions use stride 1 and zero padding kH/2 ("same" for odd kernels).

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "clearmap/error.hpp"
#include "clearmap/kernels.hpp"
#include "clearmap/tensor.hpp"

namespace clearmap {

enum class LayerKind { Conv, MaxPool, GlobalAvgPool, Softmax };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t out_channels = 0;
  bool relu = true;
  std::size_t window = 0;
  std::size_t stride = 0;
  std::size_t line = 0;  // source line, 0 when built in code

  static LayerSpec conv(std::size_t k, std::size_t out, bool relu = true) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.kernel_h = l.kernel_w = k;
    l.out_channels = out;
    l.relu = relu;
    return l;
  }
  static LayerSpec maxpool(std::size_t window, std::size_t stride) {
    LayerSpec l;
    l.kind = LayerKind::MaxPool;
    l.window = window;
    l.stride = stride;
    return l;
  }
  static LayerSpec gap() {
    LayerSpec l;
    l.kind = LayerKind::GlobalAvgPool;
    return l;
  }
  static LayerSpec softmax() {
    LayerSpec l;
    l.kind = LayerKind::Softmax;
    return l;
  }

  std::size_t padding() const noexcept { return kernel_h / 2; }
};

struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;

  std::size_t conv_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.kind == LayerKind::Conv;
    return n;
  }
  std::size_t pool_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.kind == LayerKind::MaxPool;
    return n;
  }
  // Index of the final convolution (the class-kernel layer).
  std::size_t last_conv_index() const {
    for (std::size_t i = layers.size(); i-- > 0;) {
      if (layers[i].kind == LayerKind::Conv) return i;
    }
    throw ArgumentError("network has no convolution layer");
  }
};

// Shape after each layer; element i is the output of layers[i].
inline std::vector<Shape> shape_chain(const NetworkSpec& spec) {
  std::vector<Shape> out;
  out.reserve(spec.layers.size());
  Shape cur = spec.input_shape;
  for (const auto& l : spec.layers) {
    try {
      switch (l.kind) {
        case LayerKind::Conv: {
          KernelBank probe;
          probe.out_channels = l.out_channels;
          probe.in_channels = cur.channels;
          probe.kernel_h = l.kernel_h;
          probe.kernel_w = l.kernel_w;
          cur = conv_output_shape(cur, probe, 1, l.padding());
          break;
        }
        case LayerKind::MaxPool:
          if (l.window == 0 || l.stride == 0) throw ArgumentError("pool window and stride must be positive");
          if (cur.height < l.window || cur.width < l.window) {
            throw ArgumentError("pool window " + std::to_string(l.window) + " exceeds " +
                                std::to_string(cur.height) + "x" + std::to_string(cur.width));
          }
          cur = {cur.channels, (cur.height - l.window) / l.stride + 1,
                 (cur.width - l.window) / l.stride + 1};
          break;
        case LayerKind::GlobalAvgPool:
        case LayerKind::Softmax:
          cur = {cur.channels, 1, 1};
          break;
      }
    } catch (const ArgumentError& e) {
      throw ParseError(l.line, e.what());
    }
    out.push_back(cur);
  }
  return out;
}

// Checks the structural rules and fills in num_classes when it is 0.
inline void validate(NetworkSpec& spec) {
  if (spec.input_shape.size() == 0) throw ParseError(0, "missing or empty input shape");
  if (spec.layers.empty()) throw ParseError(0, "no layers");
  const std::size_t n = spec.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = spec.layers[i];
    if (l.kind == LayerKind::Conv) {
      if (l.kernel_h == 0 || l.kernel_w == 0 || l.out_channels == 0) {
        throw ParseError(l.line, "conv dimensions must be positive");
      }
      if (l.kernel_h != l.kernel_w) throw ParseError(l.line, "only square conv kernels are supported");
    }
    if (l.kind == LayerKind::GlobalAvgPool && i != n - 2) {
      throw ParseError(l.line, "gap must be the second-to-last layer, followed by softmax");
    }
    if (l.kind == LayerKind::Softmax && i != n - 1) {
      throw ParseError(l.line, "softmax must be the last layer");
    }
  }
  if (n < 3 || spec.layers[n - 1].kind != LayerKind::Softmax ||
      spec.layers[n - 2].kind != LayerKind::GlobalAvgPool) {
    throw ParseError(spec.layers.back().line, "network must end with gap then softmax");
  }
  const auto& last = spec.layers[n - 3];
  if (last.kind != LayerKind::Conv) {
    throw ParseError(last.line, "the layer feeding gap must be a conv layer");
  }
  if (last.relu) throw ParseError(last.line, "the final conv layer must be linear");
  if (spec.num_classes == 0) spec.num_classes = last.out_channels;
  if (last.out_channels != spec.num_classes) {
    throw ParseError(last.line, "final conv has " + std::to_string(last.out_channels) +
                                    " kernels but the network declares " +
                                    std::to_string(spec.num_classes) + " classes");
  }
  shape_chain(spec);
}

namespace detail {

inline std::size_t parse_count(const std::string& tok, std::size_t line) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    throw ParseError(line, "expected a non-negative integer, got '" + tok + "'");
  }
  try {
    return static_cast<std::size_t>(std::stoull(tok));
  } catch (const std::exception&) {
    throw ParseError(line, "integer out of range: '" + tok + "'");
  }
}

}  // namespace detail

inline NetworkSpec parse_network_spec(std::string_view text) {
  NetworkSpec spec;
  bool have_input = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;

    const std::string& kw = tok[0];
    auto expect_args = [&](std::size_t lo, std::size_t hi) {
      if (tok.size() - 1 < lo || tok.size() - 1 > hi) {
        throw ParseError(line_no, "'" + kw + "' takes " + std::to_string(lo) +
                                      (lo == hi ? "" : "-" + std::to_string(hi)) + " arguments");
      }
    };
    if (kw == "input") {
      expect_args(3, 3);
      if (have_input) throw ParseError(line_no, "duplicate input directive");
      if (!spec.layers.empty()) throw ParseError(line_no, "input must precede all layers");
      spec.input_shape = {detail::parse_count(tok[1], line_no), detail::parse_count(tok[2], line_no),
                          detail::parse_count(tok[3], line_no)};
      if (spec.input_shape.size() == 0) throw ParseError(line_no, "input dimensions must be positive");
      have_input = true;
    } else if (kw == "classes") {
      expect_args(1, 1);
      spec.num_classes = detail::parse_count(tok[1], line_no);
      if (spec.num_classes == 0) throw ParseError(line_no, "classes must be positive");
    } else if (kw == "conv") {
      expect_args(3, 4);
      LayerSpec l;
      l.kind = LayerKind::Conv;
      l.kernel_h = detail::parse_count(tok[1], line_no);
      l.kernel_w = detail::parse_count(tok[2], line_no);
      l.out_channels = detail::parse_count(tok[3], line_no);
      if (tok.size() == 5) {
        if (tok[4] == "relu") {
          l.relu = true;
        } else if (tok[4] == "linear") {
          l.relu = false;
        } else {
          throw ParseError(line_no, "conv activation must be relu or linear, got '" + tok[4] + "'");
        }
      }
      l.line = line_no;
      spec.layers.push_back(l);
    } else if (kw == "maxpool") {
      expect_args(2, 2);
      LayerSpec l = LayerSpec::maxpool(detail::parse_count(tok[1], line_no),
                                       detail::parse_count(tok[2], line_no));
      if (l.window == 0 || l.stride == 0) throw ParseError(line_no, "maxpool window and stride must be positive");
      l.line = line_no;
      spec.layers.push_back(l);
    } else if (kw == "gap" || kw == "softmax") {
      expect_args(0, 0);
      LayerSpec l = kw == "gap" ? LayerSpec::gap() : LayerSpec::softmax();
      l.line = line_no;
      spec.layers.push_back(l);
    } else {
      throw ParseError(line_no, "unknown layer kind '" + kw + "'");
    }
  }
  if (spec.layers.empty()) throw ParseError(0, "no layers");
  if (!have_input) throw ParseError(0, "missing input directive");
  validate(spec);
  return spec;
}

inline NetworkSpec load_network_spec(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open network spec '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_network_spec(ss.str());
}

// Whitespace- and comment-independent rendering, used for hashing.
inline std::string canonical_text(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "input " << spec.input_shape.channels << ' ' << spec.input_shape.height << ' '
     << spec.input_shape.width << '\n'
     << "classes " << spec.num_classes << '\n';
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        os << "conv " << l.kernel_h << ' ' << l.kernel_w << ' ' << l.out_channels << ' '
           << (l.relu ? "relu" : "linear") << '\n';
        break;
      case LayerKind::MaxPool:
        os << "maxpool " << l.window << ' ' << l.stride << '\n';
        break;
      case LayerKind::GlobalAvgPool:
        os << "gap\n";
        break;
      case LayerKind::Softmax:
        os << "softmax\n";
        break;
    }
  }
  return os.str();
}

// 64-bit FNV-1a of the canonical text.
inline std::uint64_t spec_hash(const NetworkSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_text(spec)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Network {
 public:
  // Zero-initialised parameters.
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    Shape cur = spec_.input_shape;
    const auto chain = shape_chain(spec_);
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      if (l.kind == LayerKind::Conv) {
        conv_slot_.push_back(params_.size());
        params_.emplace_back(l.out_channels, cur.channels, l.kernel_h, l.kernel_w);
      } else {
        conv_slot_.push_back(kNoSlot);
      }
      cur = chain[i];
    }
  }

  Network(NetworkSpec spec, std::vector<KernelBank> params) : Network(std::move(spec)) {
    if (params.size() != params_.size()) {
      throw WeightShapeError("expected " + std::to_string(params_.size()) + " conv layers, got " +
                             std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].same_shape(params_[i]) || !params[i].consistent()) {
        throw WeightShapeError("conv layer " + std::to_string(i) + " parameters do not match the network");
      }
    }
    params_ = std::move(params);
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::size_t num_classes() const noexcept { return spec_.num_classes; }

  const std::vector<KernelBank>& params() const noexcept { return params_; }
  std::vector<KernelBank>& params() noexcept { return params_; }

  // Parameters of layers[layer_index], which must be a conv layer.
  const KernelBank& conv_params(std::size_t layer_index) const {
    return params_.at(slot(layer_index));
  }
  KernelBank& conv_params(std::size_t layer_index) { return params_.at(slot(layer_index)); }

 private:
  static constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);

  std::size_t slot(std::size_t layer_index) const {
    if (layer_index >= conv_slot_.size() || conv_slot_[layer_index] == kNoSlot) {
      throw ArgumentError("layer " + std::to_string(layer_index) + " is not a conv layer");
    }
    return conv_slot_[layer_index];
  }

  NetworkSpec spec_;
  std::vector<KernelBank> params_;
  std::vector<std::size_t> conv_slot_;
};

struct ForwardTrace {
  // activations[0] is the input image; activations[i + 1] is the output of
  // layers[i] (after ReLU for conv layers that have it). GAP and softmax
  // outputs are stored as N x 1 x 1 tensors.
  std::vector<Tensor> activations;
  // One switch map per MaxPool layer, in network order.
  std::vector<SwitchMap> switches;
  std::vector<double> logits;
  std::vector<double> probabilities;

  const Tensor& input() const { return activations.front(); }
};

// `patches`, when given, gets the unfolded input of every layer (empty for
// non-conv and 1x1 layers).
inline ForwardTrace forward(const Network& net, const Tensor& image,
                            std::vector<detail::RowMatrix>* patches = nullptr) {
  const auto& spec = net.spec();
  if (image.shape() != spec.input_shape) {
    throw ArgumentError("image shape " + to_string(image.shape()) + " does not match network input " +
                        to_string(spec.input_shape));
  }
  ForwardTrace trace;
  if (patches) patches->assign(spec.layers.size(), {});
  trace.activations.reserve(spec.layers.size() + 1);
  trace.activations.push_back(image);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const Tensor& cur = trace.activations.back();
    switch (l.kind) {
      case LayerKind::Conv: {
        Tensor out = conv2d_forward(cur, net.conv_params(i), 1, l.padding(), patches ? &(*patches)[i] : nullptr);
        trace.activations.push_back(l.relu ? relu(std::move(out)) : std::move(out));
        break;
      }
      case LayerKind::MaxPool: {
        auto pooled = maxpool_forward(cur, l.window, l.stride);
        trace.switches.push_back(std::move(pooled.switches));
        trace.activations.push_back(std::move(pooled.output));
        break;
      }
      case LayerKind::GlobalAvgPool:
        trace.logits = global_avg_pool(cur);
        trace.activations.emplace_back(Shape{trace.logits.size(), 1, 1}, trace.logits);
        break;
      case LayerKind::Softmax:
        trace.probabilities = softmax(cur.data());
        trace.activations.emplace_back(Shape{trace.probabilities.size(), 1, 1}, trace.probabilities);
        break;
    }
  }
  for (double v : trace.logits) {
    if (!std::isfinite(v)) throw NumericError("forward pass produced a non-finite logit");
  }
  return trace;
}

struct Prediction {
  std::size_t label = 0;
  double confidence = 0.0;
};

// Argmax of the probabilities; ties go to the lowest class index.
inline Prediction argmax_prediction(const std::vector<double>& probabilities) {
  Prediction p;
  for (std::size_t c = 0; c < probabilities.size(); ++c) {
    if (c == 0 || probabilities[c] > p.confidence) {
      p.label = c;
      p.confidence = probabilities[c];
    }
  }
  return p;
}

inline Prediction predict(const Network& net, const Tensor& image) {
  return argmax_prediction(forward(net, image).probabilities);
}

}  // namespace clearmap
