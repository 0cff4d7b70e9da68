#pragma once

// Class-specific back-projection of last-layer responses to input space.
//
// For class c the last conv layer's output maps z_L are pushed through the
// transposed last-layer operator with every kernel except c zeroed, then
// alternately through transposed convolutions (biases ignored) and switch
// unpooling down to the input:
//
//   R(x | c) = G_1 U_1 G_2 U_2 ... G_{L-1} U_{L-1} G_L^c z_L
//
// Rectified mode additionally applies ReLU to the backward signal wherever the
// forward pass applied one (deconvnet style). Linear mode applies nothing, so
// the map is linear in z_L and the per-class maps sum to the unmasked
// projection.

#include <cstdint>
#include <string>
#include <vector>

#include "clearmap/error.hpp"
#include "clearmap/io.hpp"
#include "clearmap/kernels.hpp"
#include "clearmap/net.hpp"
#include "clearmap/parallel.hpp"
#include "clearmap/tensor.hpp"

namespace clearmap {

enum class BackprojectMode { Linear, Rectified };

inline const char* to_string(BackprojectMode m) {
  return m == BackprojectMode::Linear ? "linear" : "rectified";
}

// One input-shaped map per class, in class order.
struct ResponseStack {
  std::vector<Tensor> maps;
  BackprojectMode mode = BackprojectMode::Rectified;

  std::size_t num_classes() const noexcept { return maps.size(); }
  const Tensor& operator[](std::size_t c) const { return maps[c]; }
};

namespace detail {

inline void check_trace(const Network& net, const ForwardTrace& trace) {
  const auto& spec = net.spec();
  if (trace.activations.size() != spec.layers.size() + 1) {
    throw ArgumentError("trace has " + std::to_string(trace.activations.size()) +
                        " activations, network needs " + std::to_string(spec.layers.size() + 1));
  }
  if (trace.switches.size() != spec.pool_count()) {
    throw ArgumentError("trace has " + std::to_string(trace.switches.size()) +
                        " switch maps, network has " + std::to_string(spec.pool_count()) + " pools");
  }
  if (trace.activations[0].shape() != spec.input_shape) {
    throw ArgumentError("trace input does not match the network input shape");
  }
  const auto chain = shape_chain(spec);
  const std::size_t last = spec.last_conv_index();
  for (std::size_t i = 0; i <= last; ++i) {
    if (trace.activations[i + 1].shape() != chain[i]) {
      throw ArgumentError("trace activation " + std::to_string(i + 1) + " has shape " +
                          to_string(trace.activations[i + 1].shape()) + ", expected " + to_string(chain[i]));
    }
  }
}

// Carries a signal sitting at the input of layers[from] down to input space.
inline Tensor project_to_input(const Network& net, const ForwardTrace& trace, Tensor signal,
                               std::size_t from, BackprojectMode mode) {
  const auto& layers = net.spec().layers;
  std::size_t pool_index = 0;
  for (std::size_t i = 0; i < from; ++i) pool_index += layers[i].kind == LayerKind::MaxPool;
  for (std::size_t i = from; i-- > 0;) {
    const auto& l = layers[i];
    const Shape& below = trace.activations[i].shape();
    if (l.kind == LayerKind::Conv) {
      if (mode == BackprojectMode::Rectified && l.relu) signal = relu(std::move(signal));
      signal = conv2d_transpose(signal, net.conv_params(i), 1, l.padding(), below);
    } else if (l.kind == LayerKind::MaxPool) {
      --pool_index;
      signal = unpool(signal, trace.switches[pool_index], below);
    }
  }
  return signal;
}

inline KernelBank class_masked(const KernelBank& bank, std::size_t c) {
  KernelBank masked = bank;
  const std::size_t f = bank.filter_size();
  for (std::size_t k = 0; k < bank.out_channels; ++k) {
    if (k == c) continue;
    std::fill(masked.weights.begin() + static_cast<std::ptrdiff_t>(k * f),
              masked.weights.begin() + static_cast<std::ptrdiff_t>((k + 1) * f), 0.0);
  }
  return masked;
}

}  // namespace detail

// R(x | c) for one class.
inline Tensor attentive_response(const Network& net, const ForwardTrace& trace, std::size_t c,
                                 BackprojectMode mode = BackprojectMode::Rectified) {
  if (c >= net.num_classes()) {
    throw ArgumentError("class " + std::to_string(c) + " out of range for " +
                        std::to_string(net.num_classes()) + " classes");
  }
  detail::check_trace(net, trace);
  const std::size_t last = net.spec().last_conv_index();
  const auto& l = net.spec().layers[last];
  const KernelBank masked = detail::class_masked(net.conv_params(last), c);
  Tensor signal = conv2d_transpose(trace.activations[last + 1], masked, 1, l.padding(),
                                   trace.activations[last].shape());
  return detail::project_to_input(net, trace, std::move(signal), last, mode);
}

// Back-projection through the unmasked last layer (all class kernels at once).
inline Tensor full_backprojection(const Network& net, const ForwardTrace& trace,
                                  BackprojectMode mode = BackprojectMode::Rectified) {
  detail::check_trace(net, trace);
  const std::size_t last = net.spec().last_conv_index();
  const auto& l = net.spec().layers[last];
  Tensor signal = conv2d_transpose(trace.activations[last + 1], net.conv_params(last), 1,
                                   l.padding(), trace.activations[last].shape());
  return detail::project_to_input(net, trace, std::move(signal), last, mode);
}

inline ResponseStack attentive_response_all(const Network& net, const ForwardTrace& trace,
                                            BackprojectMode mode = BackprojectMode::Rectified) {
  detail::check_trace(net, trace);
  ResponseStack stack;
  stack.mode = mode;
  stack.maps.resize(net.num_classes());
  parallel_for(net.num_classes(), [&](std::size_t c) {
    stack.maps[c] = attentive_response(net, trace, c, mode);
  });
  return stack;
}

// Raw dump of a stack as a single RESP section in the CLRW container.
inline void save_response_stack(const ResponseStack& stack, std::uint64_t hash, const std::string& path) {
  if (stack.maps.empty()) throw ArgumentError("cannot save an empty response stack");
  const Shape s = stack.maps.front().shape();
  detail::ByteWriter w;
  detail::write_header(w, hash, 1);
  w.bytes("RESP", 4);
  w.u32(8);
  w.u32(stack.mode == BackprojectMode::Rectified ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(stack.maps.size()));
  w.u32(static_cast<std::uint32_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  for (const auto& m : stack.maps) {
    if (m.shape() != s) throw ArgumentError("response maps differ in shape");
    for (double v : m.data()) w.f64(v);
  }
  detail::write_file(path, w.buffer());
}

struct LoadedResponses {
  ResponseStack stack;
  std::uint64_t spec_hash = 0;
};

inline LoadedResponses load_response_stack(const std::string& path) {
  detail::ByteReader r(detail::read_file(path));
  std::uint32_t sections = 0;
  LoadedResponses out;
  out.spec_hash = detail::read_header(r, path, sections);
  if (sections != 1) throw FormatError("response file must hold exactly one section");
  const auto h = detail::read_section_header(r, "response stack");
  if (std::string(h.tag.data(), 4) != "RESP") throw FormatError("expected a RESP section in '" + path + "'");
  out.stack.mode = h.flags == 1 ? BackprojectMode::Rectified : BackprojectMode::Linear;
  const Shape s{h.dims[1], h.dims[2], h.dims[3]};
  for (std::uint32_t c = 0; c < h.dims[0]; ++c) {
    out.stack.maps.emplace_back(s, detail::read_values(r, s.size(), h.element_bytes,
                                                       "response map " + std::to_string(c)));
  }
  return out;
}

}  // namespace clearmap
