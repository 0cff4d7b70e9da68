#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <random>

#include "clearmap/backproject.hpp"
#include "test_support.hpp"

using namespace clearmap;
using namespace clearmap::testing;

namespace {

const std::string kTiny =
    "input 2 8 8\n"
    "conv 3 3 4 relu\n"
    "maxpool 2 2\n"
    "conv 3 3 4 relu\n"
    "conv 1 1 3 linear\n"
    "gap\n"
    "softmax\n";

Network random_net(const std::string& text, std::uint64_t seed, bool biases = true) {
  Network net(parse_network_spec(text));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-0.7, 0.7);
  for (auto& k : net.params()) {
    for (double& w : k.weights) w = d(rng);
    for (double& b : k.bias) b = biases ? d(rng) * 0.3 : 0.0;
  }
  return net;
}

std::vector<double> masked_class(const Tensor& z, std::size_t c) {
  std::vector<double> y(z.size(), 0.0);
  const std::size_t plane = z.shape().plane();
  for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] = z[c * plane + i];
  return y;
}

void expect_near(const Tensor& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(AttentiveResponse, SingleLayerMatchesDenseTranspose) {
  // One 3x3 linear conv straight to the classes.
  const Network net = random_net("input 2 5 5\nconv 3 3 3 linear\ngap\nsoftmax\n", 1);
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({2, 5, 5}, rng);
  const auto trace = forward(net, x);
  const DenseMatrix g = conv_matrix({2, 5, 5}, net.conv_params(0), 1, 1);
  for (BackprojectMode mode : {BackprojectMode::Linear, BackprojectMode::Rectified}) {
    for (std::size_t c = 0; c < 3; ++c) {
      // G^T applied to the one-hot-channel-masked class map.
      const auto want = transpose_times(g, masked_class(trace.activations[1], c));
      expect_near(attentive_response(net, trace, c, mode), want, 1e-12);
    }
  }
}

TEST(AttentiveResponse, TwoLayerRectifiedMatchesDenseOracle) {
  const Network net = random_net("input 1 6 6\nconv 3 3 3 relu\nconv 1 1 2 linear\ngap\nsoftmax\n", 3);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({1, 6, 6}, rng);
  const auto trace = forward(net, x);
  const DenseMatrix g1 = conv_matrix({1, 6, 6}, net.conv_params(0), 1, 1);
  const DenseMatrix g2 = conv_matrix({3, 6, 6}, net.conv_params(1), 1, 0);
  for (std::size_t c = 0; c < 2; ++c) {
    auto mid = transpose_times(g2, masked_class(trace.activations[2], c));
    const auto linear = transpose_times(g1, mid);
    for (double& v : mid) v = std::max(v, 0.0);
    const auto rectified = transpose_times(g1, mid);
    expect_near(attentive_response(net, trace, c, BackprojectMode::Linear), linear, 1e-12);
    expect_near(attentive_response(net, trace, c, BackprojectMode::Rectified), rectified, 1e-12);
  }
}

TEST(AttentiveResponse, ZeroClassKernelGivesZeroMap) {
  Network net = random_net(kTiny, 5);
  auto& last = net.conv_params(4 - 1);
  for (std::size_t i = 0; i < last.filter_size(); ++i) last.weights[1 * last.filter_size() + i] = 0.0;
  std::mt19937_64 rng(6);
  const auto trace = forward(net, random_tensor({2, 8, 8}, rng));
  for (BackprojectMode mode : {BackprojectMode::Linear, BackprojectMode::Rectified}) {
    EXPECT_EQ(attentive_response(net, trace, 1, mode), Tensor({2, 8, 8}));
  }
}

TEST(AttentiveResponse, ZeroInputAndBiasesGiveZeroStack) {
  const Network net = random_net(kTiny, 7, false);
  const auto stack = attentive_response_all(net, forward(net, Tensor({2, 8, 8})));
  for (const auto& m : stack.maps) EXPECT_EQ(m, Tensor({2, 8, 8}));
}

TEST(AttentiveResponse, MnistStackShape) {
  Network net(load_network_spec(CLEARMAP_NETS_DIR "/mnist.net"));
  std::mt19937_64 rng(8);
  for (auto& k : net.params()) {
    for (double& w : k.weights) w = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  }
  const auto stack = attentive_response_all(net, forward(net, random_tensor({1, 28, 28}, rng, 0, 1)));
  ASSERT_EQ(stack.num_classes(), 10u);
  for (const auto& m : stack.maps) EXPECT_EQ(m.shape(), (Shape{1, 28, 28}));
}

TEST(AttentiveResponse, LinearModePartitionsFullProjection) {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Network net = random_net(kTiny, seed);
    const auto trace = forward(net, random_tensor({2, 8, 8}, rng));
    const auto stack = attentive_response_all(net, trace, BackprojectMode::Linear);
    const Tensor full = full_backprojection(net, trace, BackprojectMode::Linear);
    const double scale = std::max(1.0, max_abs(full));
    for (std::size_t i = 0; i < full.size(); ++i) {
      double s = 0.0;
      for (const auto& m : stack.maps) s += m[i];
      EXPECT_NEAR(s, full[i], 1e-10 * scale);
    }
  }
}

TEST(AttentiveResponse, PositivelyHomogeneousWithoutBiases) {
  const Network net = random_net(kTiny, 10, false);
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({2, 8, 8}, rng);
  for (double alpha : {0.5, 3.0}) {
    Tensor ax = x;
    for (double& v : ax.data()) v *= alpha;
    for (BackprojectMode mode : {BackprojectMode::Linear, BackprojectMode::Rectified}) {
      const auto a = attentive_response_all(net, forward(net, x), mode);
      const auto b = attentive_response_all(net, forward(net, ax), mode);
      for (std::size_t c = 0; c < 3; ++c) {
        const double scale = std::max(1e-12, max_abs(a[c]));
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(b[c][i], alpha * a[c][i], 1e-10 * alpha * scale);
      }
    }
  }
}

TEST(AttentiveResponse, PermutingClassKernelsPermutesStack) {
  const Network net = random_net(kTiny, 12);
  const std::vector<std::size_t> perm{2, 0, 1};
  Network shuffled = net;
  const KernelBank& src = net.conv_params(3);
  KernelBank& dst = shuffled.conv_params(3);
  const std::size_t f = src.filter_size();
  for (std::size_t c = 0; c < 3; ++c) {
    std::copy_n(src.weights.begin() + static_cast<std::ptrdiff_t>(c * f), f,
                dst.weights.begin() + static_cast<std::ptrdiff_t>(perm[c] * f));
    dst.bias[perm[c]] = src.bias[c];
  }
  std::mt19937_64 rng(13);
  const Tensor x = random_tensor({2, 8, 8}, rng);
  const auto a = attentive_response_all(net, forward(net, x));
  const auto b = attentive_response_all(shuffled, forward(shuffled, x));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(b[perm[c]], a[c]);
}

TEST(AttentiveResponse, RectifiedClampsAtReluLayers) {
  // Class 0 projects back a positive signal, class 1 a negative one.
  Network net(parse_network_spec("input 1 4 4\nconv 1 1 1 relu\nconv 1 1 2 linear\ngap\nsoftmax\n"));
  net.conv_params(0).weights = {1.0};
  net.conv_params(1).weights = {1.0, -1.0};
  net.conv_params(1).bias = {0.0, 5.0};
  std::mt19937_64 rng(14);
  const auto trace = forward(net, random_tensor({1, 4, 4}, rng, 0.1, 1.0));
  const Tensor& x = trace.activations[0];
  const Tensor up = attentive_response(net, trace, 0);
  const Tensor down = attentive_response(net, trace, 1);
  const Tensor down_linear = attentive_response(net, trace, 1, BackprojectMode::Linear);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_DOUBLE_EQ(up[i], x[i]);
    EXPECT_EQ(down[i], 0.0);
    EXPECT_DOUBLE_EQ(down_linear[i], -(5.0 - x[i]));
  }
}

TEST(AttentiveResponse, StackEqualsPerClassCalls) {
  const Network net = random_net(kTiny, 15);
  std::mt19937_64 rng(16);
  const auto trace = forward(net, random_tensor({2, 8, 8}, rng));
  const auto stack = attentive_response_all(net, trace);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(stack[c], attentive_response(net, trace, c));
}

TEST(AttentiveResponse, RejectsBadArguments) {
  const Network net = random_net(kTiny, 17);
  const auto trace = forward(net, Tensor({2, 8, 8}));
  EXPECT_THROW(attentive_response(net, trace, 3), ArgumentError);
  const Network other = random_net("input 2 8 8\nconv 3 3 4 relu\nconv 1 1 3 linear\ngap\nsoftmax\n", 1);
  EXPECT_THROW(attentive_response(other, trace, 0), ArgumentError);
  auto broken = trace;
  broken.switches.clear();
  EXPECT_THROW(attentive_response_all(net, broken), ArgumentError);
}

TEST(ResponseFile, RoundTrip) {
  const Network net = random_net(kTiny, 18);
  std::mt19937_64 rng(19);
  const auto stack = attentive_response_all(net, forward(net, random_tensor({2, 8, 8}, rng)),
                                            BackprojectMode::Linear);
  const auto path = (std::filesystem::temp_directory_path() / "clearmap_resp_test.clrw").string();
  save_response_stack(stack, spec_hash(net.spec()), path);
  const auto loaded = load_response_stack(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.spec_hash, spec_hash(net.spec()));
  EXPECT_EQ(loaded.stack.mode, BackprojectMode::Linear);
  ASSERT_EQ(loaded.stack.num_classes(), 3u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(loaded.stack[c], stack[c]);
}
