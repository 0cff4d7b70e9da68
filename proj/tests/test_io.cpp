#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "clearmap/io.hpp"
#include "test_support.hpp"

using namespace clearmap;
using namespace clearmap::testing;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("clearmap_io_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& b) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

template <typename T>
void put_le(std::vector<std::uint8_t>& b, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  b.insert(b.end(), raw, raw + sizeof(T));
}

// Two 2x3 images and their labels, assembled by hand.
std::vector<std::uint8_t> idx_images() {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x00000803);
  put_be32(b, 2);
  put_be32(b, 2);
  put_be32(b, 3);
  for (std::uint8_t v : {0, 51, 102, 153, 204, 255, 255, 0, 255, 0, 255, 0}) b.push_back(v);
  return b;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t n) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x00000801);
  put_be32(b, n);
  for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(7 - i));
  return b;
}

const std::string kTiny =
    "input 1 6 6\nconv 3 3 2 relu\nmaxpool 2 2\nconv 1 1 2 linear\ngap\nsoftmax\n";

Network random_net(std::uint64_t seed) {
  Network net(parse_network_spec(kTiny));
  std::mt19937_64 rng(seed);
  for (auto& k : net.params()) {
    for (double& w : k.weights) w = std::normal_distribution<double>()(rng);
    for (double& w : k.bias) w = std::normal_distribution<double>()(rng);
  }
  return net;
}

}  // namespace

TEST(Idx, HandAssembledFixture) {
  TempDir dir;
  write_bytes(dir.file("img"), idx_images());
  write_bytes(dir.file("lab"), idx_labels(2));
  const Dataset ds = load_idx_pair(dir.file("img"), dir.file("lab"));
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.images[0].shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(ds.images[0], Tensor({1, 2, 3}, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}));
  EXPECT_EQ(ds.images[1], Tensor({1, 2, 3}, {1, 0, 1, 0, 1, 0}));
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{7, 6}));
  EXPECT_EQ(take(ds, 1).size(), 1u);
  EXPECT_EQ(take(ds, 0).size(), 2u);
}

TEST(Idx, Errors) {
  TempDir dir;
  write_bytes(dir.file("img"), idx_images());
  write_bytes(dir.file("lab3"), idx_labels(3));
  EXPECT_THROW(load_idx_pair(dir.file("img"), dir.file("lab3")), CountMismatchError);

  auto bad = idx_images();
  bad[3] = 0x01;
  write_bytes(dir.file("bad"), bad);
  EXPECT_THROW(load_idx_images(dir.file("bad")), FormatError);
  EXPECT_THROW(load_idx_labels(dir.file("img")), FormatError);

  auto cut = idx_images();
  cut.pop_back();
  write_bytes(dir.file("cut"), cut);
  EXPECT_THROW(load_idx_images(dir.file("cut")), TruncatedError);
  write_bytes(dir.file("short"), {0, 0, 8});
  EXPECT_THROW(load_idx_images(dir.file("short")), TruncatedError);
  EXPECT_THROW(load_idx_images(dir.file("missing")), DataError);
}

TEST(Weights, RoundTripIsBitwise) {
  TempDir dir;
  const Network net = random_net(1);
  save_weights(net, dir.file("w.clrw"));
  const Network back = load_weights(net.spec(), dir.file("w.clrw"));
  EXPECT_EQ(back.params(), net.params());
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({1, 6, 6}, rng);
  EXPECT_EQ(forward(back, x).probabilities, forward(net, x).probabilities);
}

TEST(Weights, LayoutIsDocumented) {
  const Network net = random_net(3);
  const auto bytes = serialize_weights(net);
  ASSERT_GE(bytes.size(), 20u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CLRW");
  std::uint32_t version, sections;
  std::uint64_t hash;
  std::memcpy(&version, &bytes[4], 4);
  std::memcpy(&hash, &bytes[8], 8);
  std::memcpy(&sections, &bytes[16], 4);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(hash, spec_hash(net.spec()));
  EXPECT_EQ(sections, 2u);
  // header, two section headers, 2*1*3*3 + 2 and 2*2*1*1 + 2 doubles
  EXPECT_EQ(bytes.size(), 20u + 2 * 28u + 8u * (20 + 6));
}

TEST(Weights, WrongSpecHashIsRejected) {
  TempDir dir;
  const Network net = random_net(4);
  save_weights(net, dir.file("w.clrw"));
  const auto other = parse_network_spec("input 1 6 6\nconv 3 3 2 relu\nmaxpool 2 2\nconv 1 1 2 linear\ngap\nsoftmax\n"
                                        "# same layers, same hash\n");
  EXPECT_NO_THROW(load_weights(other, dir.file("w.clrw")));
  const auto different = parse_network_spec("input 1 8 8\nconv 3 3 2 relu\nmaxpool 2 2\nconv 1 1 2 linear\ngap\nsoftmax\n");
  EXPECT_THROW(load_weights(different, dir.file("w.clrw")), HashMismatchError);
  EXPECT_NO_THROW(load_weights(different, dir.file("w.clrw"), true));
  const auto wider = parse_network_spec("input 1 6 6\nconv 3 3 3 relu\nmaxpool 2 2\nconv 1 1 2 linear\ngap\nsoftmax\n");
  EXPECT_THROW(load_weights(wider, dir.file("w.clrw"), true), WeightShapeError);
}

TEST(Weights, TruncationNamesTheLayer) {
  TempDir dir;
  const Network net = random_net(5);
  auto bytes = serialize_weights(net);
  bytes.resize(bytes.size() - 8);
  write_bytes(dir.file("cut.clrw"), bytes);
  try {
    load_weights(net.spec(), dir.file("cut.clrw"));
    FAIL() << "no error";
  } catch (const TruncatedError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
  bytes.resize(10);
  write_bytes(dir.file("stub.clrw"), bytes);
  EXPECT_THROW(load_weights(net.spec(), dir.file("stub.clrw")), TruncatedError);
  write_bytes(dir.file("junk.clrw"), std::vector<std::uint8_t>(64, 'x'));
  EXPECT_THROW(load_weights(net.spec(), dir.file("junk.clrw")), FormatError);
}

TEST(Weights, Float32PayloadIsWidened) {
  TempDir dir;
  const auto spec = parse_network_spec("input 1 1 1\nconv 1 1 2 linear\ngap\nsoftmax\n");
  std::vector<std::uint8_t> b{'C', 'L', 'R', 'W'};
  put_le<std::uint32_t>(b, 1);
  put_le<std::uint64_t>(b, spec_hash(spec));
  put_le<std::uint32_t>(b, 1);
  b.insert(b.end(), {'C', 'O', 'N', 'V'});
  for (std::uint32_t v : {4u, 0u, 2u, 1u, 1u, 1u}) put_le(b, v);
  for (float v : {0.5f, -1.25f, 3.0f, 0.125f}) put_le(b, v);
  write_bytes(dir.file("f32.clrw"), b);
  const Network net = load_weights(spec, dir.file("f32.clrw"));
  EXPECT_EQ(net.conv_params(0).weights, (std::vector<double>{0.5, -1.25}));
  EXPECT_EQ(net.conv_params(0).bias, (std::vector<double>{3.0, 0.125}));
}

TEST(Ppm, OneRedPixel) {
  RgbImage img(1, 1);
  img.set(0, 0, {255, 0, 0});
  const auto bytes = encode_ppm(img);
  const std::string header = "P6\n1 1\n255\n";
  // 11 header bytes + one RGB triple
  ASSERT_EQ(bytes.size(), 14u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), header);
  EXPECT_EQ(bytes[11], 255);
  EXPECT_EQ(bytes[12], 0);
  EXPECT_EQ(bytes[13], 0);
}

TEST(Ppm, WriteReadRoundTrip) {
  TempDir dir;
  RgbImage img(5, 3);
  std::mt19937_64 rng(6);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng());
  write_image(img, dir.file("x.ppm"));
  EXPECT_EQ(read_bytes(dir.file("x.ppm")).size(), 11u + 45u);
  EXPECT_EQ(read_ppm(dir.file("x.ppm")), img);
}

TEST(Ppm, Errors) {
  EXPECT_THROW(encode_ppm(RgbImage(0, 4)), ArgumentError);
  EXPECT_THROW(write_image(RgbImage(1, 1), "/nonexistent-dir/x.ppm"), DataError);
}
