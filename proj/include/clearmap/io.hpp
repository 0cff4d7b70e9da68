#pragma once

// File formats: IDX datasets (MNIST distribution format), the CLRW parameter
// container, and binary PPM images.
//
// CLRW layout, all integers little-endian:
//   "CLRW" | u32 version (=1) | u64 spec hash | u32 section count | sections...
//   section: 4-byte tag | u32 element bytes (4 or 8) | u32 flags | u32 dims[4] | payload
//   "CONV": dims = (out, in, kh, kw); payload = weights then out biases
//   "RESP": dims = (classes, channels, height, width); flags = 1 rectified,
//           0 linear; payload = the response maps in class order
// Payload values are IEEE-754 binary64 (element bytes 8) or binary32 (4),
// widened to double on load.

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clearmap/error.hpp"
#include "clearmap/net.hpp"
#include "clearmap/tensor.hpp"

namespace clearmap {

static_assert(std::endian::native == std::endian::little,
              "the CLRW reader/writer assumes a little-endian host");

struct Dataset {
  std::vector<Tensor> images;  // values in [0, 1]
  std::vector<std::size_t> labels;
  std::string name;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }
};

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t* at(std::size_t y, std::size_t x) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const { return &pixels[(y * width + x) * 3]; }
  void set(std::size_t y, std::size_t x, std::array<std::uint8_t, 3> rgb) {
    std::memcpy(at(y, x), rgb.data(), 3);
  }
  std::array<std::uint8_t, 3> get(std::size_t y, std::size_t x) const {
    const auto* p = at(y, x);
    return {p[0], p[1], p[2]};
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Reads an IDX image file. Pixel bytes are scaled by 1/255; this is the only
// place raw pixels are normalised.
inline std::vector<Tensor> load_idx_images(const std::string& path) {
  const auto img = detail::read_file(path);
  if (img.size() < 16) throw TruncatedError("IDX image header truncated in '" + path + "'");
  if (detail::read_be32(img, 0) != kIdxImagesMagic) throw FormatError("bad IDX image magic in '" + path + "'");
  const std::size_t n = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t plane = rows * cols;
  if (img.size() - 16 < n * plane) throw TruncatedError("IDX image payload truncated in '" + path + "'");
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(Shape{1, rows, cols});
    const std::uint8_t* src = img.data() + 16 + i * plane;
    for (std::size_t p = 0; p < plane; ++p) t[p] = static_cast<double>(src[p]) / 255.0;
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<std::size_t> load_idx_labels(const std::string& path) {
  const auto lab = detail::read_file(path);
  if (lab.size() < 8) throw TruncatedError("IDX label header truncated in '" + path + "'");
  if (detail::read_be32(lab, 0) != kIdxLabelsMagic) throw FormatError("bad IDX label magic in '" + path + "'");
  const std::size_t n = detail::read_be32(lab, 4);
  if (lab.size() - 8 < n) throw TruncatedError("IDX label payload truncated in '" + path + "'");
  return std::vector<std::size_t>(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

inline Dataset load_idx_pair(const std::string& images_path, const std::string& labels_path) {
  Dataset ds;
  ds.name = images_path;
  ds.images = load_idx_images(images_path);
  ds.labels = load_idx_labels(labels_path);
  if (ds.images.size() != ds.labels.size()) {
    throw CountMismatchError("IDX image count " + std::to_string(ds.images.size()) +
                             " differs from label count " + std::to_string(ds.labels.size()));
  }
  return ds;
}

// First `n` samples (all of them when n is 0 or larger than the set).
inline Dataset take(const Dataset& ds, std::size_t n) {
  if (n == 0 || n >= ds.size()) return ds;
  Dataset out;
  out.name = ds.name;
  out.images.assign(ds.images.begin(), ds.images.begin() + static_cast<std::ptrdiff_t>(n));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

// ---------------------------------------------------------------------------
// CLRW container

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> b) : buf_(std::move(b)) {}
  bool has(std::size_t n) const { return pos_ + n <= buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void read(void* dst, std::size_t n) {
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    read(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    read(&v, 8);
    return v;
  }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

inline constexpr std::uint32_t kClrwVersion = 1;

struct SectionHeader {
  std::array<char, 4> tag{};
  std::uint32_t element_bytes = 0;
  std::uint32_t flags = 0;
  std::array<std::uint32_t, 4> dims{};
};

inline void write_header(ByteWriter& w, std::uint64_t hash, std::uint32_t sections) {
  w.bytes("CLRW", 4);
  w.u32(kClrwVersion);
  w.u64(hash);
  w.u32(sections);
}

inline std::uint64_t read_header(ByteReader& r, const std::string& path, std::uint32_t& sections) {
  if (!r.has(20)) throw TruncatedError("CLRW header truncated in '" + path + "'");
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, "CLRW", 4) != 0) throw FormatError("'" + path + "' is not a CLRW file");
  const std::uint32_t version = r.u32();
  if (version != kClrwVersion) {
    throw FormatError("unsupported CLRW version " + std::to_string(version));
  }
  const std::uint64_t hash = r.u64();
  sections = r.u32();
  return hash;
}

inline SectionHeader read_section_header(ByteReader& r, const std::string& what) {
  if (!r.has(28)) throw TruncatedError("truncated weight file: " + what + " header ends early");
  SectionHeader h;
  r.read(h.tag.data(), 4);
  h.element_bytes = r.u32();
  h.flags = r.u32();
  for (auto& d : h.dims) d = r.u32();
  if (h.element_bytes != 4 && h.element_bytes != 8) {
    throw FormatError(what + ": unsupported element size " + std::to_string(h.element_bytes));
  }
  return h;
}

inline std::vector<double> read_values(ByteReader& r, std::size_t count, std::uint32_t element_bytes,
                                       const std::string& what) {
  if (!r.has(count * element_bytes)) {
    throw TruncatedError("truncated weight file: " + what + " payload ends early (needs " +
                         std::to_string(count * element_bytes) + " bytes, " +
                         std::to_string(r.remaining()) + " left)");
  }
  std::vector<double> out(count);
  for (auto& v : out) {
    if (element_bytes == 8) {
      r.read(&v, 8);
    } else {
      float f;
      r.read(&f, 4);
      v = static_cast<double>(f);
    }
  }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_weights(const Network& net) {
  detail::ByteWriter w;
  detail::write_header(w, spec_hash(net.spec()), static_cast<std::uint32_t>(net.params().size()));
  for (const auto& k : net.params()) {
    w.bytes("CONV", 4);
    w.u32(8);
    w.u32(0);
    w.u32(static_cast<std::uint32_t>(k.out_channels));
    w.u32(static_cast<std::uint32_t>(k.in_channels));
    w.u32(static_cast<std::uint32_t>(k.kernel_h));
    w.u32(static_cast<std::uint32_t>(k.kernel_w));
    for (double v : k.weights) w.f64(v);
    for (double v : k.bias) w.f64(v);
  }
  return w.buffer();
}

inline void save_weights(const Network& net, const std::string& path) {
  detail::write_file(path, serialize_weights(net));
}

// Builds a Network for `spec` from a CLRW file. The file's spec hash must
// match unless `ignore_hash` is set.
inline Network load_weights(const NetworkSpec& spec, const std::string& path, bool ignore_hash = false) {
  detail::ByteReader r(detail::read_file(path));
  std::uint32_t sections = 0;
  const std::uint64_t hash = detail::read_header(r, path, sections);
  if (!ignore_hash && hash != spec_hash(spec)) {
    throw HashMismatchError("weight file '" + path + "' was saved for a different network spec");
  }
  Network net(spec);
  if (sections != net.params().size()) {
    throw WeightShapeError("weight file has " + std::to_string(sections) + " conv layers, network has " +
                           std::to_string(net.params().size()));
  }
  for (std::size_t i = 0; i < sections; ++i) {
    auto& k = net.params()[i];
    const std::string what = "layer " + std::to_string(i) + " (conv " + std::to_string(k.kernel_h) +
                             "x" + std::to_string(k.kernel_w) + "x" + std::to_string(k.out_channels) + ")";
    const auto h = detail::read_section_header(r, what);
    if (std::memcmp(h.tag.data(), "CONV", 4) != 0) throw FormatError(what + ": expected a CONV section");
    if (h.dims[0] != k.out_channels || h.dims[1] != k.in_channels || h.dims[2] != k.kernel_h ||
        h.dims[3] != k.kernel_w) {
      throw WeightShapeError(what + ": stored shape " + std::to_string(h.dims[0]) + "x" +
                             std::to_string(h.dims[1]) + "x" + std::to_string(h.dims[2]) + "x" +
                             std::to_string(h.dims[3]) + " does not match the network");
    }
    k.weights = detail::read_values(r, k.weight_count(), h.element_bytes, what);
    k.bias = detail::read_values(r, k.out_channels, h.element_bytes, what);
  }
  return net;
}

// ---------------------------------------------------------------------------
// PPM

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  if (img.width == 0 || img.height == 0) throw ArgumentError("cannot encode an empty image");
  if (img.pixels.size() != img.width * img.height * 3) throw ArgumentError("image pixel buffer has the wrong size");
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline void write_image(const RgbImage& img, const std::string& path) {
  detail::write_file(path, encode_ppm(img));
}

// Reads the P6 files written by write_image (maxval 255, single whitespace
// after the header, no comments).
inline RgbImage read_ppm(const std::string& path) {
  const auto bytes = detail::read_file(path);
  std::string head;
  std::size_t pos = 0;
  std::vector<std::string> fields;
  while (fields.size() < 4 && pos < bytes.size()) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string f;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) f.push_back(static_cast<char>(bytes[pos++]));
    if (!f.empty()) fields.push_back(f);
  }
  if (fields.size() != 4 || fields[0] != "P6" || fields[3] != "255" || pos >= bytes.size()) {
    throw FormatError("'" + path + "' is not a supported P6 PPM");
  }
  ++pos;
  RgbImage img(std::stoul(fields[1]), std::stoul(fields[2]));
  if (bytes.size() - pos != img.pixels.size()) throw TruncatedError("PPM payload size mismatch in '" + path + "'");
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), img.pixels.begin());
  return img;
}

}  // namespace clearmap
