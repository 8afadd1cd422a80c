#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//
//   offset  size  field
//   0       4     magic "TSCK"
//   4       1     version (1)
//   5       4     u32 layer count L
//   then L layer records:
//           1     u8 kind (1 dense, 2 relu, 3 dropout, 4 gaussian-noise, 5 softmax)
//           8     dense: u32 in_dim, u32 out_dim
//           8     dropout: f64 keep probability
//           8     gaussian-noise: f64 stddev
//   then, for each dense layer in order:
//           8*in*out  f64 weights, row-major (in_dim rows, out_dim columns)
//           8*out     f64 bias

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "twostage/errors.hpp"
#include "twostage/nn/network.hpp"

namespace twostage {

inline constexpr std::array<char, 4> kCheckpointMagic{'T', 'S', 'C', 'K'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes_.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int k = 0; k < 8; ++k) bytes_.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t{static_cast<unsigned char>(p[k])} << (8 * k);
    return v;
  }
  double f64() {
    const char* p = take(8);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= std::uint64_t{static_cast<unsigned char>(p[k])} << (8 * k);
    return std::bit_cast<double>(bits);
  }
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint '" + source_ + "' is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<char>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Network& net) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    switch (l.kind) {
      case LayerKind::dense:
        w.u32(static_cast<std::uint32_t>(l.in_dim));
        w.u32(static_cast<std::uint32_t>(l.out_dim));
        break;
      case LayerKind::dropout: w.f64(l.keep_prob); break;
      case LayerKind::gaussian_noise: w.f64(l.stddev); break;
      case LayerKind::relu:
      case LayerKind::softmax: break;
    }
  }
  for (const auto& p : net.params()) {
    for (Eigen::Index k = 0; k < p.weight.size(); ++k) w.f64(p.weight.data()[k]);
    for (Eigen::Index k = 0; k < p.bias.size(); ++k) w.f64(p.bias.data()[k]);
  }
  return w.bytes();
}

inline Network decode_checkpoint(const std::vector<char>& bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  if (std::memcmp(r.take(4), kCheckpointMagic.data(), 4) != 0) {
    throw FormatError("'" + source + "' is not a checkpoint (bad magic)");
  }
  const auto version = r.u8();
  if (version != kCheckpointVersion) {
    throw FormatError("'" + source + "' has unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<LayerSpec> specs;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = r.u8();
    switch (kind) {
      case 1: {
        const auto in = r.u32();
        const auto out = r.u32();
        specs.push_back(LayerSpec::dense(in, out));
        break;
      }
      case 2: specs.push_back(LayerSpec::relu()); break;
      case 3: specs.push_back(LayerSpec::dropout(r.f64())); break;
      case 4: specs.push_back(LayerSpec::gaussian_noise(r.f64())); break;
      case 5: specs.push_back(LayerSpec::softmax()); break;
      default: throw FormatError("'" + source + "' has unknown layer kind " + std::to_string(kind));
    }
  }
  Network net(std::move(specs));
  for (auto& p : net.params()) {
    for (Eigen::Index k = 0; k < p.weight.size(); ++k) p.weight.data()[k] = r.f64();
    for (Eigen::Index k = 0; k < p.bias.size(); ++k) p.bias.data()[k] = r.f64();
  }
  if (!r.at_end()) throw FormatError("'" + source + "' has trailing bytes");
  return net;
}

inline void save_checkpoint(const Network& net, const std::string& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

}  // namespace twostage
