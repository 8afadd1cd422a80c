#pragma once

// Loaders for the MNIST IDX binary format and the CIFAR-10 binary batches.
//
// IDX images (big-endian):
//   0000  u32  0x00000803  magic
//   0004  u32  n           image count
//   0008  u32  rows
//   0012  u32  cols
//   0016  u8[n*rows*cols]  pixels, row-major per image
// IDX labels:
//   0000  u32  0x00000801  magic
//   0004  u32  n           label count
//   0008  u8[n]            labels

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "twostage/data/dataset.hpp"
#include "twostage/errors.hpp"

namespace twostage {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw IoError("'" + path + "' is truncated (header)");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace detail

// Loads an IDX image/label pair. Pixels are scaled by 1/255 into [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  if (detail::read_be32(img, 0, images_path) != kIdxImageMagic) {
    throw FormatError("'" + images_path + "' is not an IDX image file (bad magic)");
  }
  if (detail::read_be32(lab, 0, labels_path) != kIdxLabelMagic) {
    throw FormatError("'" + labels_path + "' is not an IDX label file (bad magic)");
  }
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw ConsistencyError("image count " + std::to_string(n) + " differs from label count " +
                           std::to_string(n_labels));
  }
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) throw IoError("'" + images_path + "' is truncated");
  if (lab.size() < 8 + n) throw IoError("'" + labels_path + "' is truncated");

  Tensor x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const unsigned char* px = img.data() + 16;
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = static_cast<double>(px[k]) / 255.0;
  std::vector<int> y(n);
  int top = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = lab[8 + i];
    top = std::max(top, y[i]);
  }
  Dataset out(std::move(x), std::move(y), std::max(10, top + 1),
              std::filesystem::path(images_path).filename().string());
  out.image_shape = ImageShape{rows, cols, 1};
  return out;
}

// MNIST train or test split from a directory holding the four standard files.
inline Dataset load_mnist(const std::string& dir, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  const auto base = std::filesystem::path(dir);
  Dataset d = load_idx((base / (prefix + "-images-idx3-ubyte")).string(),
                       (base / (prefix + "-labels-idx1-ubyte")).string());
  d.name = train ? "mnist-train" : "mnist-test";
  return d;
}

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (1024 red, 1024 green, 1024 blue, each 32x32 row-major).
inline Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
  constexpr std::size_t kRecord = 1 + 3072;
  std::vector<unsigned char> all;
  for (const auto& p : batch_paths) {
    auto b = detail::read_file(p);
    if (b.size() % kRecord != 0) throw IoError("'" + p + "' is truncated");
    all.insert(all.end(), b.begin(), b.end());
  }
  const std::size_t n = all.size() / kRecord;
  Tensor x(static_cast<Eigen::Index>(n), 3072);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + i * kRecord;
    if (rec[0] > 9) throw FormatError("CIFAR-10 label out of range");
    y[i] = rec[0];
    for (std::size_t k = 0; k < 3072; ++k) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rec[1 + k] / 255.0;
    }
  }
  Dataset out(std::move(x), std::move(y), 10, "cifar10");
  out.image_shape = ImageShape{32, 32, 3};
  return out;
}

}  // namespace twostage
