#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "twostage/nn/network.hpp"

namespace testing_support {

using twostage::Network;
using twostage::Rng;
using twostage::Tensor;

inline Tensor random_tensor(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(rows, cols);
  for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = n(rng);
  return t;
}

inline Tensor random_probs(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return twostage::softmax_rows(random_tensor(rows, cols, rng, 2.0));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("twostage_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// Test-only IDX writer: images as raw bytes (rows*cols each).
inline void write_idx(const std::string& images_path, const std::string& labels_path,
                      const std::vector<std::vector<unsigned char>>& images, std::uint32_t rows, std::uint32_t cols,
                      const std::vector<unsigned char>& labels, std::uint32_t image_magic = 0x803,
                      std::uint32_t label_magic = 0x801) {
  std::ofstream img(images_path, std::ios::binary);
  put_be32(img, image_magic);
  put_be32(img, static_cast<std::uint32_t>(images.size()));
  put_be32(img, rows);
  put_be32(img, cols);
  for (const auto& im : images) img.write(reinterpret_cast<const char*>(im.data()), static_cast<std::streamsize>(im.size()));
  std::ofstream lab(labels_path, std::ios::binary);
  put_be32(lab, label_magic);
  put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

struct GradCheck {
  double worst = 0.0;        // largest relative error among checked coordinates
  std::size_t checked = 0;
  std::size_t skipped = 0;   // coordinates whose perturbation crossed a relu kink
};

// Signs of every relu input for one evaluation; used to skip coordinates
// where +/- h lands on different sides of a kink.
using KinkProbe = std::function<std::vector<bool>()>;

// Central differences of `loss` over every parameter of `net`, compared with
// `analytic` (flat, same order as flat_parameters()).
inline GradCheck check_gradient(Network& net, const Eigen::VectorXd& analytic, const std::function<double()>& loss,
                                const KinkProbe& kinks = {}, double h = 1e-5) {
  GradCheck out;
  const Eigen::VectorXd theta = net.flat_parameters();
  const std::vector<bool> base = kinks ? kinks() : std::vector<bool>{};
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd t = theta;
    t[k] = theta[k] + h;
    net.set_flat_parameters(t);
    const double up = loss();
    const auto sig_up = kinks ? kinks() : std::vector<bool>{};
    t[k] = theta[k] - h;
    net.set_flat_parameters(t);
    const double down = loss();
    const auto sig_down = kinks ? kinks() : std::vector<bool>{};
    net.set_flat_parameters(theta);
    if (kinks && (sig_up != base || sig_down != base)) {
      ++out.skipped;
      continue;
    }
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[k];
    // Below 1e-6 the difference quotient is dominated by rounding (eps * |loss| / h).
    const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
    const double rel = std::abs(a - numeric) / scale;
    out.worst = std::max(out.worst, rel);
    ++out.checked;
  }
  return out;
}

// Relu-input sign pattern of one train-mode forward.
inline std::vector<bool> relu_signature(const Network& net, const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  const auto trace = net.forward(x, twostage::Mode::train, &rng);
  std::vector<bool> sig;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (net.layers()[i].kind != twostage::LayerKind::relu) continue;
    const Tensor& in = trace.layer_inputs[i];
    for (Eigen::Index k = 0; k < in.size(); ++k) sig.push_back(in.data()[k] > 0.0);
  }
  return sig;
}

}  // namespace testing_support
