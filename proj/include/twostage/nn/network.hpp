#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "twostage/errors.hpp"
#include "twostage/nn/tensor.hpp"

namespace twostage {

enum class LayerKind : std::uint8_t {
  dense = 1,
  relu = 2,
  dropout = 3,
  gaussian_noise = 4,
  softmax = 5,
};

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::gaussian_noise: return "gaussian-noise";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_dim = 0;   // dense only
  std::size_t out_dim = 0;  // dense only
  double keep_prob = 1.0;   // dropout only
  double stddev = 0.0;      // gaussian-noise only

  static LayerSpec dense(std::size_t in, std::size_t out) {
    return {LayerKind::dense, in, out, 1.0, 0.0};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 1.0, 0.0}; }
  static LayerSpec dropout(double keep) { return {LayerKind::dropout, 0, 0, keep, 0.0}; }
  static LayerSpec gaussian_noise(double sigma) {
    return {LayerKind::gaussian_noise, 0, 0, 1.0, sigma};
  }
  static LayerSpec softmax() { return {LayerKind::softmax, 0, 0, 1.0, 0.0}; }

  bool operator==(const LayerSpec&) const = default;
};

enum class Mode { train, eval };

struct DenseParams {
  Tensor weight;  // in_dim x out_dim
  RowVector bias;  // out_dim
};

class Network;

// Intermediates cached by one forward pass; consumed by Network::backward.
// Dropout masks drawn during the pass are kept here so backward reuses them.
struct Trace {
  const Network* owner = nullptr;
  Mode mode = Mode::eval;
  std::vector<Tensor> layer_inputs;  // input seen by layer i
  std::vector<Tensor> masks;         // dropout multiplier for layer i, empty otherwise
  Tensor logits;
  Tensor output;  // softmax probabilities

  bool empty() const { return owner == nullptr; }
};

// Gradient that Network::backward receives.
enum class GradientOf { probabilities, logits };

// Layered classifier ending in softmax. Parameters live in one DenseParams
// per dense layer; gradients mirror them and accumulate across backward calls
// until zero_grad().
class Network {
 public:
  Network() = default;

  explicit Network(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    validate();
    for (const auto& l : layers_) {
      if (l.kind != LayerKind::dense) continue;
      params_.push_back({Tensor::Zero(static_cast<Eigen::Index>(l.in_dim),
                                      static_cast<Eigen::Index>(l.out_dim)),
                         RowVector::Zero(static_cast<Eigen::Index>(l.out_dim))});
    }
    grads_ = params_;
  }

  // The MLP used for MNIST: optional input noise, then `hidden` blocks of
  // dense -> relu -> dropout, then dense -> softmax.
  static Network mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                     std::size_t classes, double keep_prob, double input_noise) {
    std::vector<LayerSpec> specs;
    if (input_noise > 0.0) specs.push_back(LayerSpec::gaussian_noise(input_noise));
    std::size_t prev = input_dim;
    for (std::size_t h : hidden) {
      specs.push_back(LayerSpec::dense(prev, h));
      specs.push_back(LayerSpec::relu());
      if (keep_prob < 1.0) specs.push_back(LayerSpec::dropout(keep_prob));
      prev = h;
    }
    specs.push_back(LayerSpec::dense(prev, classes));
    specs.push_back(LayerSpec::softmax());
    return Network(std::move(specs));
  }

  // Fan-in scaled uniform init: limit sqrt(6/fan_in) ahead of a relu,
  // sqrt(3/fan_in) otherwise. Biases start at zero.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    std::size_t p = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].kind != LayerKind::dense) continue;
      const bool feeds_relu = i + 1 < layers_.size() && layers_[i + 1].kind == LayerKind::relu;
      const double fan_in = static_cast<double>(layers_[i].in_dim);
      const double limit = std::sqrt((feeds_relu ? 6.0 : 3.0) / fan_in);
      std::uniform_real_distribution<double> dist(-limit, limit);
      auto& w = params_[p].weight;
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
      }
      params_[p].bias.setZero();
      ++p;
    }
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<DenseParams>& params() { return params_; }
  const std::vector<DenseParams>& params() const { return params_; }
  std::vector<DenseParams>& grads() { return grads_; }
  const std::vector<DenseParams>& grads() const { return grads_; }

  std::size_t input_dim() const { return first_dense().in_dim; }
  std::size_t class_count() const { return last_dense().out_dim; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.weight.size() + p.bias.size());
    return n;
  }

  void zero_grad() {
    for (auto& g : grads_) {
      g.weight.setZero();
      g.bias.setZero();
    }
  }

  // Runs the batch through every layer. In train mode, dropout masks and
  // Gaussian perturbations are drawn from `rng`; layers whose stochasticity
  // is disabled (keep 1, stddev 0) draw nothing.
  Trace forward(const Tensor& batch, Mode mode, Rng* rng = nullptr) const {
    if (static_cast<std::size_t>(batch.cols()) != input_dim()) {
      throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                           " columns, network expects " + std::to_string(input_dim()));
    }
    if (mode == Mode::train && rng == nullptr && has_active_stochastic_layer()) {
      throw ArgumentError("forward: train mode requires an rng");
    }
    check_parameters_finite();

    Trace trace;
    trace.owner = this;
    trace.mode = mode;
    trace.layer_inputs.resize(layers_.size());
    trace.masks.resize(layers_.size());

    Tensor x = batch;
    std::size_t p = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      trace.layer_inputs[i] = x;
      switch (l.kind) {
        case LayerKind::dense: {
          Tensor y = x * params_[p].weight;
          y.rowwise() += params_[p].bias;
          x = std::move(y);
          ++p;
          break;
        }
        case LayerKind::relu:
          x = x.cwiseMax(0.0);
          break;
        case LayerKind::dropout:
          if (mode == Mode::train && l.keep_prob < 1.0) {
            std::bernoulli_distribution keep(l.keep_prob);
            Tensor mask(x.rows(), x.cols());
            const double scale = 1.0 / l.keep_prob;
            for (Eigen::Index k = 0; k < mask.size(); ++k) {
              mask.data()[k] = keep(*rng) ? scale : 0.0;
            }
            x = x.cwiseProduct(mask);
            trace.masks[i] = std::move(mask);
          }
          break;
        case LayerKind::gaussian_noise:
          if (mode == Mode::train && l.stddev > 0.0) {
            std::normal_distribution<double> noise(0.0, l.stddev);
            for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] += noise(*rng);
          }
          break;
        case LayerKind::softmax:
          trace.logits = x;
          x = softmax_rows(x);
          break;
      }
    }
    trace.output = std::move(x);
    return trace;
  }

  // Eval-mode class probabilities, processed in chunks to bound memory.
  Tensor predict(const Tensor& features, Eigen::Index chunk = 2048) const {
    Tensor out(features.rows(), static_cast<Eigen::Index>(class_count()));
    for (Eigen::Index start = 0; start < features.rows(); start += chunk) {
      const Eigen::Index len = std::min(chunk, features.rows() - start);
      Trace t = forward(features.middleRows(start, len), Mode::eval);
      out.middleRows(start, len) = t.output;
    }
    return out;
  }

  // Accumulates parameter gradients for the pass recorded in `trace`.
  // Returns the gradient with respect to the network input.
  Tensor backward(const Trace& trace, const Tensor& grad, GradientOf of = GradientOf::probabilities) {
    if (trace.empty() || trace.owner != this || trace.layer_inputs.size() != layers_.size()) {
      throw StateError("backward: no matching forward pass for this network");
    }
    require_same_shape(trace.output, grad, "backward");

    Tensor g = of == GradientOf::probabilities ? softmax_backward(trace.output, grad) : grad;
    std::size_t p = params_.size();
    // The softmax layer is last; its gradient has been applied above.
    for (std::size_t i = layers_.size() - 1; i-- > 0;) {
      const auto& l = layers_[i];
      const Tensor& in = trace.layer_inputs[i];
      switch (l.kind) {
        case LayerKind::dense: {
          --p;
          grads_[p].weight.noalias() += in.transpose() * g;
          grads_[p].bias += g.colwise().sum();
          Tensor gin = g * params_[p].weight.transpose();
          g = std::move(gin);
          break;
        }
        case LayerKind::relu:
          g = (in.array() > 0.0).select(g, 0.0);
          break;
        case LayerKind::dropout:
          if (trace.masks[i].size() != 0) g = g.cwiseProduct(trace.masks[i]);
          break;
        case LayerKind::gaussian_noise:
        case LayerKind::softmax:
          break;
      }
    }
    return g;
  }

  // Flat views used by gradient checks and checkpoint comparisons. Order:
  // per dense layer, weight (row-major) then bias.
  Eigen::VectorXd flat_parameters() const { return flatten(params_); }
  Eigen::VectorXd flat_gradients() const { return flatten(grads_); }

  void set_flat_parameters(const Eigen::VectorXd& flat) {
    if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
      throw DimensionError("set_flat_parameters: size mismatch");
    }
    Eigen::Index k = 0;
    for (auto& p : params_) {
      std::copy_n(flat.data() + k, p.weight.size(), p.weight.data());
      k += p.weight.size();
      std::copy_n(flat.data() + k, p.bias.size(), p.bias.data());
      k += p.bias.size();
    }
  }

  bool has_active_stochastic_layer() const {
    return std::any_of(layers_.begin(), layers_.end(), [](const LayerSpec& l) {
      return (l.kind == LayerKind::dropout && l.keep_prob < 1.0) ||
             (l.kind == LayerKind::gaussian_noise && l.stddev > 0.0);
    });
  }

 private:
  static Eigen::VectorXd flatten(const std::vector<DenseParams>& ps) {
    Eigen::Index n = 0;
    for (const auto& p : ps) n += p.weight.size() + p.bias.size();
    Eigen::VectorXd out(n);
    Eigen::Index k = 0;
    for (const auto& p : ps) {
      std::copy_n(p.weight.data(), p.weight.size(), out.data() + k);
      k += p.weight.size();
      std::copy_n(p.bias.data(), p.bias.size(), out.data() + k);
      k += p.bias.size();
    }
    return out;
  }

  const LayerSpec& first_dense() const {
    for (const auto& l : layers_) {
      if (l.kind == LayerKind::dense) return l;
    }
    throw StateError("network has no dense layer");
  }

  const LayerSpec& last_dense() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      if (it->kind == LayerKind::dense) return *it;
    }
    throw StateError("network has no dense layer");
  }

  void check_parameters_finite() const {
    for (const auto& p : params_) {
      if (!p.weight.allFinite() || !p.bias.allFinite()) {
        throw NumericError("network parameters contain non-finite values");
      }
    }
  }

  void validate() const {
    if (layers_.empty() || layers_.back().kind != LayerKind::softmax) {
      throw ArgumentError("network must end with a softmax layer");
    }
    std::size_t width = 0;
    bool seen_dense = false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      switch (l.kind) {
        case LayerKind::dense:
          if (l.in_dim == 0 || l.out_dim == 0) throw ArgumentError("dense layer with zero width");
          if (seen_dense && l.in_dim != width) {
            throw DimensionError("dense layer " + std::to_string(i) + " expects " +
                                 std::to_string(l.in_dim) + " inputs but receives " +
                                 std::to_string(width));
          }
          width = l.out_dim;
          seen_dense = true;
          break;
        case LayerKind::dropout:
          if (!(l.keep_prob > 0.0 && l.keep_prob <= 1.0)) {
            throw ArgumentError("dropout keep probability must be in (0, 1]");
          }
          break;
        case LayerKind::gaussian_noise:
          if (!(l.stddev >= 0.0)) throw ArgumentError("gaussian-noise stddev must be >= 0");
          break;
        case LayerKind::softmax:
          if (i + 1 != layers_.size()) throw ArgumentError("softmax must be the final layer");
          break;
        case LayerKind::relu:
          break;
      }
    }
    if (!seen_dense) throw ArgumentError("network needs at least one dense layer");
  }

  std::vector<LayerSpec> layers_;
  std::vector<DenseParams> params_;
  std::vector<DenseParams> grads_;
};

// Same parameters, with the leading gaussian-noise layer set to `stddev`
// (inserted when absent, removed when stddev is 0).
inline Network with_input_noise(const Network& net, double stddev) {
  std::vector<LayerSpec> specs = net.layers();
  if (!specs.empty() && specs.front().kind == LayerKind::gaussian_noise) specs.erase(specs.begin());
  if (stddev > 0.0) specs.insert(specs.begin(), LayerSpec::gaussian_noise(stddev));
  Network out(std::move(specs));
  out.params() = net.params();
  return out;
}

// Shape of the MLP family used throughout: hidden widths, dropout keep
// probability after each hidden block, and input Gaussian-noise stddev.
struct MlpSpec {
  std::vector<std::size_t> hidden{128, 128};
  double keep_prob = 0.8;
  double input_noise = 0.0;

  Network build(std::size_t input_dim, std::size_t classes, std::uint64_t seed) const {
    Network net = Network::mlp(input_dim, hidden, classes, keep_prob, input_noise);
    net.initialize(seed);
    return net;
  }
};

}  // namespace twostage
