#pragma once

#include <optional>
#include <random>
#include <vector>

#include "twostage/data/dataset.hpp"
#include "twostage/errors.hpp"
#include "twostage/nn/tensor.hpp"

namespace twostage {

// Stochastic input augmentation g(x): flip, shift with zero padding, additive noise.
struct AugmentationSpec {
  bool horizontal_flip = false;
  int shift_pixels = 0;
  double gaussian_stddev = 0.0;
  std::optional<ImageShape> image_shape;
  // Per-pixel offset subtracted from the inputs (the normalisation mean).
  // Flip/shift act on x + offset so padding and content move in raw pixel space.
  RowVector offset;

  bool enabled() const { return horizontal_flip || shift_pixels > 0 || gaussian_stddev > 0.0; }

  void validate(std::size_t dim) const {
    if (shift_pixels < 0) throw ArgumentError("shift must be >= 0");
    if (!(gaussian_stddev >= 0.0)) throw ArgumentError("augmentation stddev must be >= 0");
    if ((horizontal_flip || shift_pixels > 0) && !image_shape) {
      throw ArgumentError("flip and shift need an image shape");
    }
    if (image_shape) {
      if (image_shape->size() != dim) throw DimensionError("augmentation image shape does not match features");
      if (static_cast<std::size_t>(shift_pixels) >= image_shape->width ||
          static_cast<std::size_t>(shift_pixels) >= image_shape->height) {
        throw ArgumentError("shift must be smaller than the image");
      }
    }
    if (offset.size() != 0 && static_cast<std::size_t>(offset.size()) != dim) {
      throw DimensionError("augmentation offset does not match features");
    }
  }
};

// The random decisions behind one augmentation.
struct AugmentDraw {
  bool flip = false;
  int dx = 0;  // positive moves content right
  int dy = 0;  // positive moves content down
};

// Applies a fixed draw; noise is not part of the draw.
inline RowVector apply_geometric(const RowVector& x, const ImageShape& shape, const AugmentDraw& draw) {
  const auto h = static_cast<int>(shape.height);
  const auto w = static_cast<int>(shape.width);
  RowVector out = RowVector::Zero(x.size());
  for (std::size_t ch = 0; ch < shape.channels; ++ch) {
    const auto base = static_cast<Eigen::Index>(ch * shape.height * shape.width);
    for (int r = 0; r < h; ++r) {
      const int src_r = r - draw.dy;
      if (src_r < 0 || src_r >= h) continue;
      for (int c = 0; c < w; ++c) {
        int src_c = c - draw.dx;
        if (src_c < 0 || src_c >= w) continue;
        if (draw.flip) src_c = w - 1 - src_c;
        out(base + r * w + c) = x(base + src_r * w + src_c);
      }
    }
  }
  return out;
}

// Flip with probability 1/2, then integer shift uniform in [-s, s] on both
// axes, then additive Gaussian noise. Draws nothing for disabled steps.
inline RowVector augment(const RowVector& x, const AugmentationSpec& spec, Rng& rng) {
  spec.validate(static_cast<std::size_t>(x.size()));
  if (!spec.enabled()) return x;
  RowVector out = x;
  if (spec.horizontal_flip || spec.shift_pixels > 0) {
    AugmentDraw draw;
    if (spec.horizontal_flip) draw.flip = std::bernoulli_distribution(0.5)(rng);
    if (spec.shift_pixels > 0) {
      std::uniform_int_distribution<int> shift(-spec.shift_pixels, spec.shift_pixels);
      draw.dx = shift(rng);
      draw.dy = shift(rng);
    }
    if (spec.offset.size() == 0) {
      out = apply_geometric(out, *spec.image_shape, draw);
    } else {
      out = apply_geometric(out + spec.offset, *spec.image_shape, draw) - spec.offset;
    }
  }
  if (spec.gaussian_stddev > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.gaussian_stddev);
    for (Eigen::Index k = 0; k < out.size(); ++k) out(k) += noise(rng);
  }
  return out;
}

// Row-wise augment over a batch.
inline Tensor augment_batch(const Tensor& batch, const AugmentationSpec& spec, Rng& rng) {
  if (!spec.enabled()) return batch;
  Tensor out(batch.rows(), batch.cols());
  for (Eigen::Index r = 0; r < batch.rows(); ++r) out.row(r) = augment(batch.row(r), spec, rng);
  return out;
}

}  // namespace twostage
