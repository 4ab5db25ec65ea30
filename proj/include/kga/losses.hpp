#pragma once

#include <span>
#include <vector>

#include "kga/tensor.hpp"
#include "kga/types.hpp"

namespace kga {

// Per-class feature centers maintained by the delta-rule update; not
// optimizer parameters.
struct ClassCenters {
  std::size_t dim = 0;
  double update_rate = 0.5;  // alpha in (0, 1]
  std::vector<double> benign;
  std::vector<double> malignant;

  ClassCenters() = default;
  ClassCenters(std::size_t dim, double update_rate);

  std::span<const double> of(Label y) const {
    return y == Label::benign ? std::span<const double>(benign)
                              : std::span<const double>(malignant);
  }
  std::span<double> of(Label y) {
    return y == Label::benign ? std::span<double>(benign) : std::span<double>(malignant);
  }
};

// One training step's loss terms. total = ce_video + (ce_image + ce_frame) +
// center + lambda * coherence, and the identity is kept to 1e-12.
struct LossBreakdown {
  double ce_video = 0.0;
  double ce_image = 0.0;
  double ce_frame = 0.0;
  double center = 0.0;
  double coherence = 0.0;
  double total = 0.0;
  double lambda = 1.0;
};

// Mean of -log softmax(logits)[label] over the batch, stabilized by row-max
// subtraction. logits: [K, 2].
Tensor cross_entropy(const Tensor& logits, std::span<const Label> labels);

// (1 / 2K) * sum_k ||f_k - c_{y_k}||^2. Gradient flows into features only.
Tensor center_loss(const Tensor& features, std::span<const Label> labels,
                   const ClassCenters& centers);

// Delta-rule center update: for each class present in the batch,
// c <- c - alpha * (c - class feature mean). Reads feature values only; no
// gradient flows through the update.
void update_centers(const Tensor& features, std::span<const Label> labels,
                    ClassCenters& centers);

// gram(x) = x x^T / ||x||^2: symmetric, rank <= 1, trace 1. Vectors with
// ||x||_2 <= 1e-8 are degenerate and map to the uniform matrix (all 1/N),
// the continuous limit for a direction-free vector.
Tensor gram(const Tensor& x);

// Frobenius distance between gram(1 - w) and gram(d). d is treated as a
// constant target; gradients reach the attention weights only.
Tensor coherence_loss(const Tensor& attention_weights, const Tensor& distances);

// Per-frame Euclidean distance to the labelled class center. The result is a
// detached constant (a guidance target, not a gradient path).
Tensor distances_to_center(const Tensor& frame_features, Label label,
                           const ClassCenters& centers);

// Assembles the training objective. Throws DivergenceError naming the first
// non-finite term. When lambda == 0 the coherence node is left out of the
// graph entirely (its value is still reported by callers).
Tensor total_loss(const Tensor& ce_video, const Tensor& ce_image, const Tensor& ce_frame,
                  const Tensor& center, const Tensor& coherence, double lambda);

}  // namespace kga
