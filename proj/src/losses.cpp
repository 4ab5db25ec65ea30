#include "kga/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kga {

namespace {

constexpr double kGramDegenerateEps = 1e-8;

void check_labels(std::span<const Label> labels, std::size_t expected, const char* op) {
  if (labels.size() != expected)
    throw ShapeError(std::string(op) + ": got " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(expected) + " rows");
}

}  // namespace

ClassCenters::ClassCenters(std::size_t dim, double update_rate)
    : dim(dim), update_rate(update_rate), benign(dim, 0.0), malignant(dim, 0.0) {
  if (dim == 0) throw ContractError("ClassCenters: dim must be positive");
  if (!(update_rate > 0.0 && update_rate <= 1.0))
    throw ContractError("ClassCenters: update_rate must be in (0, 1]");
}

Tensor cross_entropy(const Tensor& logits, std::span<const Label> labels) {
  if (logits.shape().size() != 2 || logits.dim(1) != 2)
    throw ShapeError("cross_entropy: logits must be [K, 2], got " + shape_str(logits.shape()));
  const std::size_t k = logits.dim(0);
  if (k == 0) throw ContractError("cross_entropy: empty batch");
  check_labels(labels, k, "cross_entropy");

  const auto ld = logits.data();
  std::vector<double> softmax(2 * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double l0 = ld[2 * i], l1 = ld[2 * i + 1];
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const double z = e0 + e1;
    softmax[2 * i] = e0 / z;
    softmax[2 * i + 1] = e1 / z;
    const double picked = labels[i] == Label::benign ? l0 : l1;
    loss += m + std::log(z) - picked;
  }
  loss /= static_cast<double>(k);

  std::vector<Label> owned_labels(labels.begin(), labels.end());
  return Tensor::make_op(
      Shape{}, {loss}, {logits},
      [k, softmax = std::move(softmax), owned_labels = std::move(owned_labels)](
          std::span<const double> g, std::vector<Tensor>& ps) {
        if (!ps[0].tracked()) return;
        const double s = g[0] / static_cast<double>(k);
        std::vector<double> gl(2 * k);
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t y = label_index(owned_labels[i]);
          gl[2 * i] = s * (softmax[2 * i] - (y == 0 ? 1.0 : 0.0));
          gl[2 * i + 1] = s * (softmax[2 * i + 1] - (y == 1 ? 1.0 : 0.0));
        }
        ps[0].accumulate_grad(gl);
      });
}

Tensor center_loss(const Tensor& features, std::span<const Label> labels,
                   const ClassCenters& centers) {
  if (features.shape().size() != 2)
    throw ShapeError("center_loss: features must be [K, D], got " + shape_str(features.shape()));
  const std::size_t k = features.dim(0), d = features.dim(1);
  if (k == 0) throw ContractError("center_loss: empty batch");
  if (d != centers.dim)
    throw ShapeError("center_loss: feature dim " + std::to_string(d) +
                     " does not match center dim " + std::to_string(centers.dim));
  check_labels(labels, k, "center_loss");

  const auto fd = features.data();
  // Offsets are cached for the backward rule; centers are constants here.
  std::vector<double> offsets(k * d);
  double loss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto c = centers.of(labels[i]);
    for (std::size_t j = 0; j < d; ++j) {
      const double off = fd[i * d + j] - c[j];
      offsets[i * d + j] = off;
      loss += off * off;
    }
  }
  loss /= 2.0 * static_cast<double>(k);

  return Tensor::make_op(Shape{}, {loss}, {features},
                         [k, offsets = std::move(offsets)](std::span<const double> g,
                                                           std::vector<Tensor>& ps) {
                           if (!ps[0].tracked()) return;
                           const double s = g[0] / static_cast<double>(k);
                           std::vector<double> gf(offsets.size());
                           for (std::size_t i = 0; i < gf.size(); ++i) gf[i] = s * offsets[i];
                           ps[0].accumulate_grad(gf);
                         });
}

void update_centers(const Tensor& features, std::span<const Label> labels,
                    ClassCenters& centers) {
  if (features.shape().size() != 2 || features.dim(1) != centers.dim)
    throw ShapeError("update_centers: features must be [K, " + std::to_string(centers.dim) +
                     "], got " + shape_str(features.shape()));
  const std::size_t k = features.dim(0), d = features.dim(1);
  check_labels(labels, k, "update_centers");
  const auto fd = features.data();

  for (const Label y : {Label::benign, Label::malignant}) {
    std::vector<double> mean(d, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (labels[i] != y) continue;
      ++count;
      for (std::size_t j = 0; j < d; ++j) mean[j] += fd[i * d + j];
    }
    if (count == 0) continue;  // class absent: center unchanged
    auto c = centers.of(y);
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t j = 0; j < d; ++j)
      c[j] -= centers.update_rate * (c[j] - mean[j] * inv);
  }
}

Tensor gram(const Tensor& x) {
  if (x.shape().size() != 1)
    throw ShapeError("gram: expects a 1-d tensor, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  if (n == 0) throw ContractError("gram: empty vector");
  double sq = 0.0;
  for (const double v : x.data()) sq += v * v;
  if (std::sqrt(sq) <= kGramDegenerateEps)
    return Tensor::full(Shape{n, n}, 1.0 / static_cast<double>(n));
  return div(outer(x, x), sum(mul(x, x)));
}

Tensor coherence_loss(const Tensor& attention_weights, const Tensor& distances) {
  if (attention_weights.shape().size() != 1 || distances.shape().size() != 1 ||
      attention_weights.dim(0) != distances.dim(0))
    throw ShapeError("coherence_loss: weight/distance shapes " +
                     shape_str(attention_weights.shape()) + " and " +
                     shape_str(distances.shape()) + " must be equal-length vectors");
  if (attention_weights.numel() == 0) throw ContractError("coherence_loss: empty vectors");
  const std::size_t n = attention_weights.dim(0);
  // Low distance should mean high attention, so the weight gram is built
  // from the flipped vector 1 - w.
  const Tensor flipped = sub(Tensor::full(Shape{n}, 1.0), attention_weights);
  const Tensor gram_w = gram(flipped);
  const Tensor gram_d = gram(distances.detach());
  return l2_norm(flatten(sub(gram_w, gram_d)));
}

Tensor distances_to_center(const Tensor& frame_features, Label label,
                           const ClassCenters& centers) {
  if (frame_features.shape().size() != 2 || frame_features.dim(1) != centers.dim)
    throw ShapeError("distances_to_center: features must be [N, " +
                     std::to_string(centers.dim) + "], got " +
                     shape_str(frame_features.shape()));
  const std::size_t n = frame_features.dim(0), d = frame_features.dim(1);
  const auto fd = frame_features.data();
  const auto c = centers.of(label);
  std::vector<double> dist(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double off = fd[i * d + j] - c[j];
      sq += off * off;
    }
    dist[i] = std::sqrt(sq);
  }
  return Tensor::from(Shape{n}, std::move(dist));
}

Tensor total_loss(const Tensor& ce_video, const Tensor& ce_image, const Tensor& ce_frame,
                  const Tensor& center, const Tensor& coherence, double lambda) {
  const struct {
    const char* name;
    const Tensor& t;
  } parts[] = {{"ce_video", ce_video},
               {"ce_image", ce_image},
               {"ce_frame", ce_frame},
               {"center", center},
               {"coherence", coherence}};
  for (const auto& p : parts) {
    if (!std::isfinite(p.t.value()))
      throw DivergenceError(std::string("non-finite loss term '") + p.name +
                            "': " + std::to_string(p.t.value()));
  }
  Tensor total = add(add(add(ce_video, ce_image), ce_frame), center);
  if (lambda != 0.0) total = add(total, scale(coherence, lambda));
  return total;
}

}  // namespace kga
