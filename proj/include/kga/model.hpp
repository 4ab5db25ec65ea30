#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kga/tensor.hpp"

namespace kga {

struct Parameter {
  std::string name;
  Tensor tensor;  // leaf with gradient tracking on
};

struct ModelConfig {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t feature_dim = 16;
  std::size_t max_frames = 128;
  // When false, video aggregation is the unweighted frame mean and the
  // attention module is bypassed (the attention-free ablation).
  bool attention_enabled = true;
  std::uint64_t seed = 42;
};

struct VideoForwardOutput {
  Tensor frame_features;      // [N, D]
  Tensor attention_weights;   // [N], the weights actually used to aggregate
  Tensor aggregated_feature;  // [D]
  Tensor video_logits;        // [2]
  Tensor frame_logits;        // [N, 2]
};

// Two-path classifier over a shared fully-connected backbone. The video path
// weights per-frame features by sigmoid attention and sums them; the image
// path feeds a single feature straight to the same head. Both paths read the
// same parameter tensors, so sharing is by identity.
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& param(std::string_view name);

  // [batch, input_dim] -> [batch, D]
  Tensor backbone_forward(const Tensor& x) const;
  // [N, D] -> [N], each weight strictly inside (0, 1)
  Tensor attention_weights(const Tensor& features) const;
  // Weighted sum of frame features (weights are not normalized).
  static Tensor aggregate(const Tensor& features, const Tensor& weights);
  // [batch, D] -> [batch, 2] raw logits
  Tensor head_logits(const Tensor& features) const;

  VideoForwardOutput video_forward(const Tensor& clip) const;
  // Single image: returns (feature [D], logits [2]).
  std::pair<Tensor, Tensor> image_forward(const Tensor& image) const;

  void zero_grads();

  // Flat {name -> shape + values} map, little-endian with magic + version.
  // Round-trips bit-exactly.
  void save_params(std::ostream& out) const;
  void load_params(std::istream& in);

 private:
  const Tensor& p(std::size_t idx) const { return params_[idx].tensor; }

  ModelConfig config_;
  std::vector<Parameter> params_;
};

}  // namespace kga
