#include "kga/model.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "kga/io_util.hpp"
#include "kga/rng.hpp"

namespace kga {

namespace {

constexpr std::string_view kParamsMagic = "KGAC";
constexpr std::uint8_t kParamsVersion = 1;

// Parameter order is load-bearing: optimizer state and checkpoints align by
// index.
enum ParamIndex : std::size_t {
  kFc1W,
  kFc1B,
  kFc2W,
  kFc2B,
  kAttnW,
  kAttnB,
  kHeadW,
  kHeadB,
  kParamCount
};

std::vector<double> uniform_init(rng::Engine& eng, std::size_t count, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(count);
  for (double& x : v) x = (2.0 * rng::uniform01(eng) - 1.0) * bound;
  return v;
}

// Temperature-scaled tanh: smooth, bounded, and close to linear across the
// pre-activation range this data produces. The backbone stays a gentle
// feature map; frame weighting is the attention module's job.
constexpr double kActivationScale = 4.0;

Tensor smooth_activation(const Tensor& x) {
  return scale(tanh(scale(x, 1.0 / kActivationScale)), kActivationScale);
}

}  // namespace

Model::Model(ModelConfig config) : config_(config) {
  if (config_.input_dim == 0 || config_.hidden_dim == 0 || config_.feature_dim == 0)
    throw ConfigError("model dims must be positive");
  if (config_.max_frames == 0) throw ConfigError("max_frames must be positive");

  const std::size_t in = config_.input_dim, h = config_.hidden_dim, d = config_.feature_dim;
  rng::Engine eng(config_.seed);
  params_.resize(kParamCount);
  params_[kFc1W] = {"backbone.fc1.weight", Tensor::leaf({in, h}, uniform_init(eng, in * h, in))};
  params_[kFc1B] = {"backbone.fc1.bias", Tensor::leaf({h}, std::vector<double>(h, 0.0))};
  params_[kFc2W] = {"backbone.fc2.weight", Tensor::leaf({h, d}, uniform_init(eng, h * d, h))};
  params_[kFc2B] = {"backbone.fc2.bias", Tensor::leaf({d}, std::vector<double>(d, 0.0))};
  params_[kAttnW] = {"attention.fc.weight", Tensor::leaf({d, 1}, uniform_init(eng, d, d))};
  params_[kAttnB] = {"attention.fc.bias", Tensor::leaf({1}, {0.0})};
  params_[kHeadW] = {"head.weight", Tensor::leaf({d, 2}, uniform_init(eng, d * 2, d))};
  params_[kHeadB] = {"head.bias", Tensor::leaf({2}, {0.0, 0.0})};
}

Parameter& Model::param(std::string_view name) {
  for (Parameter& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter: " + std::string(name));
}

Tensor Model::backbone_forward(const Tensor& x) const {
  if (x.shape().size() != 2 || x.dim(1) != config_.input_dim)
    throw ConfigError("backbone_forward: expected [batch, " + std::to_string(config_.input_dim) +
                      "], got " + shape_str(x.shape()));
  const Tensor h1 = smooth_activation(add_rows(matmul(x, p(kFc1W)), p(kFc1B)));
  return smooth_activation(add_rows(matmul(h1, p(kFc2W)), p(kFc2B)));
}

Tensor Model::attention_weights(const Tensor& features) const {
  if (features.shape().size() != 2 || features.dim(1) != config_.feature_dim)
    throw ConfigError("attention_weights: expected [N, " + std::to_string(config_.feature_dim) +
                      "], got " + shape_str(features.shape()));
  if (features.dim(0) == 0) throw ContractError("attention_weights: empty feature batch");
  const Tensor scores = add_rows(matmul(features, p(kAttnW)), p(kAttnB));
  return sigmoid(flatten(scores));
}

Tensor Model::aggregate(const Tensor& features, const Tensor& weights) {
  if (features.shape().size() != 2 || weights.shape().size() != 1 ||
      features.dim(0) != weights.dim(0))
    throw ShapeError("aggregate: incompatible shapes " + shape_str(features.shape()) + " and " +
                     shape_str(weights.shape()));
  const std::size_t n = features.dim(0), d = features.dim(1);
  return reshape(matmul(reshape(weights, {1, n}), features), {d});
}

Tensor Model::head_logits(const Tensor& features) const {
  if (features.shape().size() != 2 || features.dim(1) != config_.feature_dim)
    throw ConfigError("head_logits: expected [batch, " + std::to_string(config_.feature_dim) +
                      "], got " + shape_str(features.shape()));
  return add_rows(matmul(features, p(kHeadW)), p(kHeadB));
}

VideoForwardOutput Model::video_forward(const Tensor& clip) const {
  if (clip.shape().size() != 2 || clip.dim(1) != config_.input_dim)
    throw ConfigError("video_forward: expected [N, " + std::to_string(config_.input_dim) +
                      "], got " + shape_str(clip.shape()));
  const std::size_t n = clip.dim(0);
  if (n == 0) throw ContractError("video_forward: empty clip");
  if (n > config_.max_frames)
    throw ContractError("video_forward: clip has " + std::to_string(n) +
                        " frames, max_frames is " + std::to_string(config_.max_frames));

  VideoForwardOutput out;
  out.frame_features = backbone_forward(clip);
  out.attention_weights = config_.attention_enabled
                              ? attention_weights(out.frame_features)
                              : Tensor::full({n}, 1.0 / static_cast<double>(n));
  out.aggregated_feature = aggregate(out.frame_features, out.attention_weights);
  out.video_logits =
      reshape(head_logits(reshape(out.aggregated_feature, {1, config_.feature_dim})), {2});
  out.frame_logits = head_logits(out.frame_features);
  return out;
}

std::pair<Tensor, Tensor> Model::image_forward(const Tensor& image) const {
  if (image.shape().size() != 1 || image.dim(0) != config_.input_dim)
    throw ConfigError("image_forward: expected [" + std::to_string(config_.input_dim) +
                      "], got " + shape_str(image.shape()));
  const Tensor feature_row = backbone_forward(reshape(image, {1, config_.input_dim}));
  const Tensor feature = reshape(feature_row, {config_.feature_dim});
  const Tensor logits = reshape(head_logits(feature_row), {2});
  return {feature, logits};
}

void Model::zero_grads() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

void Model::save_params(std::ostream& out) const {
  io::ByteWriter w(out);
  w.magic(kParamsMagic);
  w.u8(kParamsVersion);
  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (const Parameter& p : params_) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.magic(p.name);
    const Shape& s = p.tensor.shape();
    w.u8(static_cast<std::uint8_t>(s.size()));
    for (const std::size_t d : s) w.u32(static_cast<std::uint32_t>(d));
    for (const double v : p.tensor.data()) w.f64(v);
  }
}

void Model::load_params(std::istream& in) {
  io::ByteReader r(in);
  r.expect_magic(kParamsMagic, "parameter map");
  const std::uint8_t version = r.u8();
  if (version != kParamsVersion)
    throw VersionError("parameter map version " + std::to_string(version) + ", expected " +
                       std::to_string(kParamsVersion));
  const std::uint32_t count = r.u32();

  std::map<std::string, std::pair<Shape, std::vector<double>>> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name(name_len, '\0');
    for (auto& c : name) c = static_cast<char>(r.u8());
    Shape shape(r.u8());
    for (auto& d : shape) d = r.u32();
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.f64();
    if (!entries.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)))
             .second)
      throw ParseError("duplicate parameter name", r.offset());
  }

  for (Parameter& p : params_) {
    const auto it = entries.find(p.name);
    if (it == entries.end()) throw ConfigError("checkpoint missing parameter " + p.name);
    if (it->second.first != p.tensor.shape())
      throw ConfigError("checkpoint shape " + shape_str(it->second.first) + " for " + p.name +
                        " does not match model shape " + shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
  }
  if (entries.size() != params_.size())
    throw ConfigError("checkpoint has " + std::to_string(entries.size()) +
                      " parameters, model expects " + std::to_string(params_.size()));
}

}  // namespace kga
