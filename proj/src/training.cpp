#include "kga/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kga/io_util.hpp"

namespace kga {

namespace {

constexpr std::string_view kCheckpointMagic = "KGAT";
constexpr std::uint8_t kCheckpointVersion = 1;

std::string breakdown_text(const LossBreakdown& b) {
  std::ostringstream os;
  os << "ce_video=" << b.ce_video << " ce_image=" << b.ce_image << " ce_frame=" << b.ce_frame
     << " center=" << b.center << " coherence=" << b.coherence << " lambda=" << b.lambda;
  return os.str();
}

struct Assembled {
  LossBreakdown breakdown;
  Tensor total;
  // Detached features the center update consumes after the parameter step.
  Tensor center_update_features;
  std::vector<Label> center_update_labels;
};

Tensor average_parts(const std::vector<Tensor>& parts) {
  if (parts.empty()) return Tensor::scalar(0.0);
  Tensor s = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) s = add(s, parts[i]);
  return scale(s, 1.0 / static_cast<double>(parts.size()));
}

Assembled assemble_losses(const Model& model, const ClassCenters& centers,
                          const MixedBatch& batch, const TrainConfig& cfg) {
  const double lambda = cfg.lambda_coherence;
  Assembled a;

  std::vector<Tensor> ce_video_parts, ce_frame_parts, coherence_parts;
  std::vector<Tensor> clip_features;
  std::vector<Label> clip_labels;
  for (const VideoSample& v : batch.videos) {
    const VideoForwardOutput out = model.video_forward(v.frames_tensor());
    clip_features.push_back(out.frame_features);
    clip_labels.push_back(v.label);

    const std::vector<Label> video_label{v.label};
    ce_video_parts.push_back(cross_entropy(reshape(out.video_logits, {1, 2}), video_label));
    const std::vector<Label> frame_labels(v.n_frames, v.label);
    ce_frame_parts.push_back(cross_entropy(out.frame_logits, frame_labels));

    const Tensor dist = distances_to_center(out.frame_features, v.label, centers);
    // With lambda == 0 the value is still logged, but kept off the graph.
    const Tensor w = lambda != 0.0 ? out.attention_weights : out.attention_weights.detach();
    coherence_parts.push_back(coherence_loss(w, dist));
  }
  const Tensor ce_video = average_parts(ce_video_parts);
  const Tensor ce_frame = average_parts(ce_frame_parts);
  const Tensor coherence = average_parts(coherence_parts);

  Tensor ce_image = Tensor::scalar(0.0);
  Tensor center = Tensor::scalar(0.0);
  if (cfg.ablation != Ablation::no_image_guidance) {
    if (!batch.images.empty()) {
      const std::size_t k = batch.images.size();
      std::vector<double> buf;
      buf.reserve(k * cfg.input_dim);
      std::vector<Label> labels;
      labels.reserve(k);
      for (const ImageSample& img : batch.images) {
        buf.insert(buf.end(), img.pixels.begin(), img.pixels.end());
        labels.push_back(img.label);
      }
      const Tensor features = model.backbone_forward(Tensor::from({k, cfg.input_dim}, buf));
      ce_image = cross_entropy(model.head_logits(features), labels);
      center = center_loss(features, labels, centers);
      a.center_update_features = features.detach();
      a.center_update_labels = std::move(labels);
    }
  } else if (!clip_features.empty()) {
    // Image-free ablation: centers are generated from the video frames. The
    // features are detached, so the center term is diagnostic only.
    std::vector<double> buf;
    std::vector<Label> labels;
    for (std::size_t c = 0; c < clip_features.size(); ++c) {
      const auto fd = clip_features[c].data();
      buf.insert(buf.end(), fd.begin(), fd.end());
      labels.insert(labels.end(), clip_features[c].dim(0), clip_labels[c]);
    }
    const Tensor detached =
        Tensor::from({labels.size(), cfg.feature_dim}, std::move(buf));
    center = center_loss(detached, labels, centers);
    a.center_update_features = detached;
    a.center_update_labels = std::move(labels);
  }

  a.breakdown.ce_video = ce_video.value();
  a.breakdown.ce_image = ce_image.value();
  a.breakdown.ce_frame = ce_frame.value();
  a.breakdown.center = center.value();
  a.breakdown.coherence = coherence.value();
  a.breakdown.lambda = lambda;
  try {
    a.total = total_loss(ce_video, ce_image, ce_frame, center, coherence, lambda);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) + " [" + breakdown_text(a.breakdown) + "]");
  }
  a.breakdown.total = a.total.value();
  return a;
}

}  // namespace

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_image_guidance: return "no_image_guidance";
    case Ablation::no_coherence: return "no_coherence";
    case Ablation::no_coherence_no_attention: return "no_coherence_no_attention";
  }
  throw ContractError("unknown ablation");
}

std::optional<Ablation> ablation_from_name(std::string_view name) {
  for (const Ablation a : {Ablation::full, Ablation::no_image_guidance, Ablation::no_coherence,
                           Ablation::no_coherence_no_attention})
    if (name == ablation_name(a)) return a;
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (total_iters == 0) throw ConfigError("total_iters must be positive");
  if (!decay_iters.empty()) {
    if (!std::is_sorted(decay_iters.begin(), decay_iters.end()))
      throw ConfigError("decay_iters must be ascending");
    if (warmup_iters >= decay_iters.front())
      throw ConfigError("warmup_iters must precede the first decay milestone");
    if (decay_iters.back() >= total_iters)
      throw ConfigError("decay milestones must precede total_iters");
  } else if (warmup_iters >= total_iters) {
    throw ConfigError("warmup_iters must be below total_iters");
  }
  if (!(decay_factor > 0.0 && decay_factor <= 1.0))
    throw ConfigError("decay_factor must be in (0, 1]");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (lambda_coherence < 0.0) throw ConfigError("lambda_coherence must be >= 0");
  if (!(center_alpha > 0.0 && center_alpha <= 1.0))
    throw ConfigError("center_alpha must be in (0, 1]");
  if (max_frames == 0) throw ConfigError("max_frames must be positive");
  if (log_interval == 0) throw ConfigError("log_interval must be positive");
  if (input_dim == 0 || hidden_dim == 0 || feature_dim == 0)
    throw ConfigError("model dims must be positive");
}

void TrainConfig::normalize() {
  if (ablation == Ablation::no_coherence || ablation == Ablation::no_coherence_no_attention)
    lambda_coherence = 0.0;
}

std::string TrainConfig::canonical_text() const {
  std::ostringstream os;
  os << "ablation=" << ablation_name(ablation) << '\n'
     << "base_lr=" << io::format_double(base_lr) << '\n'
     << "batch_size=" << batch_size << '\n'
     << "center_alpha=" << io::format_double(center_alpha) << '\n'
     << "checkpoint_interval=" << checkpoint_interval << '\n'
     << "decay_factor=" << io::format_double(decay_factor) << '\n'
     << "decay_iters=";
  for (std::size_t i = 0; i < decay_iters.size(); ++i) {
    if (i) os << ',';
    os << decay_iters[i];
  }
  os << '\n'
     << "feature_dim=" << feature_dim << '\n'
     << "fixed_batch_composition=" << (fixed_batch_composition ? 1 : 0) << '\n'
     << "hidden_dim=" << hidden_dim << '\n'
     << "input_dim=" << input_dim << '\n'
     << "lambda_coherence=" << io::format_double(lambda_coherence) << '\n'
     << "log_interval=" << log_interval << '\n'
     << "max_frames=" << max_frames << '\n'
     << "momentum=" << io::format_double(momentum) << '\n'
     << "seed=" << seed << '\n'
     << "total_iters=" << total_iters << '\n'
     << "warmup_iters=" << warmup_iters << '\n'
     << "weight_decay=" << io::format_double(weight_decay) << '\n';
  return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
      line.pop_back();
    const std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("train config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = line.substr(start, eq - start);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "ablation") {
        const auto a = ablation_from_name(value);
        if (!a) throw ConfigError("unknown ablation '" + value + "'");
        cfg.ablation = *a;
      } else if (key == "base_lr") cfg.base_lr = std::stod(value);
      else if (key == "batch_size") cfg.batch_size = std::stoul(value);
      else if (key == "center_alpha") cfg.center_alpha = std::stod(value);
      else if (key == "checkpoint_interval") cfg.checkpoint_interval = std::stoul(value);
      else if (key == "decay_factor") cfg.decay_factor = std::stod(value);
      else if (key == "decay_iters") {
        cfg.decay_iters.clear();
        std::istringstream vs(value);
        std::string item;
        while (std::getline(vs, item, ','))
          if (!item.empty()) cfg.decay_iters.push_back(std::stoul(item));
      } else if (key == "feature_dim") cfg.feature_dim = std::stoul(value);
      else if (key == "fixed_batch_composition") cfg.fixed_batch_composition = std::stoul(value) != 0;
      else if (key == "hidden_dim") cfg.hidden_dim = std::stoul(value);
      else if (key == "input_dim") cfg.input_dim = std::stoul(value);
      else if (key == "lambda_coherence") cfg.lambda_coherence = std::stod(value);
      else if (key == "log_interval") cfg.log_interval = std::stoul(value);
      else if (key == "max_frames") cfg.max_frames = std::stoul(value);
      else if (key == "momentum") cfg.momentum = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "total_iters") cfg.total_iters = std::stoul(value);
      else if (key == "warmup_iters") cfg.warmup_iters = std::stoul(value);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
      else throw ConfigError("train config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("train config: bad value for '" + key + "': " + value);
    } catch (const std::out_of_range&) {
      throw ConfigError("train config: value out of range for '" + key + "': " + value);
    }
  }
  return cfg;
}

std::uint64_t TrainConfig::config_hash() const { return io::fnv1a(canonical_text()); }

void TrainConfig::apply_paper_schedule() {
  base_lr = 0.005;
  warmup_iters = 1000;
  decay_iters = {4000, 6000};
  total_iters = 8000;
}

double lr_at(std::size_t iter, const TrainConfig& config) {
  if (iter >= config.total_iters)
    throw ContractError("lr_at: iter " + std::to_string(iter) + " outside [0, " +
                        std::to_string(config.total_iters) + ")");
  double lr = config.base_lr;
  if (config.warmup_iters > 0 && iter < config.warmup_iters)
    lr = config.base_lr * static_cast<double>(iter) / static_cast<double>(config.warmup_iters);
  for (const std::size_t milestone : config.decay_iters)
    if (iter >= milestone) lr *= config.decay_factor;
  return lr;
}

TrainState::TrainState(const TrainConfig& config)
    : model(ModelConfig{config.input_dim, config.hidden_dim, config.feature_dim,
                        config.max_frames, config.attention_enabled(), config.seed}),
      centers(config.feature_dim, config.center_alpha),
      batch_rng(config.seed ^ 0x9E3779B97F4A7C15ull) {
  for (const Parameter& p : model.parameters()) velocity.emplace_back(p.tensor.numel(), 0.0);
}

LossBreakdown train_step(TrainState& state, const MixedBatch& batch, const TrainConfig& config) {
  state.model.zero_grads();
  Assembled a = assemble_losses(state.model, state.centers, batch, config);
  a.total.backward();

  const double lr = lr_at(state.iter, config);
  auto& params = state.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor.mutable_data();
    const auto grads = params[i].tensor.grad();
    std::vector<double>& vel = state.velocity[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j] + config.weight_decay * values[j];
      vel[j] = config.momentum * vel[j] + g;
      values[j] -= lr * vel[j];
    }
  }

  if (a.center_update_features.defined() && !a.center_update_labels.empty())
    update_centers(a.center_update_features, a.center_update_labels, state.centers);

  ++state.iter;
  return a.breakdown;
}

TrainResult train(const TrainConfig& config, const Dataset& train_split,
                  std::optional<TrainState> resume_from, std::optional<std::size_t> stop_after,
                  const StepCallback& on_log, const CheckpointCallback& on_checkpoint) {
  TrainConfig cfg = config;
  cfg.normalize();
  cfg.validate();
  if (train_split.dim != cfg.input_dim)
    throw ConfigError("train: dataset dim " + std::to_string(train_split.dim) +
                      " does not match configured input_dim " + std::to_string(cfg.input_dim));

  TrainResult result{resume_from ? std::move(*resume_from) : TrainState(cfg), {}};
  const std::size_t end_iter = std::min(cfg.total_iters, stop_after.value_or(cfg.total_iters));

  while (result.state.iter < end_iter) {
    const MixedBatch batch = sample_batch(result.state.batch_rng, train_split, cfg.batch_size,
                                          cfg.max_frames, cfg.fixed_batch_composition);
    const std::size_t this_iter = result.state.iter;
    const LossBreakdown losses = train_step(result.state, batch, cfg);
    if (this_iter % cfg.log_interval == 0 || this_iter + 1 == cfg.total_iters) {
      result.history.push_back({this_iter, losses});
      if (on_log) on_log(result.state, result.history.back());
    }
    if (on_checkpoint && cfg.checkpoint_interval > 0 &&
        result.state.iter % cfg.checkpoint_interval == 0)
      on_checkpoint(result.state);
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  io::ByteWriter w(out);
  w.magic(kCheckpointMagic);
  w.u8(kCheckpointVersion);
  w.u64(state.iter);
  const std::string config_text = config.canonical_text();
  w.str(config_text);
  w.u64(io::fnv1a(config_text));
  w.str(rng::serialize(state.batch_rng));

  w.u16(static_cast<std::uint16_t>(state.centers.dim));
  w.f64(state.centers.update_rate);
  for (const double v : state.centers.benign) w.f64(v);
  for (const double v : state.centers.malignant) w.f64(v);

  const auto& params = state.model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.magic(p.name);
    const Shape& s = p.tensor.shape();
    w.u8(static_cast<std::uint8_t>(s.size()));
    for (const std::size_t d : s) w.u32(static_cast<std::uint32_t>(d));
    for (const double v : p.tensor.data()) w.f64(v);
    // Momentum buffers ride along so a resumed run is bit-identical.
    for (const double v : state.velocity[i]) w.f64(v);
  }
  out.flush();
  if (!out) throw Error("write failed for " + path.string());
}

std::pair<TrainState, TrainConfig> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  io::ByteReader r(in);
  r.expect_magic(kCheckpointMagic, "checkpoint");
  const std::uint8_t version = r.u8();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const std::uint64_t iter = r.u64();
  const std::string config_text = r.str();
  const std::uint64_t stored_hash = r.u64();
  if (stored_hash != io::fnv1a(config_text))
    throw ParseError("checkpoint config hash mismatch", r.offset());
  TrainConfig config = TrainConfig::from_text(config_text);
  config.validate();
  const std::string rng_text = r.str();

  TrainState state(config);
  state.iter = iter;
  state.batch_rng = rng::deserialize(rng_text);

  const std::uint16_t center_dim = r.u16();
  if (center_dim != config.feature_dim)
    throw ParseError("checkpoint center dim does not match config", r.offset());
  state.centers.update_rate = r.f64();
  for (double& v : state.centers.benign) v = r.f64();
  for (double& v : state.centers.malignant) v = r.f64();

  const std::uint32_t n_params = r.u32();
  auto& params = state.model.parameters();
  if (n_params != params.size())
    throw ParseError("checkpoint parameter count mismatch", r.offset());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name(name_len, '\0');
    for (auto& ch : name) ch = static_cast<char>(r.u8());
    if (name != params[i].name)
      throw ParseError("checkpoint parameter '" + name + "' does not match model order",
                       r.offset());
    Shape shape(r.u8());
    for (auto& d : shape) d = r.u32();
    if (shape != params[i].tensor.shape())
      throw ParseError("checkpoint shape mismatch for " + name, r.offset());
    auto values = params[i].tensor.mutable_data();
    for (double& v : values) v = r.f64();
    for (double& v : state.velocity[i]) v = r.f64();
  }
  if (!r.at_eof()) throw ParseError("trailing bytes after checkpoint payload", r.offset());
  return {std::move(state), std::move(config)};
}

std::string history_jsonl_line(const HistoryEntry& entry) {
  const LossBreakdown& b = entry.losses;
  std::ostringstream os;
  os << "{\"iter\":" << entry.iter << ",\"ce_video\":" << io::format_double(b.ce_video)
     << ",\"ce_image\":" << io::format_double(b.ce_image)
     << ",\"ce_frame\":" << io::format_double(b.ce_frame)
     << ",\"center\":" << io::format_double(b.center)
     << ",\"coherence\":" << io::format_double(b.coherence)
     << ",\"total\":" << io::format_double(b.total) << "}";
  return os.str();
}

}  // namespace kga
