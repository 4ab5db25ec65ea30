#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kga/data.hpp"
#include "kga/eval.hpp"
#include "kga/losses.hpp"
#include "kga/model.hpp"

namespace kga {

enum class Ablation {
  full,
  no_image_guidance,
  no_coherence,
  no_coherence_no_attention,
};

std::string_view ablation_name(Ablation a);
std::optional<Ablation> ablation_from_name(std::string_view name);

// SGD-with-momentum protocol: linear warmup to base_lr, then step decay at
// the listed milestones. Defaults are the reference schedule scaled by 1/8;
// apply_paper_schedule() restores the full-scale one.
struct TrainConfig {
  double base_lr = 0.005;
  std::size_t warmup_iters = 125;
  std::vector<std::size_t> decay_iters{500, 750};
  std::size_t total_iters = 1000;
  double decay_factor = 0.1;
  std::size_t batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lambda_coherence = 1.0;
  double center_alpha = 0.5;
  Ablation ablation = Ablation::full;
  std::uint64_t seed = 42;
  std::size_t max_frames = 128;
  bool fixed_batch_composition = false;
  std::size_t log_interval = 25;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t feature_dim = 16;

  void validate() const;  // throws ConfigError
  // Folds the ablation into the stored fields (coherence-free ablations set
  // lambda_coherence to 0), so the canonical text fully describes the run.
  void normalize();
  bool attention_enabled() const { return ablation != Ablation::no_coherence_no_attention; }

  // Sorted key=value lines; parse with from_text for an exact round-trip.
  std::string canonical_text() const;
  static TrainConfig from_text(const std::string& text);
  std::uint64_t config_hash() const;

  void apply_paper_schedule();
};

double lr_at(std::size_t iter, const TrainConfig& config);

// Everything a resumed run needs, bit for bit.
struct TrainState {
  Model model;
  ClassCenters centers;
  std::vector<std::vector<double>> velocity;  // one buffer per parameter
  rng::Engine batch_rng;
  std::size_t iter = 0;

  explicit TrainState(const TrainConfig& config);
};

// One optimization step: forward both paths, backward on the Eq-style total,
// SGD update at lr_at(state.iter), then the detached center update.
LossBreakdown train_step(TrainState& state, const MixedBatch& batch, const TrainConfig& config);

struct HistoryEntry {
  std::size_t iter = 0;
  LossBreakdown losses;
};

struct TrainResult {
  TrainState state;
  std::vector<HistoryEntry> history;
};

using StepCallback = std::function<void(const TrainState&, const HistoryEntry&)>;
using CheckpointCallback = std::function<void(const TrainState&)>;

// Runs state from its current iteration up to config.total_iters, or up to
// the absolute iteration stop_after when that is lower. Logs every
// log_interval iterations plus the final one; on_checkpoint fires after every
// checkpoint_interval completed iterations.
TrainResult train(const TrainConfig& config, const Dataset& train_split,
                  std::optional<TrainState> resume_from = std::nullopt,
                  std::optional<std::size_t> stop_after = std::nullopt,
                  const StepCallback& on_log = nullptr,
                  const CheckpointCallback& on_checkpoint = nullptr);

// Checkpoint: magic + version, iteration, canonical config text + hash, rng
// state, centers, and per-parameter values with momentum buffers.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& config);
std::pair<TrainState, TrainConfig> load_checkpoint(const std::filesystem::path& path);

std::string history_jsonl_line(const HistoryEntry& entry);

}  // namespace kga
