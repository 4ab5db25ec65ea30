#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kga/rng.hpp"
#include "kga/tensor.hpp"
#include "kga/types.hpp"

namespace kga {

// Synthetic two-class benchmark: keyframe images concentrate tightly around
// their class mean, video frames mix tight draws with a wider off-center
// distribution (malignant off-center frames are additionally pulled halfway
// toward the benign mean, so whole-video averaging is genuinely lossy).
struct SyntheticConfig {
  std::size_t input_dim = 32;
  double class_separation = 4.0;
  double keyframe_noise_sigma = 0.5;
  double offcenter_noise_sigma = 2.0;
  std::size_t frames_min = 8;
  std::size_t frames_max = 32;
  double keyframe_fraction = 0.3;  // expected fraction of near-center frames
  std::size_t n_train_videos_per_class = 60;
  std::size_t n_test_videos_per_class = 20;
  std::size_t n_images_per_class = 200;
  std::uint64_t seed = 7;

  void validate() const;  // throws ConfigError
  std::string canonical_text() const;
  static SyntheticConfig from_text(const std::string& text);
};

struct VideoSample {
  std::uint32_t id = 0;
  Label label = Label::benign;
  std::size_t n_frames = 0;
  std::size_t dim = 0;
  std::vector<double> frames;               // n_frames x dim, row-major
  std::vector<std::uint8_t> keyframe_mask;  // generator ground truth, length n_frames

  Tensor frames_tensor() const { return Tensor::from({n_frames, dim}, frames); }
  bool operator==(const VideoSample&) const = default;
};

struct ImageSample {
  std::uint32_t id = 0;
  Label label = Label::benign;
  std::vector<double> pixels;

  Tensor pixels_tensor() const { return Tensor::from({pixels.size()}, pixels); }
  bool operator==(const ImageSample&) const = default;
};

struct Dataset {
  std::size_t dim = 0;
  std::vector<VideoSample> videos;
  std::vector<ImageSample> images;

  bool operator==(const Dataset&) const = default;
};

struct MixedBatch {
  std::vector<VideoSample> videos;
  std::vector<ImageSample> images;
};

// Deterministic given config.seed. Returns (train, test); test carries videos
// only (images exist to assist training). Ids are unique across both splits.
std::pair<Dataset, Dataset> generate(const SyntheticConfig& config);

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

// Fills batch_size slots; each slot is independently a video with probability
// 1/2, else an image (or an exact half split when fixed_composition is set).
// Videos longer than max_frames are subsampled uniformly without replacement,
// preserving temporal order.
MixedBatch sample_batch(rng::Engine& eng, const Dataset& train, std::size_t batch_size,
                        std::size_t max_frames, bool fixed_composition = false);

}  // namespace kga
