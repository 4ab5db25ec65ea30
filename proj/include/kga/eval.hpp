#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kga/data.hpp"
#include "kga/losses.hpp"
#include "kga/model.hpp"

namespace kga {

// Test-set metrics at the Youden-index operating point. The threshold is
// chosen on the evaluated set itself (a reporting convention, not a
// deployable calibration).
struct MetricsReport {
  double auc = 0.0;
  double acc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double youden_threshold = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  // Deterministic single-line JSON; non-finite thresholds serialize as
  // "inf" / "-inf" strings.
  std::string to_json() const;
};

struct AttentionRecord {
  std::uint32_t video_id = 0;
  std::vector<double> weights;
  std::vector<double> distances;
  std::vector<std::uint8_t> keyframe_mask;
};

// Probability that a random positive outranks a random negative; ties count
// one half (rank / Mann-Whitney formulation).
double auc(std::span<const double> scores, std::span<const Label> labels);

struct YoudenResult {
  double threshold = 0.0;  // classify positive when score > threshold
  double sensitivity = 0.0;
  double specificity = 0.0;
  double j = 0.0;
};

// Maximizes J = sensitivity + specificity - 1 over midpoints between adjacent
// distinct scores plus +-infinity. Ties break toward higher sensitivity, then
// the lower threshold.
YoudenResult youden_threshold(std::span<const double> scores, std::span<const Label> labels);

struct EvalOutput {
  MetricsReport report;
  std::vector<AttentionRecord> records;
};

// Scores every test video by softmax(video_logits)[malignant]; attention
// records carry distances to the supplied (final) centers.
EvalOutput evaluate(const Model& model, const ClassCenters& centers, const Dataset& test);

// Pearson correlation pooled over all (weight, distance) pairs.
double attention_distance_correlation(std::span<const AttentionRecord> records);

// Mean attention over keyframe-mask frames minus mean over the rest.
double keyframe_attention_gap(std::span<const AttentionRecord> records);

// CSV columns: video_id,frame_idx,weight,distance,is_keyframe
void write_attention_csv(std::ostream& out, std::span<const AttentionRecord> records);

}  // namespace kga
