#include "kga/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "kga/io_util.hpp"

namespace kga {

namespace {

void check_binary(std::span<const double> scores, std::span<const Label> labels,
                  const char* op) {
  if (scores.size() != labels.size())
    throw ShapeError(std::string(op) + ": scores/labels length mismatch");
  const auto pos = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), Label::malignant));
  if (pos == 0 || pos == labels.size())
    throw MetricError(std::string(op) + ": undefined unless both classes are present");
}

std::string json_threshold(double t) {
  if (std::isfinite(t)) return io::format_double(t);
  return t > 0 ? "\"inf\"" : "\"-inf\"";
}

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion_at(std::span<const double> scores, std::span<const Label> labels,
                       double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted_positive = scores[i] > threshold;
    if (labels[i] == Label::malignant)
      predicted_positive ? ++c.tp : ++c.fn;
    else
      predicted_positive ? ++c.fp : ++c.tn;
  }
  return c;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const Label> labels) {
  check_binary(scores, labels, "auc");
  const std::size_t n = scores.size();

  // Average ranks over tie groups; rank sums of halves stay exact.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k] == Label::malignant) {
      pos_rank_sum += rank[k];
      ++n_pos;
    }
  }
  const std::size_t n_neg = n - n_pos;
  const double p = static_cast<double>(n_pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

YoudenResult youden_threshold(std::span<const double> scores, std::span<const Label> labels) {
  check_binary(scores, labels, "youden_threshold");

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::vector<double> candidates;
  candidates.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
    candidates.push_back((sorted[i] + sorted[i + 1]) / 2.0);
  candidates.push_back(std::numeric_limits<double>::infinity());

  const double n_pos = static_cast<double>(
      std::count(labels.begin(), labels.end(), Label::malignant));
  const double n_neg = static_cast<double>(labels.size()) - n_pos;

  YoudenResult best;
  bool have_best = false;
  // Candidates ascend, so keeping strict improvements only realizes the
  // "lower threshold" tie rule.
  for (const double t : candidates) {
    const Confusion c = confusion_at(scores, labels, t);
    YoudenResult r;
    r.threshold = t;
    r.sensitivity = static_cast<double>(c.tp) / n_pos;
    r.specificity = static_cast<double>(c.tn) / n_neg;
    r.j = r.sensitivity + r.specificity - 1.0;
    if (!have_best || r.j > best.j || (r.j == best.j && r.sensitivity > best.sensitivity)) {
      best = r;
      have_best = true;
    }
  }
  return best;
}

EvalOutput evaluate(const Model& model, const ClassCenters& centers, const Dataset& test) {
  if (test.videos.empty()) throw ContractError("evaluate: empty test split");
  if (test.dim != model.config().input_dim)
    throw ConfigError("evaluate: dataset dim " + std::to_string(test.dim) +
                      " does not match model input dim " +
                      std::to_string(model.config().input_dim));

  std::vector<double> scores;
  std::vector<Label> labels;
  std::vector<AttentionRecord> records;
  scores.reserve(test.videos.size());
  labels.reserve(test.videos.size());
  records.reserve(test.videos.size());

  for (const VideoSample& v : test.videos) {
    const VideoForwardOutput out = model.video_forward(v.frames_tensor());
    const double l0 = out.video_logits.at(0), l1 = out.video_logits.at(1);
    // softmax(video_logits)[malignant], computed stably
    scores.push_back(1.0 / (1.0 + std::exp(std::clamp(l0 - l1, -700.0, 700.0))));
    labels.push_back(v.label);

    const Tensor dist = distances_to_center(out.frame_features, v.label, centers);
    AttentionRecord rec;
    rec.video_id = v.id;
    rec.weights.assign(out.attention_weights.data().begin(), out.attention_weights.data().end());
    rec.distances.assign(dist.data().begin(), dist.data().end());
    rec.keyframe_mask = v.keyframe_mask;
    records.push_back(std::move(rec));
  }

  const YoudenResult y = youden_threshold(scores, labels);
  const Confusion c = confusion_at(scores, labels, y.threshold);

  MetricsReport report;
  report.auc = auc(scores, labels);
  report.sensitivity = y.sensitivity;
  report.specificity = y.specificity;
  report.youden_threshold = y.threshold;
  report.n_pos = c.tp + c.fn;
  report.n_neg = c.tn + c.fp;
  report.acc =
      static_cast<double>(c.tp + c.tn) / static_cast<double>(scores.size());
  return {report, std::move(records)};
}

double attention_distance_correlation(std::span<const AttentionRecord> records) {
  std::vector<double> w, d;
  for (const AttentionRecord& r : records) {
    w.insert(w.end(), r.weights.begin(), r.weights.end());
    d.insert(d.end(), r.distances.begin(), r.distances.end());
  }
  const std::size_t n = w.size();
  if (n < 2)
    throw MetricError("attention_distance_correlation: needs at least two frames");

  const double mw = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n);
  const double md = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double cov = 0.0, vw = 0.0, vd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dw = w[i] - mw, dd = d[i] - md;
    cov += dw * dd;
    vw += dw * dw;
    vd += dd * dd;
  }
  if (vw == 0.0 || vd == 0.0)
    throw MetricError("attention_distance_correlation: zero variance");
  return cov / std::sqrt(vw * vd);
}

double keyframe_attention_gap(std::span<const AttentionRecord> records) {
  double sum_key = 0.0, sum_rest = 0.0;
  std::size_t n_key = 0, n_rest = 0;
  for (const AttentionRecord& r : records) {
    if (r.keyframe_mask.size() != r.weights.size())
      throw ContractError("keyframe_attention_gap: record without a full mask");
    for (std::size_t i = 0; i < r.weights.size(); ++i) {
      if (r.keyframe_mask[i]) {
        sum_key += r.weights[i];
        ++n_key;
      } else {
        sum_rest += r.weights[i];
        ++n_rest;
      }
    }
  }
  if (n_key == 0 || n_rest == 0)
    throw MetricError("keyframe_attention_gap: both mask classes must be present");
  return sum_key / static_cast<double>(n_key) - sum_rest / static_cast<double>(n_rest);
}

std::string MetricsReport::to_json() const {
  std::ostringstream os;
  os << "{\"auc\":" << io::format_double(auc) << ",\"acc\":" << io::format_double(acc)
     << ",\"sensitivity\":" << io::format_double(sensitivity)
     << ",\"specificity\":" << io::format_double(specificity)
     << ",\"youden_threshold\":" << json_threshold(youden_threshold) << ",\"n_pos\":" << n_pos
     << ",\"n_neg\":" << n_neg << "}";
  return os.str();
}

void write_attention_csv(std::ostream& out, std::span<const AttentionRecord> records) {
  out << "video_id,frame_idx,weight,distance,is_keyframe\n";
  for (const AttentionRecord& r : records) {
    for (std::size_t i = 0; i < r.weights.size(); ++i) {
      out << r.video_id << ',' << i << ',' << io::format_double(r.weights[i]) << ','
          << io::format_double(r.distances[i]) << ','
          << (i < r.keyframe_mask.size() && r.keyframe_mask[i] ? 1 : 0) << '\n';
    }
  }
}

}  // namespace kga
