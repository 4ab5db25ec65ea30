#include "kga/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "kga/io_util.hpp"

namespace kga {

namespace {

constexpr std::string_view kDatasetMagic = "KGAD";
constexpr std::uint8_t kDatasetVersion = 1;
// Off-center malignant frames sit halfway toward the benign mean.
constexpr double kMalignantOffcenterShift = 0.5;
// Clean appearances carry a shared "clarity" component orthogonal to the
// class axis, scaled by class_separation. Off-center frames fade toward a
// generic low-clarity tissue appearance that sits at the benign position:
// unclear benign frames still look benign, unclear malignant frames drift
// toward benign too (halfway at mid fade). Distance to the own-class center
// stays linear in the fade, so frame attention has a readable target.
constexpr double kClarityLift = 1.5;
// Fade level t (1 = clean): clip quality is mostly a per-video state with
// frame-level jitter. Clear malignant appearances are rarer: malignant clips
// fade deeper than benign ones.
constexpr double kFadeVideoLoMalignant = 0.10;
constexpr double kFadeVideoHiMalignant = 0.55;
constexpr double kFadeVideoLoBenign = 0.25;
constexpr double kFadeVideoHiBenign = 0.80;
constexpr double kFadeFrameJitter = 0.15;
constexpr double kFadeFloor = 0.08;
constexpr double kFadeCap = 0.85;
// Class evidence survives only above this clarity: below it the two classes'
// faded frames are distributionally identical (and a malignant wide draw is
// at least halfway toward the benign mean, reaching it fully at the join).
constexpr double kFadeClassJoin = 0.6;
// Faded frames also pick up one-sided degradation artifacts along a separate
// axis, growing with fade depth (in units of offcenter_noise_sigma *
// sqrt(input_dim)).
constexpr double kArtifactFloor = 0.35;
constexpr double kArtifactSpread = 0.5;
// Measurement blur of the clarity cue on wide frames, in
// offcenter_noise_sigma units.
constexpr double kClarityBlurScale = 0.8;
// Some wide frames are "atypical": clear-looking views of presentations the
// curated image set never shows, displaced into an appearance subspace of
// their own and carrying benign-leaning class evidence.
constexpr std::size_t kAtypiaAxes = 4;
constexpr double kAtypiaProb = 0.18;
constexpr double kAtypiaLo = 0.25;
constexpr double kAtypiaSpread = 0.3;
constexpr double kAtypiaClassAxis = -0.25;  // in class_separation units
// Rarely, a wide frame is a crisp view that genuinely resembles the other
// class, carrying only faint artifacts. Unclear malignant lesions read as
// benign far more often than the reverse.
constexpr double kLookalikeProbMalignant = 0.24;
constexpr double kLookalikeProbBenign = 0.06;
constexpr double kLookalikeArtifactLo = 0.0;
constexpr double kLookalikeArtifactHi = 0.12;
// How typical the lesion's appearance is, drawn per video: it scales the
// class-axis coordinate of the video's own-class views. The curated image
// set carries full-severity appearances only. Malignant lesions show weak
// typicality more often than benign ones.
constexpr double kSeverityMalignantLo = 0.45;
constexpr double kSeverityBenignLo = 0.6;

// Means sit class_separation apart along the first axis and share the
// clarity lift, so the lift cancels in their separation.
std::vector<double> class_mean(const SyntheticConfig& cfg, const std::vector<double>& clarity,
                               Label y) {
  std::vector<double> mean(cfg.input_dim);
  const double lift = kClarityLift * cfg.class_separation;
  for (std::size_t j = 0; j < mean.size(); ++j) mean[j] = lift * clarity[j];
  mean[0] += (y == Label::benign ? -0.5 : 0.5) * cfg.class_separation;
  return mean;
}

void add_noise(rng::Engine& eng, std::vector<double>& point, double sigma) {
  for (double& v : point) v += sigma * rng::normal(eng);
}

// Degradation artifacts span several independent directions (shadowing,
// blur, off-plane cuts, ...), so reading them takes a multi-axis readout.
constexpr std::size_t kArtifactAxes = 6;
// Every clip also carries an acquisition-style signature shared by all of its
// frames (device, operator, patient habitus). Styles are idiosyncratic per
// video; curated still images carry none.
constexpr std::size_t kStyleAxes = 6;
constexpr double kStyleScale = 0.6;  // per axis, in offcenter_noise_sigma units

struct DataGeometry {
  std::vector<double> clarity;                 // unit, orthogonal to the class axis
  std::vector<std::vector<double>> artifacts;  // orthonormal, orthogonal to the above
  std::vector<std::vector<double>> styles;     // orthonormal, orthogonal to all above
  std::vector<std::vector<double>> atypia;     // orthonormal, orthogonal to all above
};

// Drawn once per dataset.
DataGeometry dataset_geometry(rng::Engine& eng, std::size_t dim) {
  DataGeometry g;
  auto draw_unit = [&](const std::vector<std::vector<double>>& against) {
    std::vector<double> u(dim);
    for (double& v : u) v = rng::normal(eng);
    u[0] = 0.0;
    for (const auto& a : against) {
      double dot = 0.0;
      for (std::size_t j = 0; j < dim; ++j) dot += u[j] * a[j];
      for (std::size_t j = 0; j < dim; ++j) u[j] -= dot * a[j];
    }
    double norm = 0.0;
    for (const double v : u) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : u) v /= norm;
    return u;
  };
  g.clarity = draw_unit({});
  std::vector<std::vector<double>> previous{g.clarity};
  const std::size_t n_artifact = std::min(kArtifactAxes, (dim - 2) / 2);
  for (std::size_t k = 0; k < n_artifact; ++k) {
    g.artifacts.push_back(draw_unit(previous));
    previous.push_back(g.artifacts.back());
  }
  const std::size_t n_style = std::min(kStyleAxes, dim - 2 - n_artifact);
  for (std::size_t k = 0; k < n_style; ++k) {
    g.styles.push_back(draw_unit(previous));
    previous.push_back(g.styles.back());
  }
  const std::size_t n_atypia = std::min(kAtypiaAxes, dim - 2 - n_artifact - n_style);
  for (std::size_t k = 0; k < n_atypia; ++k) {
    g.atypia.push_back(draw_unit(previous));
    previous.push_back(g.atypia.back());
  }
  return g;
}

VideoSample make_video(rng::Engine& eng, const SyntheticConfig& cfg, const DataGeometry& geo,
                       Label label, std::uint32_t id) {
  VideoSample v;
  v.id = id;
  v.label = label;
  v.dim = cfg.input_dim;
  v.n_frames = cfg.frames_min + rng::uniform_below(eng, cfg.frames_max - cfg.frames_min + 1);
  v.keyframe_mask.resize(v.n_frames);
  for (auto& m : v.keyframe_mask) m = rng::bernoulli(eng, cfg.keyframe_fraction) ? 1 : 0;
  // Every recorded lesion clip passes through at least one clear view.
  if (std::find(v.keyframe_mask.begin(), v.keyframe_mask.end(), 1) == v.keyframe_mask.end())
    v.keyframe_mask[rng::uniform_below(eng, v.n_frames)] = 1;

  const std::vector<double> own_mean = class_mean(cfg, geo.clarity, label);
  const std::vector<double> other_mean = class_mean(
      cfg, geo.clarity, label == Label::benign ? Label::malignant : Label::benign);
  // zero-clarity generic tissue at the benign position; a malignant wide draw
  // at mid fade therefore sits halfway toward the benign mean
  std::vector<double> generic = class_mean(cfg, geo.clarity, Label::benign);
  for (std::size_t j = 0; j < generic.size(); ++j)
    generic[j] -= kClarityLift * cfg.class_separation * geo.clarity[j];
  const double wide_scale =
      cfg.offcenter_noise_sigma * std::sqrt(static_cast<double>(cfg.input_dim));
  const double lookalike_prob =
      label == Label::malignant ? kLookalikeProbMalignant : kLookalikeProbBenign;
  const double fade_lo = label == Label::malignant ? kFadeVideoLoMalignant : kFadeVideoLoBenign;
  const double fade_hi = label == Label::malignant ? kFadeVideoHiMalignant : kFadeVideoHiBenign;
  const double video_fade = fade_lo + (fade_hi - fade_lo) * rng::uniform01(eng);
  const double severity_lo =
      label == Label::malignant ? kSeverityMalignantLo : kSeverityBenignLo;
  const double severity = severity_lo + (1.0 - severity_lo) * rng::uniform01(eng);
  const double own_axis = severity * own_mean[0];

  // acquisition-style signature shared by every frame of this clip
  std::vector<double> style(v.dim, 0.0);
  for (const auto& axis : geo.styles) {
    const double amount = kStyleScale * cfg.offcenter_noise_sigma * rng::normal(eng);
    for (std::size_t j = 0; j < v.dim; ++j) style[j] += amount * axis[j];
  }

  v.frames.reserve(v.n_frames * v.dim);
  for (std::size_t f = 0; f < v.n_frames; ++f) {
    std::vector<double> frame(v.dim);
    if (v.keyframe_mask[f]) {
      frame = own_mean;
      frame[0] = own_axis;
    } else if (rng::bernoulli(eng, kAtypiaProb)) {
      // clear-looking but atypical presentation, leaning benign
      frame = own_mean;
      frame[0] = kAtypiaClassAxis * cfg.class_separation;
      const double per_axis =
          wide_scale / std::sqrt(static_cast<double>(geo.atypia.size()));
      for (const auto& axis : geo.atypia) {
        const double amount =
            per_axis * (kAtypiaLo + kAtypiaSpread * std::abs(rng::normal(eng)));
        for (std::size_t j = 0; j < v.dim; ++j) frame[j] += amount * axis[j];
      }
    } else if (rng::bernoulli(eng, lookalike_prob)) {
      // near-crisp wrong-class view with faint artifacts, at its own typicality
      const double la_severity =
          kSeverityMalignantLo + (1.0 - kSeverityMalignantLo) * rng::uniform01(eng);
      frame = other_mean;
      frame[0] = la_severity * other_mean[0];
      const double per_axis =
          wide_scale / std::sqrt(static_cast<double>(geo.artifacts.size()));
      for (const auto& axis : geo.artifacts) {
        const double amount =
            per_axis * (kLookalikeArtifactLo +
                        (kLookalikeArtifactHi - kLookalikeArtifactLo) * rng::uniform01(eng));
        for (std::size_t j = 0; j < v.dim; ++j) frame[j] += amount * axis[j];
      }
    } else {
      const double t = std::clamp(video_fade + kFadeFrameJitter * rng::normal(eng), kFadeFloor,
                                  kFadeCap);
      const double clarity_blur =
          kClarityBlurScale * cfg.offcenter_noise_sigma * rng::normal(eng);
      const double axis_blur = cfg.offcenter_noise_sigma * rng::normal(eng);
      for (std::size_t j = 0; j < v.dim; ++j)
        frame[j] = t * own_mean[j] + (1.0 - t) * generic[j] + clarity_blur * geo.clarity[j];
      const double per_axis =
          wide_scale * (1.0 - t) / std::sqrt(static_cast<double>(geo.artifacts.size()));
      for (const auto& axis : geo.artifacts) {
        const double amount =
            per_axis * (kArtifactFloor + kArtifactSpread * std::abs(rng::normal(eng)));
        for (std::size_t j = 0; j < v.dim; ++j) frame[j] += amount * axis[j];
      }
      // class evidence fades out entirely below the join
      const double class_mix = std::max(0.0, (t - kFadeClassJoin) / (1.0 - kFadeClassJoin));
      frame[0] = generic[0] + (own_axis - generic[0]) * class_mix + axis_blur;
    }
    for (std::size_t j = 0; j < v.dim; ++j) frame[j] += style[j];
    add_noise(eng, frame, cfg.keyframe_noise_sigma);
    v.frames.insert(v.frames.end(), frame.begin(), frame.end());
  }
  return v;
}

ImageSample make_image(rng::Engine& eng, const SyntheticConfig& cfg, const DataGeometry& geo,
                       Label label, std::uint32_t id) {
  ImageSample img;
  img.id = id;
  img.label = label;
  img.pixels = class_mean(cfg, geo.clarity, label);
  // stills carry acquisition styles of their own
  for (const auto& axis : geo.styles) {
    const double amount = kStyleScale * cfg.offcenter_noise_sigma * rng::normal(eng);
    for (std::size_t j = 0; j < img.pixels.size(); ++j) img.pixels[j] += amount * axis[j];
  }
  add_noise(eng, img.pixels, cfg.keyframe_noise_sigma);
  return img;
}

void write_video_record(io::ByteWriter& w, const VideoSample& v) {
  if (v.n_frames == 0 || v.n_frames != v.keyframe_mask.size() ||
      v.frames.size() != v.n_frames * v.dim)
    throw ContractError("video record invariants violated for id " + std::to_string(v.id));
  w.u32(v.id);
  w.u8(static_cast<std::uint8_t>(v.label));
  w.u16(static_cast<std::uint16_t>(v.n_frames));
  w.u16(static_cast<std::uint16_t>(v.dim));
  for (const std::uint8_t m : v.keyframe_mask) w.u8(m);
  for (const double x : v.frames) w.f64(x);
}

void write_image_record(io::ByteWriter& w, const ImageSample& img, std::size_t dim) {
  if (img.pixels.size() != dim)
    throw ContractError("image record dim mismatch for id " + std::to_string(img.id));
  w.u32(img.id);
  w.u8(static_cast<std::uint8_t>(img.label));
  w.u16(1);  // images are single-frame records with no mask
  w.u16(static_cast<std::uint16_t>(dim));
  for (const double x : img.pixels) w.f64(x);
}

Label read_label(io::ByteReader& r) {
  const std::uint8_t b = r.u8();
  if (b > 1) throw ParseError("label byte must be 0 or 1, got " + std::to_string(b), r.offset());
  return static_cast<Label>(b);
}

}  // namespace

void SyntheticConfig::validate() const {
  if (input_dim < 6)
    throw ConfigError("input_dim must be >= 6 (class, clarity, artifact, style, and atypia axes)");
  if (!(class_separation > 0.0)) throw ConfigError("class_separation must be positive");
  if (!(keyframe_noise_sigma >= 0.0)) throw ConfigError("keyframe_noise_sigma must be >= 0");
  if (!(offcenter_noise_sigma > keyframe_noise_sigma))
    throw ConfigError("offcenter_noise_sigma must exceed keyframe_noise_sigma");
  if (frames_min == 0 || frames_min > frames_max)
    throw ConfigError("frames_per_video range is invalid");
  if (!(keyframe_fraction > 0.0 && keyframe_fraction < 1.0))
    throw ConfigError("keyframe_fraction must be in (0, 1)");
  if (n_train_videos_per_class == 0 || n_test_videos_per_class == 0 || n_images_per_class == 0)
    throw ConfigError("sample counts must be >= 1");
  if (frames_max > 0xFFFF || input_dim > 0xFFFF)
    throw ConfigError("frames_max and input_dim must fit in 16 bits");
}

std::string SyntheticConfig::canonical_text() const {
  std::ostringstream os;
  os << "class_separation=" << io::format_double(class_separation) << '\n'
     << "frames_max=" << frames_max << '\n'
     << "frames_min=" << frames_min << '\n'
     << "input_dim=" << input_dim << '\n'
     << "keyframe_fraction=" << io::format_double(keyframe_fraction) << '\n'
     << "keyframe_noise_sigma=" << io::format_double(keyframe_noise_sigma) << '\n'
     << "n_images_per_class=" << n_images_per_class << '\n'
     << "n_test_videos_per_class=" << n_test_videos_per_class << '\n'
     << "n_train_videos_per_class=" << n_train_videos_per_class << '\n'
     << "offcenter_noise_sigma=" << io::format_double(offcenter_noise_sigma) << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

SyntheticConfig SyntheticConfig::from_text(const std::string& text) {
  SyntheticConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
      line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("dataset config line " + std::to_string(line_no) +
                        ": expected key=value");
    const std::string key = line.substr(start, eq - start);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "input_dim") cfg.input_dim = std::stoul(value);
      else if (key == "class_separation") cfg.class_separation = std::stod(value);
      else if (key == "keyframe_noise_sigma") cfg.keyframe_noise_sigma = std::stod(value);
      else if (key == "offcenter_noise_sigma") cfg.offcenter_noise_sigma = std::stod(value);
      else if (key == "frames_min") cfg.frames_min = std::stoul(value);
      else if (key == "frames_max") cfg.frames_max = std::stoul(value);
      else if (key == "keyframe_fraction") cfg.keyframe_fraction = std::stod(value);
      else if (key == "n_train_videos_per_class") cfg.n_train_videos_per_class = std::stoul(value);
      else if (key == "n_test_videos_per_class") cfg.n_test_videos_per_class = std::stoul(value);
      else if (key == "n_images_per_class") cfg.n_images_per_class = std::stoul(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else throw ConfigError("dataset config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("dataset config: bad value for '" + key + "': " + value);
    } catch (const std::out_of_range&) {
      throw ConfigError("dataset config: value out of range for '" + key + "': " + value);
    }
  }
  return cfg;
}

std::pair<Dataset, Dataset> generate(const SyntheticConfig& config) {
  config.validate();
  rng::Engine eng(config.seed);
  std::uint32_t next_id = 0;
  const DataGeometry geo = dataset_geometry(eng, config.input_dim);

  Dataset train, test;
  train.dim = test.dim = config.input_dim;
  for (const Label y : {Label::benign, Label::malignant})
    for (std::size_t i = 0; i < config.n_train_videos_per_class; ++i)
      train.videos.push_back(make_video(eng, config, geo, y, next_id++));
  for (const Label y : {Label::benign, Label::malignant})
    for (std::size_t i = 0; i < config.n_test_videos_per_class; ++i)
      test.videos.push_back(make_video(eng, config, geo, y, next_id++));
  for (const Label y : {Label::benign, Label::malignant})
    for (std::size_t i = 0; i < config.n_images_per_class; ++i)
      train.images.push_back(make_image(eng, config, geo, y, next_id++));
  return {std::move(train), std::move(test)};
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  io::ByteWriter w(out);
  w.magic(kDatasetMagic);
  w.u8(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(dataset.videos.size()));
  w.u32(static_cast<std::uint32_t>(dataset.images.size()));
  for (const VideoSample& v : dataset.videos) write_video_record(w, v);
  for (const ImageSample& img : dataset.images) write_image_record(w, img, dataset.dim);
  out.flush();
  if (!out) throw Error("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  io::ByteReader r(in);
  r.expect_magic(kDatasetMagic, "dataset");
  const std::uint8_t version = r.u8();
  if (version != kDatasetVersion)
    throw VersionError("dataset version " + std::to_string(version) + ", expected " +
                       std::to_string(kDatasetVersion));
  const std::uint32_t n_videos = r.u32();
  const std::uint32_t n_images = r.u32();

  Dataset ds;
  for (std::uint32_t i = 0; i < n_videos; ++i) {
    VideoSample v;
    v.id = r.u32();
    v.label = read_label(r);
    v.n_frames = r.u16();
    v.dim = r.u16();
    if (v.n_frames == 0) throw ParseError("video record with zero frames", r.offset());
    if (v.dim == 0) throw ParseError("video record with zero dim", r.offset());
    if (ds.dim == 0) ds.dim = v.dim;
    if (v.dim != ds.dim) throw ParseError("inconsistent record dim", r.offset());
    v.keyframe_mask.resize(v.n_frames);
    for (auto& m : v.keyframe_mask) {
      m = r.u8();
      if (m > 1) throw ParseError("keyframe mask byte must be 0 or 1", r.offset());
    }
    v.frames.resize(v.n_frames * v.dim);
    for (double& x : v.frames) x = r.f64();
    ds.videos.push_back(std::move(v));
  }
  for (std::uint32_t i = 0; i < n_images; ++i) {
    ImageSample img;
    img.id = r.u32();
    img.label = read_label(r);
    const std::uint16_t n_frames = r.u16();
    if (n_frames != 1) throw ParseError("image record must have n_frames == 1", r.offset());
    const std::uint16_t dim = r.u16();
    if (dim == 0) throw ParseError("image record with zero dim", r.offset());
    if (ds.dim == 0) ds.dim = dim;
    if (dim != ds.dim) throw ParseError("inconsistent record dim", r.offset());
    img.pixels.resize(dim);
    for (double& x : img.pixels) x = r.f64();
    ds.images.push_back(std::move(img));
  }
  if (!r.at_eof()) throw ParseError("trailing bytes after final record", r.offset());
  return ds;
}

namespace {

VideoSample subsample_video(rng::Engine& eng, const VideoSample& v, std::size_t max_frames) {
  if (v.n_frames <= max_frames) return v;
  // Uniform subset without replacement, then restore temporal order.
  std::vector<std::size_t> idx(v.n_frames);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < max_frames; ++i) {
    const std::size_t j = i + rng::uniform_below(eng, idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_frames);
  std::sort(idx.begin(), idx.end());

  VideoSample out;
  out.id = v.id;
  out.label = v.label;
  out.dim = v.dim;
  out.n_frames = max_frames;
  out.keyframe_mask.reserve(max_frames);
  out.frames.reserve(max_frames * v.dim);
  for (const std::size_t f : idx) {
    out.keyframe_mask.push_back(v.keyframe_mask[f]);
    out.frames.insert(out.frames.end(), v.frames.begin() + f * v.dim,
                      v.frames.begin() + (f + 1) * v.dim);
  }
  return out;
}

}  // namespace

MixedBatch sample_batch(rng::Engine& eng, const Dataset& train, std::size_t batch_size,
                        std::size_t max_frames, bool fixed_composition) {
  if (train.videos.empty() || train.images.empty())
    throw ContractError("sample_batch: both modalities must be non-empty");
  if (batch_size == 0) throw ContractError("sample_batch: batch_size must be positive");
  if (max_frames == 0) throw ContractError("sample_batch: max_frames must be positive");

  MixedBatch batch;
  for (std::size_t slot = 0; slot < batch_size; ++slot) {
    const bool pick_video =
        fixed_composition ? slot < batch_size / 2 : rng::bernoulli(eng, 0.5);
    if (pick_video) {
      const std::size_t i = rng::uniform_below(eng, train.videos.size());
      batch.videos.push_back(subsample_video(eng, train.videos[i], max_frames));
    } else {
      const std::size_t i = rng::uniform_below(eng, train.images.size());
      batch.images.push_back(train.images[i]);
    }
  }
  return batch;
}

}  // namespace kga
