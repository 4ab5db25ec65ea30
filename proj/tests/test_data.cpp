#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kga/data.hpp"
#include "test_util.hpp"

using namespace kga;
using testutil::TempDir;

namespace {

// Small configs keep the statistical checks fast.
SyntheticConfig small_config() {
  SyntheticConfig cfg;
  cfg.input_dim = 8;
  cfg.n_train_videos_per_class = 10;
  cfg.n_test_videos_per_class = 4;
  cfg.n_images_per_class = 30;
  cfg.seed = 21;
  return cfg;
}

std::vector<double> empirical_image_mean(const Dataset& ds, Label y) {
  std::vector<double> mean(ds.dim, 0.0);
  std::size_t count = 0;
  for (const ImageSample& img : ds.images) {
    if (img.label != y) continue;
    ++count;
    for (std::size_t j = 0; j < ds.dim; ++j) mean[j] += img.pixels[j];
  }
  for (double& v : mean) v /= static_cast<double>(count);
  return mean;
}

double dist(std::span<const double> a, std::span<const double> b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

}  // namespace

TEST_CASE("config validation") {
  SyntheticConfig cfg = small_config();
  cfg.offcenter_noise_sigma = cfg.keyframe_noise_sigma;  // must strictly exceed
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.keyframe_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.n_images_per_class = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.frames_min = 9;
  cfg.frames_max = 8;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("zero keyframe sigma puts every image exactly on its class mean") {
  SyntheticConfig cfg = small_config();
  cfg.keyframe_noise_sigma = 0.0;
  const auto [train, test] = generate(cfg);

  // every image coincides with its class point, and the two class points sit
  // exactly class_separation apart
  const ImageSample* benign = nullptr;
  const ImageSample* malignant = nullptr;
  for (const ImageSample& img : train.images) {
    const ImageSample*& ref = img.label == Label::benign ? benign : malignant;
    if (!ref) ref = &img;
    CHECK(img.pixels == ref->pixels);
  }
  REQUIRE(benign != nullptr);
  REQUIRE(malignant != nullptr);
  CHECK(dist(benign->pixels, malignant->pixels) ==
        doctest::Approx(cfg.class_separation).epsilon(1e-12));
}

TEST_CASE("keyframe fraction near one marks every frame") {
  SyntheticConfig cfg = small_config();
  cfg.keyframe_fraction = 1.0 - 1e-12;
  const auto [train, test] = generate(cfg);
  for (const VideoSample& v : train.videos)
    for (const auto m : v.keyframe_mask) CHECK(m == 1);
}

TEST_CASE("default config: images concentrate, frames scatter") {
  const SyntheticConfig cfg;  // spec defaults
  const auto [train, test] = generate(cfg);

  CHECK(train.videos.size() == 120);
  CHECK(test.videos.size() == 40);
  CHECK(train.images.size() == 400);
  CHECK(test.images.empty());

  for (const Label y : {Label::benign, Label::malignant}) {
    const std::vector<double> mean = empirical_image_mean(train, y);

    double image_dist = 0.0;
    std::size_t n_images = 0;
    for (const ImageSample& img : train.images) {
      if (img.label != y) continue;
      image_dist += dist(img.pixels, mean);
      ++n_images;
    }
    image_dist /= static_cast<double>(n_images);

    double frame_dist = 0.0;
    std::size_t n_frames = 0;
    for (const VideoSample& v : train.videos) {
      if (v.label != y) continue;
      for (std::size_t f = 0; f < v.n_frames; ++f) {
        frame_dist += dist(std::span(v.frames).subspan(f * v.dim, v.dim), mean);
        ++n_frames;
      }
    }
    frame_dist /= static_cast<double>(n_frames);

    CHECK(image_dist < frame_dist);
  }
}

TEST_CASE("keyframe-mask frames sit closer to the class mean than the rest") {
  const SyntheticConfig cfg;
  const auto [train, test] = generate(cfg);
  for (const Label y : {Label::benign, Label::malignant}) {
    // the image cloud is an unbiased estimate of the class mean
    const std::vector<double> mean = empirical_image_mean(train, y);

    double key_sum = 0.0, rest_sum = 0.0;
    std::size_t key_n = 0, rest_n = 0;
    for (const VideoSample& v : train.videos) {
      if (v.label != y) continue;
      for (std::size_t f = 0; f < v.n_frames; ++f) {
        const double d = dist(std::span(v.frames).subspan(f * v.dim, v.dim), mean);
        if (v.keyframe_mask[f]) {
          key_sum += d;
          ++key_n;
        } else {
          rest_sum += d;
          ++rest_n;
        }
      }
    }
    CHECK(key_sum / static_cast<double>(key_n) < rest_sum / static_cast<double>(rest_n));
  }
}

TEST_CASE("distance-to-mean classifier separates images with AUC above 0.95") {
  const SyntheticConfig cfg;
  const auto [train, test] = generate(cfg);
  const std::vector<double> benign_mean = empirical_image_mean(train, Label::benign);
  const std::vector<double> mal_mean = empirical_image_mean(train, Label::malignant);

  std::vector<double> scores;
  std::vector<Label> labels;
  for (const ImageSample& img : train.images) {
    scores.push_back(dist(img.pixels, benign_mean) - dist(img.pixels, mal_mean));
    labels.push_back(img.label);
  }
  CHECK(testutil::auc_bruteforce(scores, labels) > 0.95);
}

TEST_CASE("generation is deterministic and ids are unique across splits") {
  const SyntheticConfig cfg = small_config();
  const auto [train1, test1] = generate(cfg);
  const auto [train2, test2] = generate(cfg);
  CHECK(train1 == train2);
  CHECK(test1 == test2);

  std::vector<std::uint32_t> ids;
  for (const VideoSample& v : train1.videos) ids.push_back(v.id);
  for (const VideoSample& v : test1.videos) ids.push_back(v.id);
  for (const ImageSample& img : train1.images) ids.push_back(img.id);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
}

TEST_CASE("save/load round-trip is bit-exact") {
  const TempDir tmp("data_roundtrip");
  const auto [train, test] = generate(small_config());
  const auto path = tmp.path() / "train.kgad";
  save_dataset(path, train);
  const Dataset loaded = load_dataset(path);
  CHECK(loaded == train);

  // saving the loaded dataset reproduces the file byte for byte
  const auto path2 = tmp.path() / "again.kgad";
  save_dataset(path2, loaded);
  CHECK(testutil::slurp(path) == testutil::slurp(path2));
}

TEST_CASE("empty dataset round-trips") {
  const TempDir tmp("data_empty");
  Dataset empty;
  empty.dim = 8;
  const auto path = tmp.path() / "empty.kgad";
  save_dataset(path, empty);
  const Dataset loaded = load_dataset(path);
  CHECK(loaded.videos.empty());
  CHECK(loaded.images.empty());
}

TEST_CASE("malformed files raise ParseError, not crashes") {
  const TempDir tmp("data_bad");
  const auto [train, test] = generate(small_config());
  const auto path = tmp.path() / "train.kgad";
  save_dataset(path, train);
  const std::string blob = testutil::slurp(path);

  auto write_blob = [&](const std::string& content) {
    const auto p = tmp.path() / "bad.kgad";
    std::ofstream out(p, std::ios::binary);
    out << content;
    out.close();
    return p;
  };

  // truncation at several byte offsets
  for (const std::size_t cut : {std::size_t{3}, std::size_t{10}, blob.size() / 2, blob.size() - 1}) {
    const auto p = write_blob(blob.substr(0, cut));
    CHECK_THROWS_AS(load_dataset(p), ParseError);
  }

  // bad magic
  std::string bad_magic = blob;
  bad_magic[0] = 'Z';
  CHECK_THROWS_AS(load_dataset(write_blob(bad_magic)), ParseError);

  // future version
  std::string bad_version = blob;
  bad_version[4] = 2;
  CHECK_THROWS_AS(load_dataset(write_blob(bad_version)), VersionError);

  // label out of range (label byte of the first record sits after
  // magic + version + two u32 counts + record id)
  std::string bad_label = blob;
  bad_label[4 + 1 + 4 + 4 + 4] = 7;
  CHECK_THROWS_AS(load_dataset(write_blob(bad_label)), ParseError);

  // trailing garbage
  CHECK_THROWS_AS(load_dataset(write_blob(blob + "x")), ParseError);

  // byte offset is reported
  try {
    load_dataset(write_blob(blob.substr(0, 10)));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
}

TEST_CASE("parse errors carry a usable byte offset") {
  const TempDir tmp("data_offset");
  Dataset empty;
  empty.dim = 4;
  const auto path = tmp.path() / "e.kgad";
  save_dataset(path, empty);
  const std::string blob = testutil::slurp(path);
  CHECK(blob.size() == 13);  // magic(4) + version(1) + counts(8)

  std::ofstream out(tmp.path() / "cut.kgad", std::ios::binary);
  out << blob.substr(0, 7);
  out.close();
  try {
    load_dataset(tmp.path() / "cut.kgad");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() == 5);  // failed reading the video count after magic+version
  }
}

TEST_CASE("sample_batch composition converges to one half videos") {
  const auto [train, test] = generate(small_config());
  rng::Engine eng(1234);
  std::size_t video_slots = 0, total_slots = 0;
  for (int b = 0; b < 10000; ++b) {
    const MixedBatch batch = sample_batch(eng, train, 16, 128);
    video_slots += batch.videos.size();
    total_slots += 16;
  }
  const double frac = static_cast<double>(video_slots) / static_cast<double>(total_slots);
  CHECK(frac > 0.48);
  CHECK(frac < 0.52);
}

TEST_CASE("sample_batch basic contracts") {
  const auto [train, test] = generate(small_config());
  rng::Engine eng(5);

  const MixedBatch one = sample_batch(eng, train, 1, 128);
  CHECK(one.videos.size() + one.images.size() == 1);

  Dataset no_images = train;
  no_images.images.clear();
  CHECK_THROWS_AS(sample_batch(eng, no_images, 4, 128), ContractError);

  const MixedBatch fixed = sample_batch(eng, train, 16, 128, true);
  CHECK(fixed.videos.size() == 8);
  CHECK(fixed.images.size() == 8);
}

TEST_CASE("long videos are subsampled in ascending temporal order") {
  Dataset ds;
  ds.dim = 2;
  VideoSample v;
  v.id = 1;
  v.label = Label::malignant;
  v.dim = 2;
  v.n_frames = 200;
  for (std::size_t f = 0; f < 200; ++f) {
    v.frames.push_back(static_cast<double>(f));  // frame index encoded in the data
    v.frames.push_back(0.0);
    v.keyframe_mask.push_back(f % 3 == 0);
  }
  ds.videos.push_back(v);
  ds.images.push_back(ImageSample{2, Label::benign, {0.0, 0.0}});

  rng::Engine eng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const MixedBatch batch = sample_batch(eng, ds, 4, 128);
    for (const VideoSample& sub : batch.videos) {
      REQUIRE(sub.n_frames == 128);
      REQUIRE(sub.keyframe_mask.size() == 128);
      for (std::size_t f = 0; f + 1 < sub.n_frames; ++f)
        CHECK(sub.frames[f * 2] < sub.frames[(f + 1) * 2]);
      // mask follows its frame
      for (std::size_t f = 0; f < sub.n_frames; ++f) {
        const auto original = static_cast<std::size_t>(sub.frames[f * 2]);
        CHECK(sub.keyframe_mask[f] == (original % 3 == 0 ? 1 : 0));
      }
    }
  }
}

TEST_CASE("batch streams are deterministic for a fixed seed") {
  const auto [train, test] = generate(small_config());
  auto stream = [&](std::uint64_t seed) {
    rng::Engine eng(seed);
    std::vector<std::uint32_t> ids;
    for (int b = 0; b < 20; ++b) {
      const MixedBatch batch = sample_batch(eng, train, 8, 128);
      for (const VideoSample& v : batch.videos) ids.push_back(v.id);
      for (const ImageSample& img : batch.images) ids.push_back(img.id);
    }
    return ids;
  };
  CHECK(stream(42) == stream(42));
  CHECK(stream(42) != stream(43));
}

TEST_CASE("synthetic config text round-trips") {
  SyntheticConfig cfg = small_config();
  cfg.keyframe_fraction = 0.37;
  const SyntheticConfig parsed = SyntheticConfig::from_text(cfg.canonical_text());
  CHECK(parsed.canonical_text() == cfg.canonical_text());
  CHECK_THROWS_AS(SyntheticConfig::from_text("nonsense=1\n"), ConfigError);
  CHECK_THROWS_AS(SyntheticConfig::from_text("input_dim\n"), ConfigError);
}
