#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kga/training.hpp"
#include "test_util.hpp"

using namespace kga;
using testutil::TempDir;

namespace {

SyntheticConfig small_data_config() {
  SyntheticConfig cfg;
  cfg.input_dim = 12;
  cfg.n_train_videos_per_class = 8;
  cfg.n_test_videos_per_class = 5;
  cfg.n_images_per_class = 20;
  cfg.frames_min = 4;
  cfg.frames_max = 10;
  cfg.seed = 3;
  return cfg;
}

TrainConfig small_train_config() {
  TrainConfig cfg;
  cfg.total_iters = 60;
  cfg.warmup_iters = 10;
  cfg.decay_iters = {30, 45};
  cfg.batch_size = 6;
  cfg.input_dim = 12;
  cfg.hidden_dim = 10;
  cfg.feature_dim = 6;
  cfg.log_interval = 10;
  cfg.seed = 17;
  return cfg;
}

std::vector<double> flat_params(const Model& m) {
  std::vector<double> out;
  for (const Parameter& p : m.parameters())
    out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("lr schedule endpoints and decay") {
  TrainConfig cfg;  // defaults: warmup 125, decays {500, 750}, total 1000
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(125, cfg) == 0.005);
  CHECK(lr_at(499, cfg) == 0.005);
  CHECK(lr_at(500, cfg) == doctest::Approx(0.0005).epsilon(1e-12));
  CHECK(lr_at(751, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(1000, cfg), ContractError);

  // piecewise monotone: non-decreasing through warmup, non-increasing after
  for (std::size_t i = 1; i < cfg.total_iters; ++i) {
    if (i <= cfg.warmup_iters)
      CHECK(lr_at(i, cfg) >= lr_at(i - 1, cfg));
    else
      CHECK(lr_at(i, cfg) <= lr_at(i - 1, cfg));
  }
}

TEST_CASE("paper-scale schedule hits the reference milestones") {
  TrainConfig cfg;
  cfg.apply_paper_schedule();
  CHECK(cfg.total_iters == 8000);
  CHECK(lr_at(1000, cfg) == 0.005);
  CHECK(lr_at(4000, cfg) == doctest::Approx(0.0005).epsilon(1e-12));
  CHECK(lr_at(6001, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
}

TEST_CASE("config validation and canonical text round-trip") {
  TrainConfig cfg = small_train_config();
  cfg.validate();

  TrainConfig bad = cfg;
  bad.warmup_iters = 40;  // collides with first decay milestone at 30
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.decay_iters = {50, 70};  // beyond total_iters 60
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  const TrainConfig parsed = TrainConfig::from_text(cfg.canonical_text());
  CHECK(parsed.canonical_text() == cfg.canonical_text());
  CHECK(parsed.config_hash() == cfg.config_hash());
  CHECK_THROWS_AS(TrainConfig::from_text("no_such_key=1\n"), ConfigError);
}

TEST_CASE("ablation names round-trip") {
  for (const Ablation a : {Ablation::full, Ablation::no_image_guidance, Ablation::no_coherence,
                           Ablation::no_coherence_no_attention})
    CHECK(ablation_from_name(ablation_name(a)) == a);
  CHECK(!ablation_from_name("bogus"));
}

TEST_CASE("normalize folds coherence-free ablations into lambda") {
  TrainConfig cfg = small_train_config();
  cfg.ablation = Ablation::no_coherence;
  cfg.normalize();
  CHECK(cfg.lambda_coherence == 0.0);

  TrainConfig full = small_train_config();
  full.normalize();
  CHECK(full.lambda_coherence == 1.0);
}

TEST_CASE("training is bitwise deterministic over 100 steps") {
  const auto [train_split, test_split] = generate(small_data_config());
  TrainConfig cfg = small_train_config();
  cfg.total_iters = 100;
  cfg.decay_iters = {60, 80};

  const TrainResult a = train(cfg, train_split);
  const TrainResult b = train(cfg, train_split);
  CHECK(flat_params(a.state.model) == flat_params(b.state.model));
  CHECK(a.state.centers.benign == b.state.centers.benign);
  CHECK(a.state.centers.malignant == b.state.centers.malignant);
  CHECK(rng::serialize(a.state.batch_rng) == rng::serialize(b.state.batch_rng));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i)
    CHECK(history_jsonl_line(a.history[i]) == history_jsonl_line(b.history[i]));
}

TEST_CASE("loss breakdown identity holds at every logged step") {
  const auto [train_split, test_split] = generate(small_data_config());
  for (const Ablation a : {Ablation::full, Ablation::no_image_guidance, Ablation::no_coherence,
                           Ablation::no_coherence_no_attention}) {
    TrainConfig cfg = small_train_config();
    cfg.total_iters = 20;
    cfg.decay_iters = {12, 16};
    cfg.ablation = a;
    cfg.log_interval = 1;
    const TrainResult r = train(cfg, train_split);
    REQUIRE(r.history.size() == 20);
    for (const HistoryEntry& h : r.history) {
      const LossBreakdown& b = h.losses;
      const double reconstructed =
          b.ce_video + b.ce_image + b.ce_frame + b.center + b.lambda * b.coherence;
      CHECK(std::abs(b.total - reconstructed) <= 1e-12);
      CHECK(b.coherence >= 0.0);  // reported even when lambda is 0
    }
  }
}

TEST_CASE("zero-iteration training returns the initialized model") {
  const auto [train_split, test_split] = generate(small_data_config());
  TrainConfig cfg = small_train_config();
  cfg.total_iters = 1;  // validate() needs decay < total
  cfg.decay_iters.clear();
  cfg.warmup_iters = 0;

  const TrainResult zero = train(cfg, train_split, std::nullopt, std::size_t{0});
  const TrainState fresh(cfg);
  CHECK(zero.state.iter == 0);
  CHECK(flat_params(zero.state.model) == flat_params(fresh.model));
  CHECK(zero.history.empty());
}

TEST_CASE("center fixed point: image features equal to centers stay put") {
  // one image per class; set each center to that image's current feature
  const auto [train_split, test_split] = generate(small_data_config());
  TrainConfig cfg = small_train_config();
  cfg.base_lr = 1e-9;  // near-zero step so features barely move
  cfg.warmup_iters = 0;
  cfg.decay_iters.clear();
  cfg.total_iters = 1;
  cfg.momentum = 0.0;

  TrainState state(cfg);
  MixedBatch batch;
  batch.images.push_back(train_split.images.front());
  batch.images.push_back(train_split.images.back());
  REQUIRE(batch.images[0].label != batch.images[1].label);

  for (const ImageSample& img : batch.images) {
    const auto [feature, logits] = state.model.image_forward(img.pixels_tensor());
    auto c = state.centers.of(img.label);
    std::copy(feature.data().begin(), feature.data().end(), c.begin());
  }
  const std::vector<double> benign_before = state.centers.benign;
  const std::vector<double> mal_before = state.centers.malignant;

  const LossBreakdown b = train_step(state, batch, cfg);
  CHECK(b.center == 0.0);
  CHECK(state.centers.benign == benign_before);
  CHECK(state.centers.malignant == mal_before);
}

TEST_CASE("no_image_guidance ignores images and still moves centers") {
  const auto [train_split, test_split] = generate(small_data_config());
  TrainConfig cfg = small_train_config();
  cfg.ablation = Ablation::no_image_guidance;
  cfg.total_iters = 8;
  cfg.decay_iters = {4, 6};
  cfg.warmup_iters = 2;
  cfg.log_interval = 1;

  const TrainResult r = train(cfg, train_split);
  for (const HistoryEntry& h : r.history) CHECK(h.losses.ce_image == 0.0);
  // centers were updated from video-frame features
  bool moved = false;
  for (const double v : r.state.centers.benign) moved |= v != 0.0;
  CHECK(moved);
}

TEST_CASE("divergence aborts with the offending term named") {
  const auto [train_split, test_split] = generate(small_data_config());
  TrainConfig cfg = small_train_config();
  TrainState state(cfg);

  // poison a backbone weight
  state.model.param("backbone.fc1.weight").tensor.mutable_data()[0] =
      std::numeric_limits<double>::quiet_NaN();
  rng::Engine eng(1);
  const MixedBatch batch = sample_batch(eng, train_split, 4, cfg.max_frames);
  try {
    train_step(state, batch, cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("non-finite loss term") != std::string::npos);
  }
}

TEST_CASE("checkpoint save/load/resume is bit-exact") {
  const TempDir tmp("ckpt");
  const auto [train_split, test_split] = generate(small_data_config());
  TrainConfig cfg = small_train_config();

  // uninterrupted run
  const TrainResult full = train(cfg, train_split);

  // stop at 25, checkpoint, reload, resume to the end
  TrainResult part = train(cfg, train_split, std::nullopt, std::size_t{25});
  CHECK(part.state.iter == 25);
  const auto ckpt = tmp.path() / "mid.kgat";
  save_checkpoint(ckpt, part.state, cfg);
  auto [resumed_state, resumed_cfg] = load_checkpoint(ckpt);
  CHECK(resumed_cfg.canonical_text() == cfg.canonical_text());
  const TrainResult finished = train(resumed_cfg, train_split, std::move(resumed_state));

  CHECK(flat_params(finished.state.model) == flat_params(full.state.model));
  CHECK(finished.state.centers.benign == full.state.centers.benign);
  CHECK(finished.state.centers.malignant == full.state.centers.malignant);
  CHECK(rng::serialize(finished.state.batch_rng) == rng::serialize(full.state.batch_rng));

  // saved twice, the final checkpoints are byte-identical
  const auto final_a = tmp.path() / "a.kgat";
  const auto final_b = tmp.path() / "b.kgat";
  save_checkpoint(final_a, full.state, cfg);
  save_checkpoint(final_b, finished.state, cfg);
  CHECK(testutil::slurp(final_a) == testutil::slurp(final_b));
}

TEST_CASE("checkpoint rejects corruption") {
  const TempDir tmp("ckpt_bad");
  const auto [train_split, test_split] = generate(small_data_config());
  TrainConfig cfg = small_train_config();
  TrainState state(cfg);
  const auto path = tmp.path() / "c.kgat";
  save_checkpoint(path, state, cfg);
  std::string blob = testutil::slurp(path);

  auto write_blob = [&](const std::string& content) {
    const auto p = tmp.path() / "bad.kgat";
    std::ofstream out(p, std::ios::binary);
    out << content;
    out.close();
    return p;
  };

  std::string bad_magic = blob;
  bad_magic[0] = 'Q';
  CHECK_THROWS_AS(load_checkpoint(write_blob(bad_magic)), ParseError);

  std::string bad_version = blob;
  bad_version[4] = 3;
  CHECK_THROWS_AS(load_checkpoint(write_blob(bad_version)), VersionError);

  CHECK_THROWS_AS(load_checkpoint(write_blob(blob.substr(0, blob.size() - 5))), ParseError);

  // flip one config byte: the stored hash no longer matches
  std::string bad_config = blob;
  bad_config[4 + 1 + 8 + 4 + 3] ^= 1;  // inside the config text
  CHECK_THROWS_AS(load_checkpoint(write_blob(bad_config)), ParseError);
}

TEST_CASE("history lines follow the documented jsonl schema") {
  HistoryEntry h;
  h.iter = 42;
  h.losses = {0.5, 0.25, 0.125, 0.0625, 0.03125, 0.96875, 1.0};
  CHECK(history_jsonl_line(h) ==
        "{\"iter\":42,\"ce_video\":0.5,\"ce_image\":0.25,\"ce_frame\":0.125,"
        "\"center\":0.0625,\"coherence\":0.03125,\"total\":0.96875}");
}

TEST_CASE("attention-distance correlation falls during a full-config run") {
  SyntheticConfig data_cfg;  // modest size but the real premise
  data_cfg.input_dim = 16;
  data_cfg.n_train_videos_per_class = 20;
  data_cfg.n_test_videos_per_class = 8;
  data_cfg.n_images_per_class = 60;
  data_cfg.seed = 9;
  const auto [train_split, test_split] = generate(data_cfg);

  TrainConfig cfg;
  cfg.total_iters = 300;
  cfg.warmup_iters = 40;
  cfg.decay_iters = {150, 225};
  cfg.input_dim = 16;
  cfg.hidden_dim = 16;
  cfg.feature_dim = 8;
  cfg.seed = 4;

  const TrainState before(cfg);
  const double r0 =
      attention_distance_correlation(evaluate(before.model, before.centers, test_split).records);

  const TrainResult r = train(cfg, train_split);
  const double r1 = attention_distance_correlation(
      evaluate(r.state.model, r.state.centers, test_split).records);

  CHECK(r1 < r0);
  CHECK(r1 < -0.3);
}
