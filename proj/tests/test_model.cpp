#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "kga/losses.hpp"
#include "kga/model.hpp"
#include "test_util.hpp"

using namespace kga;
using testutil::max_rel_err;
using testutil::random_vector;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dim = 6;
  cfg.feature_dim = 4;
  cfg.seed = 99;
  return cfg;
}

void set_param(Model& m, std::string_view name, const std::vector<double>& values) {
  auto dst = m.param(name).tensor.mutable_data();
  REQUIRE(dst.size() == values.size());
  std::copy(values.begin(), values.end(), dst.begin());
}

void zero_param(Model& m, std::string_view name) {
  auto dst = m.param(name).tensor.mutable_data();
  std::fill(dst.begin(), dst.end(), 0.0);
}

}  // namespace

TEST_CASE("zeroed weights make features depend on biases only") {
  Model m(tiny_config());
  zero_param(m, "backbone.fc1.weight");
  zero_param(m, "backbone.fc2.weight");
  set_param(m, "backbone.fc2.bias", {0.3, -0.1, 0.7, 0.0});

  rng::Engine eng(1);
  const Tensor batch = Tensor::from({3, 5}, random_vector(eng, 15, -2, 2));
  const Tensor f = m.backbone_forward(batch);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(f.at(i, 0) == doctest::Approx(std::tanh(0.3)).epsilon(1e-15));
    CHECK(f.at(i, 1) == doctest::Approx(std::tanh(-0.1)).epsilon(1e-15));
    CHECK(f.at(i, 2) == doctest::Approx(std::tanh(0.7)).epsilon(1e-15));
    CHECK(f.at(i, 3) == 0.0);
  }
}

TEST_CASE("duplicated frames produce identical feature rows") {
  Model m(tiny_config());
  rng::Engine eng(2);
  const std::vector<double> frame = random_vector(eng, 5, -1, 1);
  std::vector<double> clip;
  for (int i = 0; i < 4; ++i) clip.insert(clip.end(), frame.begin(), frame.end());
  const Tensor f = m.backbone_forward(Tensor::from({4, 5}, clip));
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(f.at(i, j) == f.at(0, j));
}

TEST_CASE("image path and video path share the backbone by identity") {
  Model m(tiny_config());
  rng::Engine eng(3);
  const std::vector<double> pixels = random_vector(eng, 5, -1, 1);

  const auto [image_feature, image_logits] = m.image_forward(Tensor::from({5}, pixels));
  const VideoForwardOutput video = m.video_forward(Tensor::from({1, 5}, pixels));
  for (std::size_t j = 0; j < 4; ++j) CHECK(image_feature.at(j) == video.frame_features.at(0, j));

  // mutating a shared parameter moves both paths
  auto w = m.param("backbone.fc1.weight").tensor.mutable_data();
  w[0] += 0.25;
  const auto [feature2, logits2] = m.image_forward(Tensor::from({5}, pixels));
  const VideoForwardOutput video2 = m.video_forward(Tensor::from({1, 5}, pixels));
  CHECK(feature2.at(0) != image_feature.at(0));
  for (std::size_t j = 0; j < 4; ++j) CHECK(feature2.at(j) == video2.frame_features.at(0, j));
}

TEST_CASE("attention weights: zero-initialized FC gives 0.5 everywhere") {
  Model m(tiny_config());
  zero_param(m, "attention.fc.weight");
  rng::Engine eng(4);
  const Tensor f = Tensor::from({6, 4}, random_vector(eng, 24, -1, 1));
  const Tensor w = m.attention_weights(f);
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.at(i) == 0.5);
}

TEST_CASE("attention weights pick up a hand-set coordinate") {
  Model m(tiny_config());
  set_param(m, "attention.fc.weight", {1.0, 0.0, 0.0, 0.0});
  const Tensor f = Tensor::from({3, 4}, {-1, 9, 9, 9, 0, 9, 9, 9, 1, 9, 9, 9});
  const Tensor w = m.attention_weights(f);
  const auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  CHECK(w.at(0) == doctest::Approx(sig(-1)).epsilon(1e-15));
  CHECK(w.at(1) == 0.5);
  CHECK(w.at(2) == doctest::Approx(sig(1)).epsilon(1e-15));
}

TEST_CASE("attention weights are permutation equivariant and inside (0,1)") {
  Model m(tiny_config());
  rng::Engine eng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng::uniform_below(eng, 7);
    const std::vector<double> fv = random_vector(eng, n * 4, -1, 1);
    const Tensor w = m.attention_weights(Tensor::from({n, 4}, fv));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(w.at(i) > 0.0);
      CHECK(w.at(i) < 1.0);
    }

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng::uniform_below(eng, i)]);
    std::vector<double> permuted(n * 4);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 4; ++j) permuted[i * 4 + j] = fv[perm[i] * 4 + j];
    const Tensor wp = m.attention_weights(Tensor::from({n, 4}, permuted));
    for (std::size_t i = 0; i < n; ++i) CHECK(wp.at(i) == w.at(perm[i]));
  }
}

TEST_CASE("aggregate worked values") {
  const Tensor f = Tensor::from({2, 2}, {1, 0, 0, 1});

  const Tensor zero = Model::aggregate(f, Tensor::from({2}, {0, 0}));
  CHECK(zero.at(0) == 0.0);
  CHECK(zero.at(1) == 0.0);

  const Tensor single = Model::aggregate(Tensor::from({1, 2}, {3, 7}), Tensor::from({1}, {1.0}));
  CHECK(single.at(0) == 3.0);
  CHECK(single.at(1) == 7.0);

  const Tensor mixed = Model::aggregate(f, Tensor::from({2}, {0.25, 0.75}));
  CHECK(mixed.at(0) == 0.25);
  CHECK(mixed.at(1) == 0.75);
}

TEST_CASE("video forward composes the pieces") {
  Model m(tiny_config());
  rng::Engine eng(6);
  const Tensor clip = Tensor::from({3, 5}, random_vector(eng, 15, -1, 1));
  const VideoForwardOutput out = m.video_forward(clip);

  CHECK(out.frame_features.shape() == Shape{3, 4});
  CHECK(out.attention_weights.shape() == Shape{3});
  CHECK(out.aggregated_feature.shape() == Shape{4});
  CHECK(out.video_logits.shape() == Shape{2});
  CHECK(out.frame_logits.shape() == Shape{3, 2});

  // aggregated == sum_i w_i f_i exactly as computed
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += out.attention_weights.at(i) * out.frame_features.at(i, j);
    CHECK(out.aggregated_feature.at(j) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("single-frame clip: video logits equal head(w1 * f1)") {
  Model m(tiny_config());
  rng::Engine eng(7);
  const VideoForwardOutput out = m.video_forward(Tensor::from({1, 5}, random_vector(eng, 5, -1, 1)));

  const auto head_w = m.param("head.weight").tensor;
  const auto head_b = m.param("head.bias").tensor;
  for (std::size_t c = 0; c < 2; ++c) {
    double logit = head_b.at(c);
    for (std::size_t j = 0; j < 4; ++j)
      logit += out.attention_weights.at(0) * out.frame_features.at(0, j) * head_w.at(j, c);
    CHECK(out.video_logits.at(c) == doctest::Approx(logit).epsilon(1e-12));
  }
}

TEST_CASE("frame permutation leaves video logits unchanged and permutes frame fields") {
  Model m(tiny_config());
  rng::Engine eng(8);
  const std::size_t n = 5;
  const std::vector<double> fv = random_vector(eng, n * 5, -1, 1);
  const VideoForwardOutput base = m.video_forward(Tensor::from({n, 5}, fv));

  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> pv(n * 5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 5; ++j) pv[i * 5 + j] = fv[perm[i] * 5 + j];
  const VideoForwardOutput permuted = m.video_forward(Tensor::from({n, 5}, pv));

  CHECK(permuted.video_logits.at(0) ==
        doctest::Approx(base.video_logits.at(0)).epsilon(1e-12));
  CHECK(permuted.video_logits.at(1) ==
        doctest::Approx(base.video_logits.at(1)).epsilon(1e-12));
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(permuted.attention_weights.at(i) == base.attention_weights.at(perm[i]));
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(permuted.frame_logits.at(i, c) == base.frame_logits.at(perm[i], c));
  }
}

TEST_CASE("video forward contract errors") {
  Model m(tiny_config());
  CHECK_THROWS_AS(m.video_forward(Tensor::zeros({0, 5})), ContractError);
  CHECK_THROWS_AS(m.video_forward(Tensor::zeros({2, 4})), ConfigError);
  CHECK_THROWS_AS(m.image_forward(Tensor::zeros({4})), ConfigError);
  ModelConfig small = tiny_config();
  small.max_frames = 3;
  Model limited(small);
  CHECK_THROWS_AS(limited.video_forward(Tensor::zeros({4, 5})), ContractError);
}

TEST_CASE("attention-free mode aggregates with the uniform mean") {
  ModelConfig cfg = tiny_config();
  cfg.attention_enabled = false;
  Model m(cfg);
  rng::Engine eng(9);
  const VideoForwardOutput out = m.video_forward(Tensor::from({4, 5}, random_vector(eng, 20, -1, 1)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.attention_weights.at(i) == 0.25);
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += out.frame_features.at(i, j);
    mean /= 4.0;
    CHECK(out.aggregated_feature.at(j) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("video CE gradient w.r.t. every parameter matches finite differences") {
  rng::Engine eng(10);
  const Tensor clip = Tensor::from({3, 5}, random_vector(eng, 15, -1, 1));
  const std::vector<Label> label{Label::malignant};

  Model m(tiny_config());
  auto loss_value = [&](Model& model) {
    const VideoForwardOutput out = model.video_forward(clip);
    return cross_entropy(reshape(out.video_logits, {1, 2}), label);
  };

  loss_value(m).backward();

  double worst = 0.0;
  for (Parameter& p : m.parameters()) {
    const Tensor x0 = p.tensor.detach();
    const Tensor fd = finite_diff_grad(
        [&](const Tensor& probe) {
          auto dst = p.tensor.mutable_data();
          std::copy(probe.data().begin(), probe.data().end(), dst.begin());
          const double v = loss_value(m).value();
          std::copy(x0.data().begin(), x0.data().end(), dst.begin());
          return v;
        },
        x0, 1e-5);
    worst = std::max(worst, max_rel_err(p.tensor.grad(), fd.data()));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("parameter map round-trips bit-exactly") {
  Model a(tiny_config());
  std::ostringstream os;
  a.save_params(os);

  ModelConfig other = tiny_config();
  other.seed = 12345;  // different init, must be overwritten by load
  Model b(other);
  std::istringstream is(os.str());
  b.load_params(is);

  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto da = a.parameters()[i].tensor.data();
    const auto db = b.parameters()[i].tensor.data();
    REQUIRE(da.size() == db.size());
    for (std::size_t j = 0; j < da.size(); ++j) CHECK(da[j] == db[j]);
  }

  std::ostringstream os2;
  b.save_params(os2);
  CHECK(os.str() == os2.str());
}

TEST_CASE("parameter map rejects corruption") {
  Model m(tiny_config());
  std::ostringstream os;
  m.save_params(os);
  std::string blob = os.str();

  std::string bad_magic = blob;
  bad_magic[0] = 'X';
  std::istringstream is1(bad_magic);
  CHECK_THROWS_AS(m.load_params(is1), ParseError);

  std::string bad_version = blob;
  bad_version[4] = 9;
  std::istringstream is2(bad_version);
  CHECK_THROWS_AS(m.load_params(is2), VersionError);

  std::istringstream is3(blob.substr(0, blob.size() / 2));
  CHECK_THROWS_AS(m.load_params(is3), ParseError);
}
