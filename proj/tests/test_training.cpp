#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "evb/errors.hpp"
#include "evb/training.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace evb;
using namespace evb::nn;

namespace {

Var<float> image_var(int h, int w, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor<float> t(1, h, w);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return Var<float>(t);
}

NetworkConfig tiny_net() {
  NetworkConfig c;
  c.levels = 1;
  c.stem_channels = 16;
  c.dense_layers = 2;
  c.growth = 8;
  return c;
}

TrainConfig quick(int epochs, int crop = 16) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 2;
  t.crop = crop;
  t.seed = 3;
  return t;
}

}  // namespace

TEST_CASE("l1 loss examples") {
  const auto a = image_var(6, 7, 1);
  CHECK(l1_loss(a, a).value()[0] == 0.0f);
  Tensor<float> shifted = a.value();
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.5f;
  CHECK(l1_loss(Var<float>(shifted), a).value()[0] == doctest::Approx(0.5).epsilon(1e-6));
  const auto b = image_var(6, 7, 2);
  CHECK(l1_loss(a, b).value()[0] == l1_loss(b, a).value()[0]);
  CHECK_THROWS_AS(l1_loss(a, image_var(6, 8, 3)), ShapeError);
  Image x(3, 3, 0.2), y(3, 3, 0.5);
  CHECK(evb::l1_loss(x, y) == doctest::Approx(0.3));
}

TEST_CASE("perceptual loss") {
  const auto ext = ConvStackExtractor<float>::random();
  CHECK(ext.layer_count() == 3);
  const auto a = image_var(16, 16, 4);
  CHECK(perceptual_loss(a, a, ext).value()[0] == 0.0f);

  // Oracle: mean over layers of squared feature distance / (W H), summed here
  // straight from the feature maps.
  const auto b = image_var(16, 16, 5);
  const auto fa = ext.features(a);
  const auto fb = ext.features(b);
  double expect = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    double s = 0.0;
    for (std::size_t i = 0; i < fa[l].value().size(); ++i) {
      const double d = fa[l].value()[i] - fb[l].value()[i];
      s += d * d;
    }
    expect += s / (16.0 * 16.0);
  }
  expect /= static_cast<double>(fa.size());
  CHECK(perceptual_loss(a, b, ext).value()[0] == doctest::Approx(expect).epsilon(1e-5));

  // growing a contrast perturbation around the mean grows the loss
  double previous = 0.0;
  for (float k : {0.05f, 0.1f, 0.2f, 0.4f}) {
    Tensor<float> t = a.value();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.5f + (1.0f + k) * (t[i] - 0.5f);
    const double v = perceptual_loss(Var<float>(t), a, ext).value()[0];
    CHECK(v >= 0.0);
    CHECK(v > previous);
    previous = v;
  }
}

TEST_CASE("total loss composition") {
  const auto ext = std::make_shared<ConvStackExtractor<float>>(ConvStackExtractor<float>::random());
  const auto a = image_var(12, 12, 6);
  const auto b = image_var(12, 12, 7);
  CHECK(evb::nn::total_loss<float>(a, b, 0.0, nullptr).value()[0] == l1_loss(a, b).value()[0]);
  const float l1 = l1_loss(a, b).value()[0];
  const float pl = perceptual_loss(a, b, *ext).value()[0];
  CHECK(evb::nn::total_loss<float>(a, b, 1.0, ext.get()).value()[0] == doctest::Approx(l1 + pl).epsilon(1e-6));
  LossConfig cfg{0.7, ext};
  CHECK(evb::total_loss(a, a, cfg).value()[0] == 0.0f);
  CHECK_THROWS(evb::nn::total_loss<float>(a, b, 0.5, nullptr));
  CHECK_THROWS((LossConfig{-1.0, ext}.validate()));
  CHECK_THROWS((LossConfig{0.5, nullptr}.validate()));
  CHECK_NOTHROW((LossConfig{0.0, nullptr}.validate()));
}

TEST_CASE("adam first step moves each parameter by lr against the gradient sign") {
  ParameterSet<double> params;
  Tensor<double> init(1, 1, 4);
  init[0] = 1.0;
  init[1] = -2.0;
  init[2] = 0.5;
  init[3] = 3.0;
  auto p = params.add("p", init);
  Tensor<double> target(1, 1, 4);
  // d/dp mean|p - target| = sign(p - target) / 4
  backward(mean_abs_error(p, Var<double>(target)));
  Adam<double> adam(params, 0.01);
  adam.step();
  CHECK(adam.steps() == 1);
  for (int i = 0; i < 4; ++i) {
    const double g = (init[i] > 0 ? 0.25 : -0.25);
    const double expect = init[i] - 0.01 * g / (std::abs(g) + 1e-8);
    CHECK(p.value()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("a tiny adam step lowers the loss") {
  const NetworkConfig cfg = evbtest::tiny_config();
  DeblurNet<double> net(cfg, 8);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  Tensor<double> img(1, 8, 8), gt(1, 8, 8), vox(cfg.bins, 8, 8);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = std::log(u(rng));
    gt[i] = u(rng);
  }
  for (std::size_t i = 0; i < vox.size(); ++i) vox[i] = u(rng) - 0.5;
  auto loss = [&] {
    return evb::nn::total_loss<double>(evb::nn::exp(net.forward(Var<double>(img), Var<double>(vox))), Var<double>(gt),
                                       0.0, nullptr);
  };
  const auto before = loss();
  net.parameters().zero_grad();
  backward(before);
  Adam<double> adam(net.parameters(), 1e-6);
  adam.step();
  CHECK(loss().value()[0] < before.value()[0]);
}

TEST_CASE("crop sampling") {
  const Sample s = evbtest::scene_sample(40, 48, 2, 3);
  std::mt19937_64 rng(1);
  const auto dense = sample_crop(s, 16, 0.0, 20, rng);
  CHECK(dense.draws == 1);
  CHECK_FALSE(dense.fallback);

  Sample quiet = s;
  quiet.events = EventStream(48, 40);
  const auto empty = sample_crop(quiet, 16, 0.05, 7, rng);
  CHECK(empty.fallback);
  CHECK(empty.draws == 7);
  CHECK(empty.event_count == 0);

  std::mt19937_64 r1(5), r2(5);
  const auto c1 = sample_crop(s, 16, 0.05, 20, r1);
  const auto c2 = sample_crop(s, 16, 0.05, 20, r2);
  CHECK(c1.x0 == c2.x0);
  CHECK(c1.y0 == c2.y0);
  CHECK(c1.sample.events == c2.sample.events);

  CHECK_THROWS_AS(sample_crop(s, 41, 0.0, 5, rng), std::invalid_argument);
}

TEST_CASE("crops are aligned across image, targets and events") {
  const Sample s = evbtest::scene_sample(40, 48, 3, 4);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto c = sample_crop(s, 16, 0.02, 10, rng);
    CHECK(c.sample.blurry.pixels == crop(s.blurry.pixels, c.x0, c.y0, 16, 16));
    CHECK(c.sample.sharp.pixels == crop(s.sharp.pixels, c.x0, c.y0, 16, 16));
    REQUIRE(c.sample.hfr_targets.size() == 3);
    CHECK(c.sample.hfr_targets[2].pixels == crop(s.hfr_targets[2].pixels, c.x0, c.y0, 16, 16));
    CHECK(c.sample.exposure == s.exposure);
    const auto full = voxelize(s.events, s.exposure.window(), 6);
    CHECK(voxelize(c.sample.events, s.exposure.window(), 6) == crop(full, c.x0, c.y0, 16, 16));
    std::size_t inside = 0;
    for (const auto& e : s.events.events()) {
      if (e.x >= c.x0 && e.x < c.x0 + 16 && e.y >= c.y0 && e.y < c.y0 + 16) ++inside;
    }
    CHECK(c.event_count == inside);
    CHECK(c.sample.events.size() == inside);
  }
}

TEST_CASE("crop to size multiple") {
  const Sample s = evbtest::scene_sample(21, 30, 1, 5);
  const Sample c = crop_to_multiple(s, 8);
  CHECK(c.blurry.pixels.height() == 16);
  CHECK(c.blurry.pixels.width() == 24);
  CHECK(c.blurry.pixels == crop(s.blurry.pixels, 0, 0, 24, 16));
  CHECK_THROWS_AS(crop_to_multiple(s, 32), ShapeError);
}

TEST_CASE("train config validation") {
  CHECK_NOTHROW(TrainConfig{}.validate(8));
  TrainConfig t;
  t.crop = 60;
  CHECK_THROWS(t.validate(8));
  t = TrainConfig{};
  t.learning_rate = -1;
  CHECK_THROWS(t.validate(8));
  t = TrainConfig{};
  t.batch_size = 0;
  CHECK_THROWS(t.validate(8));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  std::vector<Sample> train{evbtest::scene_sample(16, 16, 1, 1), evbtest::scene_sample(16, 16, 1, 2)};
  NetworkConfig net = tiny_net();
  net.head_init = HeadInit::random;
  TrainConfig tc = quick(1);
  tc.learning_rate = 0.0;
  const auto result = train_deblur(train, {}, net, tc, LossConfig{0.0, nullptr});
  const DeblurNet<float> fresh(net, tc.seed);
  const auto trained = load_deblur_net(result.last);
  for (std::size_t i = 0; i < fresh.parameters().items().size(); ++i) {
    CHECK(fresh.parameters().items()[i].var.value() == trained.parameters().items()[i].var.value());
  }
}

TEST_CASE("deblur training lowers the loss and records history") {
  std::vector<Sample> train, val;
  for (int i = 0; i < 4; ++i) train.push_back(evbtest::scene_sample(16, 16, 3, 30 + i));
  val.push_back(evbtest::scene_sample(16, 16, 3, 20));
  std::vector<int> seen;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { seen.push_back(r.epoch); };
  const auto r = train_deblur(train, val, tiny_net(), quick(30), LossConfig{0.0, nullptr}, hooks);
  REQUIRE(r.history.size() == 30);
  CHECK(seen.size() == 30);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
  CHECK(std::isfinite(r.history.back().val_loss));
  CHECK(r.best.metadata.epoch == r.best_epoch);
  CHECK(r.last.metadata.train_loss.size() == 30);
  double lowest = std::numeric_limits<double>::infinity();
  int arg = 0;
  for (const auto& h : r.history) {
    if (h.val_loss < lowest) {
      lowest = h.val_loss;
      arg = h.epoch;
    }
  }
  CHECK(r.best_epoch == arg);

  // same seed, same result
  const auto again = train_deblur(train, val, tiny_net(), quick(30), LossConfig{0.0, nullptr});
  CHECK(again.last.parameters == r.last.parameters);
}

TEST_CASE("early stop threshold") {
  std::vector<Sample> train{evbtest::scene_sample(16, 16, 1, 1)};
  TrainConfig tc = quick(50);
  tc.stop_below = 10.0;
  const auto r = train_deblur(train, {}, tiny_net(), tc, LossConfig{0.0, nullptr});
  CHECK(r.history.size() == 1);
}

TEST_CASE("hfr training with q = 1 and q = 3") {
  for (int q : {1, 3}) {
    std::vector<Sample> train{evbtest::scene_sample(16, 16, q, 30), evbtest::scene_sample(16, 16, q, 31)};
    const auto r = train_hfr(train, {}, tiny_net(), quick(30), LossConfig{0.0, nullptr});
    CHECK(r.history.size() == 30);
    if (q == 3) CHECK(r.history.back().train_loss < 0.95 * r.history.front().train_loss);
    const auto net = load_hfr_net(r.best);
    const auto frames = rollout_hfr(net, train[0]);
    CHECK(frames.size() == static_cast<std::size_t>(q));
  }
}

TEST_CASE("non-finite loss aborts") {
  std::vector<Sample> train{evbtest::scene_sample(16, 16, 1, 1)};
  const NetworkConfig cfg = tiny_net();
  Checkpoint ck = capture(DeblurNet<float>(cfg, 0), NetworkKind::deblur);
  ck.parameters.back().data[0] = std::numeric_limits<float>::quiet_NaN();
  TrainHooks hooks;
  hooks.init = &ck;
  CHECK_THROWS_AS(train_deblur(train, {}, cfg, quick(2), LossConfig{0.0, nullptr}, hooks), TrainingError);
  CHECK_THROWS(train_deblur({}, {}, cfg, quick(2), LossConfig{0.0, nullptr}));
}
