#include <cmath>
#include <random>

#include "doctest.h"
#include "metacount/metatrain.hpp"

using namespace metacount;

namespace {

// L(w) = sum (w - c)^2 over the first parameter.
metatrain::LossFn quadratic(double c) {
  return [c](ad::Graph& g, std::span<const ad::Var> p) {
    return ad::sum(ad::square(ad::sub(p[0], g.constant(Tensor(p[0].shape(), c)))));
  };
}

double meta_grad(double w, double c, double alpha, bool second_order) {
  const std::vector<metatrain::MetaTask> tasks{{quadratic(c), quadratic(c)}};
  const std::vector<Tensor> params{Tensor::scalar(w)};
  return metatrain::meta_gradient(params, tasks, alpha, 1, second_order).grads[0].item();
}

nn::NetConfig tiny_net(std::uint64_t seed) {
  nn::NetConfig cfg;
  cfg.extractor = {{4, 3, 1}, {4, 3, 2}};
  cfg.estimator = {{4, 3, 2}, {1, 3, 1}};
  cfg.init_std = 0.1;
  cfg.seed = seed;
  return cfg;
}

scenes::ScenePool tiny_pool(std::uint64_t seed, std::size_t scenes = 4, std::size_t images = 8) {
  scenes::GeneratorOptions opts;
  opts.height = opts.width = 16;
  opts.downsample = 2;
  return scenes::generate_scene_pool(scenes, images, seed, opts);
}

void check_extractor_unchanged(const nn::ModelParams& a, const nn::ModelParams& b) {
  REQUIRE(a.extractor.size() == b.extractor.size());
  for (std::size_t i = 0; i < a.extractor.size(); ++i) CHECK(a.extractor[i] == b.extractor[i]);
}

}  // namespace

TEST_CASE("one inner step on (w-1)^2") {
  ad::Graph g;
  auto w = g.parameter(Tensor::scalar(0.0));
  const std::vector<ad::Var> p{w};
  auto adapted = metatrain::adapt(g, p, quadratic(1.0), 0.1, 1, true);
  CHECK(adapted[0].value().item() == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("second-order meta-gradient on the quadratic family") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0), ua(0.0, 0.4);
  for (int i = 0; i < 100; ++i) {
    const double w = u(rng), c = u(rng), a = ua(rng);
    const double expect = 2.0 * (1 - 2 * a) * (1 - 2 * a) * (w - c);
    const double got = meta_grad(w, c, a, true);
    CHECK(std::abs(got - expect) <= 1e-8 * std::max(std::abs(expect), 1e-12));
  }
}

TEST_CASE("first-order meta-gradient is the gradient at the adapted point") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0), ua(0.0, 0.4);
  for (int i = 0; i < 100; ++i) {
    const double w = u(rng), c = u(rng), a = ua(rng);
    const double expect = 2.0 * (1 - 2 * a) * (w - c);
    const double got = meta_grad(w, c, a, false);
    CHECK(std::abs(got - expect) <= 1e-12 * std::max(std::abs(expect), 1.0));
  }
}

TEST_CASE("first- and second-order meta-gradients agree linearly as alpha shrinks") {
  const double w = 1.3, c = -0.4;
  double prev = 0.0;
  for (double a : {0.1, 0.01, 0.001, 0.0001}) {
    const double diff = std::abs(meta_grad(w, c, a, true) - meta_grad(w, c, a, false));
    // exact difference is 4 a (1 - 2a) |w - c|
    CHECK(diff == doctest::Approx(4 * a * (1 - 2 * a) * std::abs(w - c)).epsilon(1e-9));
    if (prev > 0.0) CHECK(diff < prev / 8.0);
    prev = diff;
  }
  CHECK(meta_grad(w, c, 0.0, true) == meta_grad(w, c, 0.0, false));
}

TEST_CASE("meta-gradients over several tasks add in task order") {
  const std::vector<metatrain::MetaTask> tasks{{quadratic(1.0), quadratic(2.0)},
                                               {quadratic(-1.0), quadratic(0.5)}};
  const std::vector<Tensor> params{Tensor::scalar(0.3)};
  const auto mg = metatrain::meta_gradient(params, tasks, 0.1, 1, true);
  // task: w~ = w - 2a(w - c1), L = (w~ - c2)^2, dL/dw = 2 (w~ - c2)(1 - 2a)
  auto one = [](double w, double c1, double c2) {
    const double wt = w - 0.2 * (w - c1);
    return 2.0 * (wt - c2) * 0.8;
  };
  CHECK(mg.grads[0].item() == doctest::Approx(one(0.3, 1.0, 2.0) + one(0.3, -1.0, 0.5)));
  CHECK(mg.grads[0] == metatrain::meta_gradient(params, tasks, 0.1, 1, true).grads[0]);
}

TEST_CASE("a meta update is one Adam step on the meta-gradient") {
  std::vector<Tensor> params{Tensor::scalar(2.0)};
  const std::vector<metatrain::MetaTask> tasks{{quadratic(0.0), quadratic(0.0)}};
  metatrain::TrainConfig cfg;
  cfg.alpha = 0.1;
  cfg.beta = 0.01;
  auto opt = optim::OptimizerState::zeros_like(params);
  const double loss = metatrain::meta_update(params, tasks, cfg, opt);
  CHECK(loss == doctest::Approx(2.56));  // (2 * 0.8)^2
  // the first bias-corrected Adam step moves by beta * g / (|g| + eps)
  CHECK(params[0].item() == doctest::Approx(2.0 - 0.01).epsilon(1e-9));
  CHECK(opt.step == 1);
}

TEST_CASE("Adam with a zero gradient leaves parameters unchanged") {
  std::vector<Tensor> params{Tensor({3}, {1.0, -2.0, 0.5})};
  const auto before = params;
  auto opt = optim::OptimizerState::zeros_like(params);
  const std::vector<Tensor> zero{Tensor({3}, 0.0)};
  optim::adam_step(params, zero, opt, 0.1, {});
  CHECK(params == before);
  CHECK(opt.step == 1);
}

TEST_CASE("reptile update interpolates toward the adapted parameters") {
  const std::vector<Tensor> w{Tensor::scalar(0.0)};
  CHECK(metatrain::reptile_update(w, quadratic(1.0), 0.1, 1, 0.5)[0].item() ==
        doctest::Approx(0.1).epsilon(1e-15));
  // two steps: 0.2, then 0.2 - 0.1 * 2 * (0.2 - 1) = 0.36
  CHECK(metatrain::reptile_update(w, quadratic(1.0), 0.1, 2, 0.25)[0].item() ==
        doctest::Approx(0.09).epsilon(1e-15));

  const std::vector<Tensor> v{Tensor({2}, {0.3, -1.7})};
  CHECK(metatrain::reptile_update(v, quadratic(1.0), 0.0, 3, 0.7) == v);
  ad::Graph g;
  auto leaf = g.parameter(v[0]);
  const std::vector<ad::Var> lv{leaf};
  const Tensor adapted = metatrain::adapt(g, lv, quadratic(1.0), 0.05, 2, false)[0].value();
  CHECK(metatrain::reptile_update(v, quadratic(1.0), 0.05, 2, 1.0)[0] == adapted);
}

TEST_CASE("inner adaptation on the network") {
  const auto pool = tiny_pool(4);
  auto params = nn::init_model(tiny_net(3));
  // Positive biases keep relu inputs away from the kink at zero.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ub(0.05, 0.2);
  for (auto& l : params.estimator) {
    for (double& b : l.bias.data()) b = ub(rng);
  }
  metatrain::TrainConfig cfg;
  const std::span<const scenes::LabeledImage> shots(pool[0].images.data(), 3);

  cfg.alpha = 0.0;
  CHECK(metatrain::inner_adapt(params, shots, cfg) == params);

  cfg.alpha = 1e-3;
  const auto adapted = metatrain::inner_adapt(params, shots, cfg);
  check_extractor_unchanged(adapted, params);

  // (theta - theta~) / alpha against central differences of the loss
  const auto samples = metatrain::feature_samples(params, shots);
  const auto before = params.estimator_tensors();
  const auto after = adapted.estimator_tensors();
  double worst = 0.0;
  for (std::size_t t = 0; t < before.size(); ++t) {
    for (std::size_t k = 0; k < before[t].size(); ++k) {
      auto plus = before, minus = before;
      plus[t][k] += 1e-5;
      minus[t][k] -= 1e-5;
      const double num = (nn::estimator_loss_value(params.with_estimator(plus), samples) -
                          nn::estimator_loss_value(params.with_estimator(minus), samples)) /
                         2e-5;
      const double step = (before[t][k] - after[t][k]) / cfg.alpha;
      worst = std::max(worst, std::abs(step - num) / std::max({std::abs(num), std::abs(step), 1e-3}));
    }
  }
  CHECK(worst < 1e-4);
  CHECK_THROWS(metatrain::inner_adapt(params, std::span<const scenes::LabeledImage>{}, cfg));
}

TEST_CASE("meta and reptile steps touch only the estimator") {
  const auto pool = tiny_pool(5);
  const auto params = nn::init_model(tiny_net(1));
  const auto features = metatrain::compute_features(params, pool);
  metatrain::TrainConfig cfg;
  cfg.k = 2;
  cfg.meta_batch = 2;
  std::mt19937_64 rng(3);
  const std::vector<scenes::Episode> eps{scenes::sample_episode(pool, 2, rng),
                                         scenes::sample_episode(pool, 2, rng)};
  auto opt = optim::OptimizerState::zeros_like(params.estimator_tensors());
  const auto res = metatrain::meta_step(params, features, eps, cfg, opt);
  check_extractor_unchanged(res.params, params);
  CHECK_FALSE(res.params.estimator == params.estimator);
  CHECK(std::isfinite(res.meta_loss));
  CHECK(opt.step == 1);

  const std::vector<scenes::Episode> one{eps[0]};
  CHECK_THROWS(metatrain::meta_step(params, features, one, cfg, opt));

  cfg.beta = 0.5;
  const auto rep = metatrain::reptile_step(params, features, eps[0], cfg);
  check_extractor_unchanged(rep, params);

  const auto ft = metatrain::finetune(params, features[0].samples, 3, 1e-3);
  check_extractor_unchanged(ft.params, params);
}

TEST_CASE("meta-training is deterministic and its loss trends down") {
  const auto pool = tiny_pool(6, 4, 8);
  metatrain::PretrainConfig pc;
  pc.epochs = 3;
  pc.seed = 1;
  const auto init = metatrain::pretrain(tiny_net(2), pool, pc);
  metatrain::TrainConfig cfg;
  cfg.k = 2;
  cfg.outer_iterations = 200;
  cfg.meta_batch = 4;
  cfg.alpha = 1e-3;
  cfg.beta = 3e-3;
  cfg.seed = 9;
  std::vector<double> losses;
  const auto a = metatrain::meta_train(init, pool, cfg, [&](std::size_t, double l) {
    losses.push_back(l);
  });
  const auto b = metatrain::meta_train(init, pool, cfg);
  CHECK(a == b);
  REQUIRE(losses.size() == 200);
  std::vector<double> windows;
  for (std::size_t w = 0; w < 10; ++w) {
    double s = 0.0;
    for (std::size_t i = 0; i < 20; ++i) s += losses[20 * w + i];
    CHECK(std::isfinite(s));
    windows.push_back(s / 20.0);
  }
  // Episodes are random, so single windows are noisy; halves are not.
  CHECK(windows.back() < windows.front());
  const double first = (windows[0] + windows[1] + windows[2] + windows[3] + windows[4]) / 5.0;
  const double second = (windows[5] + windows[6] + windows[7] + windows[8] + windows[9]) / 5.0;
  CHECK(second < 0.9 * first);
  for (std::size_t w = 5; w < windows.size(); ++w) CHECK(windows[w] < windows[0]);

  auto rc = cfg;
  rc.beta = 0.2;
  rc.outer_iterations = 20;
  CHECK(metatrain::reptile_train(init, pool, rc) == metatrain::reptile_train(init, pool, rc));
}

TEST_CASE("fine-tuning") {
  const auto pool = tiny_pool(8);
  const auto params = nn::init_model(tiny_net(4));
  const auto samples = metatrain::feature_samples(params, pool[1].images);

  const auto none = metatrain::finetune(params, samples, 0, 1e-3);
  CHECK(none.params == params);
  CHECK(none.losses.empty());

  const std::span<const nn::Sample> one(samples.data(), 1);
  std::size_t calls = 0;
  const auto res = metatrain::finetune(params, one, 10, 1e-4, {},
                                       [&](std::size_t step, const nn::ModelParams&) {
                                         CHECK(step == ++calls);
                                       });
  CHECK(calls == 10);
  REQUIRE(res.losses.size() == 10);
  for (std::size_t i = 1; i < res.losses.size(); ++i) CHECK(res.losses[i] <= res.losses[i - 1]);
  CHECK_THROWS(metatrain::finetune(params, std::span<const nn::Sample>{}, 1, 1e-3));

  metatrain::TrainConfig cfg;
  cfg.alpha = 1e-4;
  const std::span<const scenes::LabeledImage> shot(pool[1].images.data(), 1);
  CHECK(metatrain::finetune(params, shot, 10, cfg).losses == res.losses);
}

TEST_CASE("pretraining") {
  const auto pool = tiny_pool(10, 3, 6);
  metatrain::PretrainConfig pc;
  pc.epochs = 8;
  pc.batch_size = 4;
  pc.learning_rate = 3e-3;
  pc.seed = 2;
  const auto net = tiny_net(5);
  const auto a = metatrain::pretrain(net, pool, pc);
  CHECK(nn::serialize_checkpoint(a) == nn::serialize_checkpoint(metatrain::pretrain(net, pool, pc)));

  std::vector<nn::Sample> batch;
  for (const auto& img : pool[0].images) batch.push_back({img.image, img.gt_density.grid});
  auto loss = [&](const nn::ModelParams& p) {
    ad::Graph g;
    return nn::episode_loss(p, nn::bind(g, p), batch).value().item();
  };
  CHECK(loss(a) < loss(nn::init_model(net)));

  auto zero = pool;
  for (auto& s : zero) {
    for (auto& img : s.images) img.gt_density.grid = Tensor(img.gt_density.grid.shape(), 0.0);
  }
  pc.epochs = 20;
  const auto z = metatrain::pretrain(net, zero, pc);
  double mean = 0.0;
  std::size_t n = 0;
  for (const auto& s : zero) {
    for (const auto& img : s.images) {
      const Tensor pred = nn::predict(z, img.image);
      for (double v : pred.data()) {
        mean += v;
        ++n;
      }
    }
  }
  CHECK(mean / static_cast<double>(n) < 1e-3);
}

TEST_CASE("config validation") {
  metatrain::TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.inner_steps = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.beta = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.meta_batch = 0;
  CHECK_THROWS(cfg.validate());
  metatrain::PretrainConfig pc;
  pc.batch_size = 0;
  CHECK_THROWS(pc.validate());
}
