#include "metacount/metatrain.hpp"

#include <cmath>
#include <exception>
#include <stdexcept>

namespace metacount::metatrain {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("train config: alpha must be non-negative");
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("train config: beta must be positive");
  }
  if (inner_steps < 1) throw std::invalid_argument("train config: inner_steps must be >= 1");
  if (meta_batch < 1) throw std::invalid_argument("train config: meta_batch must be >= 1");
  if (k < 1) throw std::invalid_argument("train config: k must be >= 1");
  if (meta_test_size < 1) throw std::invalid_argument("train config: meta_test_size must be >= 1");
}

void PretrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("pretrain config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("pretrain config: learning_rate must be positive");
  }
  if (!(final_lr_scale > 0.0 && final_lr_scale <= 1.0)) {
    throw std::invalid_argument("pretrain config: final_lr_scale must be in (0, 1]");
  }
}

std::vector<ad::Var> adapt(ad::Graph& g, std::span<const ad::Var> params, const LossFn& train_loss,
                           double alpha, std::size_t steps, bool differentiable) {
  std::vector<ad::Var> cur(params.begin(), params.end());
  for (std::size_t s = 0; s < steps; ++s) {
    ad::Var loss = train_loss(g, cur);
    std::vector<ad::Var> grads = g.backward_differentiable(loss, cur);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      ad::Var gi = differentiable ? grads[i] : g.detach(grads[i]);
      cur[i] = ad::sub(cur[i], ad::scale(gi, alpha));
    }
  }
  return cur;
}

MetaGradient meta_gradient(std::span<const Tensor> params, std::span<const MetaTask> tasks,
                           double alpha, std::size_t steps, bool second_order) {
  if (tasks.empty()) throw std::invalid_argument("meta_gradient: no tasks");
  std::vector<double> losses(tasks.size());
  std::vector<std::vector<Tensor>> grads(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());

  const auto n = static_cast<long>(tasks.size());
#pragma omp parallel for schedule(dynamic)
  for (long t = 0; t < n; ++t) {
    const auto i = static_cast<std::size_t>(t);
    try {
      ad::Graph g;
      std::vector<ad::Var> leaves;
      for (const Tensor& p : params) leaves.push_back(g.parameter(p));
      auto adapted = adapt(g, leaves, tasks[i].train_loss, alpha, steps, second_order);
      ad::Var loss = tasks[i].test_loss(g, adapted);
      auto rec = g.backward(loss, leaves);
      losses[i] = loss.value().item();
      grads[i] = std::move(rec.grads);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  MetaGradient out;
  out.grads = std::move(grads[0]);
  out.loss = losses[0];
  for (std::size_t i = 1; i < tasks.size(); ++i) {
    out.loss += losses[i];
    for (std::size_t k = 0; k < out.grads.size(); ++k) {
      auto dst = out.grads[k].data();
      auto src = grads[i][k].data();
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
    }
  }
  return out;
}

double meta_update(std::vector<Tensor>& params, std::span<const MetaTask> tasks,
                   const TrainConfig& cfg, optim::OptimizerState& opt) {
  auto mg = meta_gradient(params, tasks, cfg.alpha, cfg.inner_steps, cfg.second_order);
  optim::adam_step(params, mg.grads, opt, cfg.beta, cfg.adam);
  return mg.loss;
}

std::vector<Tensor> reptile_update(std::span<const Tensor> params, const LossFn& train_loss,
                                   double alpha, std::size_t steps, double beta) {
  ad::Graph g;
  std::vector<ad::Var> leaves;
  for (const Tensor& p : params) leaves.push_back(g.parameter(p));
  auto adapted = adapt(g, leaves, train_loss, alpha, steps, false);
  std::vector<Tensor> out(params.begin(), params.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = out[i].data();
    auto a = adapted[i].value().data();
    // std::lerp is exact at beta = 0, beta = 1 and when a == p.
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::lerp(p[k], a[k], beta);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<nn::Sample> feature_samples(const nn::ModelParams& params,
                                        std::span<const scenes::LabeledImage> images) {
  std::vector<nn::Sample> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    out.push_back({nn::extract_features(params, img.image), img.gt_density.grid});
  }
  return out;
}

FeaturePool compute_features(const nn::ModelParams& params, const scenes::ScenePool& pool) {
  FeaturePool out(pool.size());
  const auto n = static_cast<long>(pool.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto& scene = pool[static_cast<std::size_t>(i)];
    auto& fs = out[static_cast<std::size_t>(i)];
    fs.scene_id = scene.spec.id;
    fs.samples = feature_samples(params, scene.images);
    if (scene.roi) fs.roi = density::downsample_roi(*scene.roi, params.downsample_factor).grid;
  }
  return out;
}

namespace {

LossFn estimator_loss_fn(const nn::ModelParams& params, std::vector<nn::Sample> samples,
                         std::optional<Tensor> roi = {}) {
  return [&params, samples = std::move(samples), roi = std::move(roi)](
             ad::Graph&, std::span<const ad::Var> flat) {
    auto layers = nn::layers_from_flat(flat);
    return nn::estimator_loss(params, layers, samples, roi);
  };
}

std::vector<nn::Sample> pick(const FeatureScene& scene, std::span<const std::size_t> idx,
                             std::size_t limit) {
  std::vector<nn::Sample> out;
  for (std::size_t i = 0; i < idx.size() && i < limit; ++i) out.push_back(scene.samples.at(idx[i]));
  return out;
}

}  // namespace

nn::ModelParams inner_adapt(const nn::ModelParams& params,
                            std::span<const scenes::LabeledImage> train, const TrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("inner_adapt: empty train set");
  auto loss = estimator_loss_fn(params, feature_samples(params, train));
  ad::Graph g;
  std::vector<ad::Var> leaves;
  for (const Tensor& p : params.estimator_tensors()) leaves.push_back(g.parameter(p));
  auto adapted = adapt(g, leaves, loss, cfg.alpha, cfg.inner_steps, cfg.second_order);
  std::vector<Tensor> values;
  for (const auto& v : adapted) values.push_back(v.value());
  return params.with_estimator(values);
}

MetaStepResult meta_step(const nn::ModelParams& params, const FeaturePool& pool,
                         std::span<const scenes::Episode> episodes, const TrainConfig& cfg,
                         optim::OptimizerState& opt) {
  if (episodes.size() != cfg.meta_batch) {
    throw std::invalid_argument("meta_step: expected " + std::to_string(cfg.meta_batch) +
                                " episodes, got " + std::to_string(episodes.size()));
  }
  std::vector<MetaTask> tasks;
  for (const auto& ep : episodes) {
    const auto& scene = pool.at(ep.scene_index);
    if (ep.train.empty()) throw std::invalid_argument("meta_step: empty episode train set");
    if (ep.test.empty()) throw std::invalid_argument("meta_step: empty episode test set");
    tasks.push_back({estimator_loss_fn(params, pick(scene, ep.train, ep.train.size())),
                     estimator_loss_fn(params, pick(scene, ep.test, cfg.meta_test_size))});
  }
  auto tensors = params.estimator_tensors();
  const double loss = meta_update(tensors, tasks, cfg, opt);
  return {params.with_estimator(tensors), loss};
}

nn::ModelParams reptile_step(const nn::ModelParams& params, const FeaturePool& pool,
                             const scenes::Episode& episode, const TrainConfig& cfg) {
  const auto& scene = pool.at(episode.scene_index);
  if (episode.train.empty()) throw std::invalid_argument("reptile_step: empty train set");
  auto loss = estimator_loss_fn(params, pick(scene, episode.train, episode.train.size()));
  auto updated =
      reptile_update(params.estimator_tensors(), loss, cfg.alpha, cfg.inner_steps, cfg.beta);
  return params.with_estimator(updated);
}

nn::ModelParams meta_train(const nn::ModelParams& init, const scenes::ScenePool& pool,
                           const TrainConfig& cfg, const LogFn& log) {
  cfg.validate();
  const FeaturePool features = compute_features(init, pool);
  std::mt19937_64 rng(cfg.seed);
  optim::OptimizerState opt = optim::OptimizerState::zeros_like(init.estimator_tensors());
  nn::ModelParams params = init;
  for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
    std::vector<scenes::Episode> episodes;
    for (std::size_t b = 0; b < cfg.meta_batch; ++b) {
      episodes.push_back(scenes::sample_episode(pool, cfg.k, rng));
    }
    auto res = meta_step(params, features, episodes, cfg, opt);
    params = std::move(res.params);
    if (log) log(it, res.meta_loss);
  }
  return params;
}

nn::ModelParams reptile_train(const nn::ModelParams& init, const scenes::ScenePool& pool,
                              const TrainConfig& cfg, const LogFn& log) {
  cfg.validate();
  const FeaturePool features = compute_features(init, pool);
  std::mt19937_64 rng(cfg.seed);
  nn::ModelParams params = init;
  for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
    const auto ep = scenes::sample_episode(pool, cfg.k, rng);
    if (log) {
      // post-adaptation loss on the episode's held-out images, for monitoring
      const auto& scene = features[ep.scene_index];
      auto train = pick(scene, ep.train, ep.train.size());
      auto test = pick(scene, ep.test, cfg.meta_test_size);
      auto adapted = finetune(params, train, cfg.inner_steps, cfg.alpha).params;
      log(it, nn::estimator_loss_value(adapted, test));
    }
    params = reptile_step(params, features, ep, cfg);
  }
  return params;
}

nn::ModelParams pretrain(const nn::NetConfig& net, const scenes::ScenePool& pool,
                         const PretrainConfig& cfg, const LogFn& log) {
  cfg.validate();
  if (pool.empty()) throw std::invalid_argument("pretrain: empty pool");
  nn::ModelParams params = nn::init_model(net);
  std::vector<nn::Sample> all;
  for (const auto& scene : pool) {
    for (const auto& img : scene.images) all.push_back({img.image, img.gt_density.grid});
  }
  if (all.empty()) throw std::invalid_argument("pretrain: pool has no images");

  std::mt19937_64 rng(cfg.seed);
  auto tensors = params.all_tensors();
  optim::OptimizerState opt = optim::OptimizerState::zeros_like(tensors);
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t per_epoch = (all.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = cfg.epochs * per_epoch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, order.size() - 1)(rng);
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<nn::Sample> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(all[order[k]]);
      }
      ad::Graph g;
      auto vars = nn::bind(g, params);
      ad::Var loss = nn::episode_loss(params, vars, batch);
      auto rec = g.backward(loss, vars.all_vars());
      epoch_loss += loss.value().item();
      const double frac = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 0.0;
      const double lr = cfg.learning_rate * (1.0 - frac * (1.0 - cfg.final_lr_scale));
      optim::adam_step(tensors, rec.grads, opt, lr, cfg.adam);
      ++step;
      params = params.with_all(tensors);
    }
    if (log) log(epoch, epoch_loss / static_cast<double>(all.size()));
  }
  return params;
}

std::vector<Tensor> estimator_gradient(const nn::ModelParams& params,
                                       std::span<const nn::Sample> shots,
                                       const std::optional<Tensor>& roi, double* loss) {
  ad::Graph g;
  auto layers = nn::bind_estimator(g, params);
  ad::Var l = nn::estimator_loss(params, layers, shots, roi);
  std::vector<ad::Var> leaves;
  for (const auto& lv : layers) {
    leaves.push_back(lv.weight);
    leaves.push_back(lv.bias);
  }
  auto rec = g.backward(l, leaves);
  if (loss) *loss = l.value().item();
  return std::move(rec.grads);
}

FinetuneResult finetune(const nn::ModelParams& params, std::span<const nn::Sample> shots,
                        std::size_t steps, double alpha, const std::optional<Tensor>& roi,
                        const StepFn& on_step) {
  if (shots.empty()) throw std::invalid_argument("finetune: empty shots");
  FinetuneResult out{params, {}};
  auto tensors = params.estimator_tensors();
  for (std::size_t s = 0; s < steps; ++s) {
    double loss = 0.0;
    auto grads = estimator_gradient(out.params, shots, roi, &loss);
    out.losses.push_back(loss);
    optim::sgd_step(tensors, grads, alpha);
    out.params = out.params.with_estimator(tensors);
    if (on_step) on_step(s + 1, out.params);
  }
  return out;
}

FinetuneResult finetune(const nn::ModelParams& params,
                        std::span<const scenes::LabeledImage> shots, std::size_t steps,
                        const TrainConfig& cfg, const std::optional<Tensor>& roi) {
  if (shots.empty()) throw std::invalid_argument("finetune: empty shots");
  auto samples = feature_samples(params, shots);
  return finetune(params, samples, steps, cfg.alpha, roi);
}

}  // namespace metacount::metatrain
