#pragma once

// Inner/outer optimization: MAML-style meta-training with optional
// second-order meta-gradients, the Reptile first-order variant, supervised
// pretraining and few-shot fine-tuning.
//
// The feature extractor is frozen in everything except pretrain(), so all
// estimator-only routines work on precomputed extractor features.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "metacount/autodiff.hpp"
#include "metacount/nn.hpp"
#include "metacount/optim.hpp"
#include "metacount/scenes.hpp"

namespace metacount::metatrain {

struct TrainConfig {
  double alpha = 0.001;  // inner SGD rate
  double beta = 0.001;   // outer rate (Adam for MAML, interpolation for Reptile)
  std::size_t inner_steps = 1;
  std::size_t meta_batch = 1;
  std::size_t outer_iterations = 1000;
  std::size_t k = 5;
  bool second_order = true;
  optim::AdamParams adam;
  std::uint64_t seed = 0;
  std::size_t meta_test_size = 10;  // cap on |D_test| per episode during training

  void validate() const;
};

struct PretrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double learning_rate = 0.001;
  // The rate decays linearly to learning_rate * final_lr_scale at the last step.
  double final_lr_scale = 1.0;
  optim::AdamParams adam;
  std::uint64_t seed = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Model-agnostic core. Parameters are a flat list of tensors and a task is a
// pair of loss builders over graph-side parameters.

using LossFn = std::function<ad::Var(ad::Graph&, std::span<const ad::Var>)>;

struct MetaTask {
  LossFn train_loss;
  LossFn test_loss;
};

// `steps` SGD steps of rate alpha on train_loss. With differentiable=true the
// returned nodes depend on `params` through the inner gradients; otherwise
// each gradient is detached (first-order).
std::vector<ad::Var> adapt(ad::Graph& g, std::span<const ad::Var> params, const LossFn& train_loss,
                           double alpha, std::size_t steps, bool differentiable);

struct MetaGradient {
  double loss = 0.0;           // sum of post-adaptation test losses
  std::vector<Tensor> grads;   // d loss / d params
};

// Per-task graphs are independent and may run in parallel; gradients are
// reduced in task order.
MetaGradient meta_gradient(std::span<const Tensor> params, std::span<const MetaTask> tasks,
                           double alpha, std::size_t steps, bool second_order);

// One outer update: meta_gradient followed by an Adam step of rate beta.
double meta_update(std::vector<Tensor>& params, std::span<const MetaTask> tasks,
                   const TrainConfig& cfg, optim::OptimizerState& opt);

// theta + beta * (adapt(theta) - theta), adaptation with plain SGD.
std::vector<Tensor> reptile_update(std::span<const Tensor> params, const LossFn& train_loss,
                                   double alpha, std::size_t steps, double beta);

// ---------------------------------------------------------------------------
// Network level.

struct FeatureScene {
  int scene_id = 0;
  std::vector<nn::Sample> samples;  // extractor features -> gt density
  std::optional<Tensor> roi;        // at output resolution
};
using FeaturePool = std::vector<FeatureScene>;

FeaturePool compute_features(const nn::ModelParams& params, const scenes::ScenePool& pool);
std::vector<nn::Sample> feature_samples(const nn::ModelParams& params,
                                        std::span<const scenes::LabeledImage> images);

// Inner update on the estimator block; the extractor is returned unchanged.
nn::ModelParams inner_adapt(const nn::ModelParams& params,
                            std::span<const scenes::LabeledImage> train, const TrainConfig& cfg);

struct MetaStepResult {
  nn::ModelParams params;
  double meta_loss = 0.0;
};

// |episodes| must equal cfg.meta_batch. The optimizer state is updated in
// place.
MetaStepResult meta_step(const nn::ModelParams& params, const FeaturePool& pool,
                         std::span<const scenes::Episode> episodes, const TrainConfig& cfg,
                         optim::OptimizerState& opt);

nn::ModelParams reptile_step(const nn::ModelParams& params, const FeaturePool& pool,
                             const scenes::Episode& episode, const TrainConfig& cfg);

using LogFn = std::function<void(std::size_t iteration, double loss)>;

// outer_iterations meta steps with episodes drawn from `pool`.
nn::ModelParams meta_train(const nn::ModelParams& init, const scenes::ScenePool& pool,
                           const TrainConfig& cfg, const LogFn& log = {});
nn::ModelParams reptile_train(const nn::ModelParams& init, const scenes::ScenePool& pool,
                              const TrainConfig& cfg, const LogFn& log = {});

// Supervised mini-batch Adam over every image of the pool, both blocks
// trainable. Logs the mean per-image loss of each epoch.
nn::ModelParams pretrain(const nn::NetConfig& net, const scenes::ScenePool& pool,
                         const PretrainConfig& cfg, const LogFn& log = {});

struct FinetuneResult {
  nn::ModelParams params;
  std::vector<double> losses;  // loss before each step
};

// Called after every update with the 1-based step number.
using StepFn = std::function<void(std::size_t step, const nn::ModelParams& params)>;

// Plain SGD of rate alpha on the estimator block.
FinetuneResult finetune(const nn::ModelParams& params, std::span<const nn::Sample> shots,
                        std::size_t steps, double alpha, const std::optional<Tensor>& roi = {},
                        const StepFn& on_step = {});
FinetuneResult finetune(const nn::ModelParams& params,
                        std::span<const scenes::LabeledImage> shots, std::size_t steps,
                        const TrainConfig& cfg, const std::optional<Tensor>& roi = {});

// Gradient of the estimator loss on `shots` at params (estimator block).
std::vector<Tensor> estimator_gradient(const nn::ModelParams& params,
                                       std::span<const nn::Sample> shots,
                                       const std::optional<Tensor>& roi, double* loss = nullptr);

}  // namespace metacount::metatrain
