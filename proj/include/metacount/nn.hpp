#pragma once

// Toy counting backbone: a strided convolutional feature extractor followed
// by a dilated-convolution density estimator producing a one-channel map at
// 1/s of the input resolution.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metacount/autodiff.hpp"
#include "metacount/tensor.hpp"

namespace metacount::nn {

struct ExtractorLayerSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;

  bool operator==(const ExtractorLayerSpec&) const = default;
};

struct EstimatorLayerSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t dilation = 2;

  bool operator==(const EstimatorLayerSpec&) const = default;
};

struct NetConfig {
  std::size_t in_channels = 1;
  std::vector<ExtractorLayerSpec> extractor;
  std::vector<EstimatorLayerSpec> estimator;
  double init_std = 0.01;
  std::uint64_t seed = 0;

  // 3 conv layers (8, 16, 16 channels; the last two stride 2) and 3 dilated
  // layers (16, 8, 1 channels; dilation 2).
  static NetConfig toy_default();

  // Throws std::invalid_argument on a non-positive init_std, zero dilation,
  // stride or kernel, even kernels, or a last estimator layer with more than
  // one output channel.
  void validate() const;
  std::size_t downsample_factor() const;

  bool operator==(const NetConfig&) const = default;
};

struct ConvLayer {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t pad = 0;

  bool operator==(const ConvLayer&) const = default;
};

// Immutable snapshot of the network. Updates produce new snapshots.
struct ModelParams {
  NetConfig config;
  std::vector<ConvLayer> extractor;
  std::vector<ConvLayer> estimator;
  std::size_t downsample_factor = 1;

  bool operator==(const ModelParams&) const = default;

  // Parameter tensors of the estimator block in (w0, b0, w1, b1, ...) order.
  std::vector<Tensor> estimator_tensors() const;
  std::vector<Tensor> all_tensors() const;  // extractor then estimator
  ModelParams with_estimator(std::span<const Tensor> tensors) const;
  ModelParams with_all(std::span<const Tensor> tensors) const;
};

ModelParams init_model(const NetConfig& config);

struct LayerVars {
  ad::Var weight, bias;
};

// Graph-side view of a ModelParams: one leaf (or derived node) per tensor.
struct NetVars {
  std::vector<LayerVars> extractor;
  std::vector<LayerVars> estimator;

  std::vector<ad::Var> estimator_vars() const;
  std::vector<ad::Var> all_vars() const;
  static NetVars estimator_only(std::span<const ad::Var> flat);
};

NetVars bind(ad::Graph& g, const ModelParams& params);
std::vector<LayerVars> bind_estimator(ad::Graph& g, const ModelParams& params);
std::vector<LayerVars> layers_from_flat(std::span<const ad::Var> flat);

// Feature extractor on a [H,W] or [C,H,W] image.
ad::Var forward_extractor(const ModelParams& params, std::span<const LayerVars> layers,
                          ad::Var image);
// Density estimator on features; returns a [h,w] map.
ad::Var forward_estimator(const ModelParams& params, std::span<const LayerVars> layers,
                          ad::Var features);
// Whole network: [H,W] image -> [H/s, W/s] density map.
ad::Var forward(const ModelParams& params, const NetVars& vars, ad::Var image);

// Graph-free evaluation.
Tensor predict(const ModelParams& params, const Tensor& image);
Tensor extract_features(const ModelParams& params, const Tensor& image);
Tensor predict_from_features(const ModelParams& params, const Tensor& features);

// A supervised pair. `input` is an image when used with the whole network and
// a feature tensor when used with the estimator alone.
struct Sample {
  Tensor input;
  Tensor target;  // [h,w] ground-truth density
};

// sum_j || (f(x_j) - y_j) * roi ||_F^2 over the batch; roi may be absent.
ad::Var episode_loss(const ModelParams& params, const NetVars& vars,
                     std::span<const Sample> batch, const std::optional<Tensor>& roi = {});
ad::Var estimator_loss(const ModelParams& params, std::span<const LayerVars> estimator,
                       std::span<const Sample> feature_batch,
                       const std::optional<Tensor>& roi = {});
double estimator_loss_value(const ModelParams& params, std::span<const Sample> feature_batch,
                            const std::optional<Tensor>& roi = {});

// Checkpoint: text header naming each tensor with shape and byte offset,
// followed by a little-endian float64 payload. Round trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);
std::string serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(const std::string& bytes);

}  // namespace metacount::nn
