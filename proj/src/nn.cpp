#include "metacount/nn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace metacount::nn {

NetConfig NetConfig::toy_default() {
  NetConfig c;
  c.in_channels = 1;
  c.extractor = {{8, 3, 1}, {16, 3, 2}, {16, 3, 2}};
  c.estimator = {{16, 3, 2}, {8, 3, 2}, {1, 3, 2}};
  c.init_std = 0.01;
  c.seed = 0;
  return c;
}

void NetConfig::validate() const {
  if (!(init_std > 0.0) || !std::isfinite(init_std)) {
    throw std::invalid_argument("net config: init_std must be positive");
  }
  if (in_channels == 0) throw std::invalid_argument("net config: in_channels must be positive");
  if (extractor.empty() || estimator.empty()) {
    throw std::invalid_argument("net config: extractor and estimator need at least one layer");
  }
  for (std::size_t i = 0; i < extractor.size(); ++i) {
    const auto& l = extractor[i];
    if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
      throw std::invalid_argument("net config: extractor layer " + std::to_string(i) +
                                  " needs positive channels, kernel and stride");
    }
    if (l.kernel % 2 == 0) {
      throw std::invalid_argument("net config: extractor layer " + std::to_string(i) +
                                  " kernel must be odd");
    }
  }
  for (std::size_t i = 0; i < estimator.size(); ++i) {
    const auto& l = estimator[i];
    if (l.dilation < 1) {
      throw std::invalid_argument("net config: estimator layer " + std::to_string(i) +
                                  " dilation must be >= 1");
    }
    if (l.out_channels == 0 || l.kernel == 0) {
      throw std::invalid_argument("net config: estimator layer " + std::to_string(i) +
                                  " needs positive channels and kernel");
    }
    if (l.kernel % 2 == 0) {
      throw std::invalid_argument("net config: estimator layer " + std::to_string(i) +
                                  " kernel must be odd");
    }
  }
  if (estimator.back().out_channels != 1) {
    throw std::invalid_argument("net config: final estimator layer must have 1 output channel");
  }
}

std::size_t NetConfig::downsample_factor() const {
  std::size_t s = 1;
  for (const auto& l : extractor) s *= l.stride;
  return s;
}

std::vector<Tensor> ModelParams::estimator_tensors() const {
  std::vector<Tensor> out;
  for (const auto& l : estimator) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::vector<Tensor> ModelParams::all_tensors() const {
  std::vector<Tensor> out;
  for (const auto& l : extractor) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  for (const auto& l : estimator) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

namespace {

void assign_layers(std::vector<ConvLayer>& layers, std::span<const Tensor> tensors,
                   std::size_t offset, const char* block) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& w = tensors[offset + 2 * i];
    const Tensor& b = tensors[offset + 2 * i + 1];
    if (w.shape() != layers[i].weight.shape() || b.shape() != layers[i].bias.shape()) {
      throw ShapeError(std::string(block) + " layer " + std::to_string(i) + ": expected " +
                       shape_str(layers[i].weight.shape()) + "/" +
                       shape_str(layers[i].bias.shape()) + ", got " + shape_str(w.shape()) + "/" +
                       shape_str(b.shape()));
    }
    layers[i].weight = w;
    layers[i].bias = b;
  }
}

}  // namespace

ModelParams ModelParams::with_estimator(std::span<const Tensor> tensors) const {
  if (tensors.size() != 2 * estimator.size()) {
    throw ShapeError("with_estimator: expected " + std::to_string(2 * estimator.size()) +
                     " tensors, got " + std::to_string(tensors.size()));
  }
  ModelParams out = *this;
  assign_layers(out.estimator, tensors, 0, "estimator");
  return out;
}

ModelParams ModelParams::with_all(std::span<const Tensor> tensors) const {
  const std::size_t n = 2 * (extractor.size() + estimator.size());
  if (tensors.size() != n) {
    throw ShapeError("with_all: expected " + std::to_string(n) + " tensors, got " +
                     std::to_string(tensors.size()));
  }
  ModelParams out = *this;
  assign_layers(out.extractor, tensors, 0, "extractor");
  assign_layers(out.estimator, tensors, 2 * extractor.size(), "estimator");
  return out;
}

ModelParams init_model(const NetConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  ModelParams p;
  p.config = config;
  p.downsample_factor = config.downsample_factor();

  std::size_t channels = config.in_channels;
  for (const auto& spec : config.extractor) {
    ConvLayer layer;
    const std::size_t fan_in = channels * spec.kernel * spec.kernel;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uni(-bound, bound);
    layer.weight = Tensor({spec.out_channels, channels, spec.kernel, spec.kernel});
    for (double& v : layer.weight.data()) v = uni(rng);
    layer.bias = Tensor({spec.out_channels}, 0.0);
    layer.stride = spec.stride;
    layer.dilation = 1;
    layer.pad = (spec.kernel - 1) / 2;
    p.extractor.push_back(std::move(layer));
    channels = spec.out_channels;
  }

  std::normal_distribution<double> normal(0.0, config.init_std);
  for (const auto& spec : config.estimator) {
    ConvLayer layer;
    layer.weight = Tensor({spec.out_channels, channels, spec.kernel, spec.kernel});
    for (double& v : layer.weight.data()) v = normal(rng);
    layer.bias = Tensor({spec.out_channels}, 0.0);
    layer.stride = 1;
    layer.dilation = spec.dilation;
    layer.pad = spec.dilation * (spec.kernel - 1) / 2;
    p.estimator.push_back(std::move(layer));
    channels = spec.out_channels;
  }
  return p;
}

std::vector<ad::Var> NetVars::estimator_vars() const {
  std::vector<ad::Var> out;
  for (const auto& l : estimator) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::vector<ad::Var> NetVars::all_vars() const {
  std::vector<ad::Var> out;
  for (const auto& l : extractor) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  for (const auto& l : estimator) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::vector<LayerVars> layers_from_flat(std::span<const ad::Var> flat) {
  if (flat.size() % 2 != 0) throw std::invalid_argument("layer vars come in weight/bias pairs");
  std::vector<LayerVars> out;
  for (std::size_t i = 0; i < flat.size(); i += 2) out.push_back({flat[i], flat[i + 1]});
  return out;
}

NetVars NetVars::estimator_only(std::span<const ad::Var> flat) {
  NetVars v;
  v.estimator = layers_from_flat(flat);
  return v;
}

std::vector<LayerVars> bind_estimator(ad::Graph& g, const ModelParams& params) {
  std::vector<LayerVars> out;
  for (const auto& l : params.estimator) out.push_back({g.parameter(l.weight), g.parameter(l.bias)});
  return out;
}

NetVars bind(ad::Graph& g, const ModelParams& params) {
  NetVars v;
  for (const auto& l : params.extractor) {
    v.extractor.push_back({g.parameter(l.weight), g.parameter(l.bias)});
  }
  v.estimator = bind_estimator(g, params);
  return v;
}

namespace {

ad::Var conv_block(const ConvLayer& spec, const LayerVars& vars, ad::Var x) {
  return ad::relu(
      ad::add_bias(ad::conv2d(x, vars.weight, spec.stride, spec.dilation, spec.pad), vars.bias));
}

}  // namespace

ad::Var forward_extractor(const ModelParams& params, std::span<const LayerVars> layers,
                          ad::Var image) {
  if (layers.size() != params.extractor.size()) {
    throw std::invalid_argument("forward_extractor: layer count mismatch");
  }
  ad::Var x = image;
  if (x.value().rank() == 2) x = ad::reshape(x, {1, x.shape()[0], x.shape()[1]});
  if (x.value().rank() != 3) throw ShapeError("forward: image must be [H,W] or [C,H,W]");
  const std::size_t s = params.downsample_factor;
  if (x.shape()[1] % s != 0 || x.shape()[2] % s != 0) {
    throw ShapeError("forward: image extent " + std::to_string(x.shape()[1]) + "x" +
                     std::to_string(x.shape()[2]) + " not divisible by downsample factor " +
                     std::to_string(s));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) x = conv_block(params.extractor[i], layers[i], x);
  return x;
}

ad::Var forward_estimator(const ModelParams& params, std::span<const LayerVars> layers,
                          ad::Var features) {
  if (layers.size() != params.estimator.size()) {
    throw std::invalid_argument("forward_estimator: layer count mismatch");
  }
  ad::Var x = features;
  for (std::size_t i = 0; i < layers.size(); ++i) x = conv_block(params.estimator[i], layers[i], x);
  return ad::reshape(x, {x.shape()[1], x.shape()[2]});
}

ad::Var forward(const ModelParams& params, const NetVars& vars, ad::Var image) {
  return forward_estimator(params, vars.estimator,
                           forward_extractor(params, vars.extractor, image));
}

Tensor predict(const ModelParams& params, const Tensor& image) {
  ad::Graph g;
  auto vars = NetVars{};
  for (const auto& l : params.extractor) {
    vars.extractor.push_back({g.constant(l.weight), g.constant(l.bias)});
  }
  for (const auto& l : params.estimator) {
    vars.estimator.push_back({g.constant(l.weight), g.constant(l.bias)});
  }
  return forward(params, vars, g.constant(image)).value();
}

Tensor extract_features(const ModelParams& params, const Tensor& image) {
  ad::Graph g;
  std::vector<LayerVars> layers;
  for (const auto& l : params.extractor) layers.push_back({g.constant(l.weight), g.constant(l.bias)});
  return forward_extractor(params, layers, g.constant(image)).value();
}

Tensor predict_from_features(const ModelParams& params, const Tensor& features) {
  ad::Graph g;
  std::vector<LayerVars> layers;
  for (const auto& l : params.estimator) layers.push_back({g.constant(l.weight), g.constant(l.bias)});
  return forward_estimator(params, layers, g.constant(features)).value();
}

namespace {

ad::Var residual_loss(ad::Var pred, const Sample& sample, const std::optional<Tensor>& roi) {
  ad::Graph& g = pred.graph();
  if (pred.shape() != sample.target.shape()) {
    throw ShapeError("episode_loss: prediction " + shape_str(pred.shape()) +
                     " vs ground truth " + shape_str(sample.target.shape()));
  }
  ad::Var diff = ad::sub(pred, g.constant(sample.target));
  if (roi) {
    if (roi->shape() != pred.shape()) {
      throw ShapeError("episode_loss: roi " + shape_str(roi->shape()) + " vs prediction " +
                       shape_str(pred.shape()));
    }
    diff = ad::mul(diff, g.constant(*roi));
  }
  return ad::sum(ad::square(diff));
}

}  // namespace

ad::Var episode_loss(const ModelParams& params, const NetVars& vars,
                     std::span<const Sample> batch, const std::optional<Tensor>& roi) {
  if (batch.empty()) throw std::invalid_argument("episode_loss: empty batch");
  ad::Graph& g = vars.estimator.front().weight.graph();
  std::optional<ad::Var> total;
  for (const auto& s : batch) {
    ad::Var term = residual_loss(forward(params, vars, g.constant(s.input)), s, roi);
    total = total ? ad::add(*total, term) : term;
  }
  return *total;
}

ad::Var estimator_loss(const ModelParams& params, std::span<const LayerVars> estimator,
                       std::span<const Sample> feature_batch, const std::optional<Tensor>& roi) {
  if (feature_batch.empty()) throw std::invalid_argument("episode_loss: empty batch");
  ad::Graph& g = estimator.front().weight.graph();
  std::optional<ad::Var> total;
  for (const auto& s : feature_batch) {
    ad::Var term =
        residual_loss(forward_estimator(params, estimator, g.constant(s.input)), s, roi);
    total = total ? ad::add(*total, term) : term;
  }
  return *total;
}

double estimator_loss_value(const ModelParams& params, std::span<const Sample> feature_batch,
                            const std::optional<Tensor>& roi) {
  ad::Graph g;
  std::vector<LayerVars> layers;
  for (const auto& l : params.estimator) layers.push_back({g.constant(l.weight), g.constant(l.bias)});
  return estimator_loss(params, layers, feature_batch, roi).value().item();
}

}  // namespace metacount::nn
