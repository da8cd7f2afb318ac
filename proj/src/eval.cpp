#include "metacount/eval.hpp"

#include <cmath>
#include <exception>
#include <random>
#include <stdexcept>

#include "metacount/metatrain.hpp"

namespace metacount::eval {

MetricTriple metrics_from_counts(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                                std::to_string(gt.size()) + " ground truths");
  }
  if (pred.empty()) throw std::invalid_argument("metrics: empty evaluation set");
  MetricTriple m;
  m.n_images = pred.size();
  double abs_sum = 0.0, sq_sum = 0.0, dev_sum = 0.0;
  std::size_t dev_n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = std::abs(pred[i] - gt[i]);
    abs_sum += e;
    sq_sum += e * e;
    if (gt[i] > 0.0) {
      dev_sum += e / gt[i];
      ++dev_n;
    } else {
      ++m.n_skipped_mde;
    }
  }
  const double n = static_cast<double>(pred.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.mde = dev_n > 0 ? dev_sum / static_cast<double>(dev_n) : 0.0;
  return m;
}

MetricTriple metrics(std::span<const density::DensityMap> preds,
                     std::span<const density::DensityMap> gts,
                     const std::optional<density::RoiMask>& roi) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(gts.size()) + " ground truths");
  }
  std::vector<double> p(preds.size()), g(gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].grid.shape() != gts[i].grid.shape()) {
      throw ShapeError("metrics: image " + std::to_string(i) + " prediction " +
                       shape_str(preds[i].grid.shape()) + " vs ground truth " +
                       shape_str(gts[i].grid.shape()));
    }
    p[i] = density::count(preds[i], roi);
    g[i] = density::count(gts[i], roi);
  }
  return metrics_from_counts(p, g);
}

Summary summarize(std::span<const double> values) {
  if (values.empty()) return {};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

std::optional<density::RoiMask> output_roi(const scenes::Scene& scene, std::size_t downsample) {
  if (!scene.roi) return std::nullopt;
  return density::downsample_roi(*scene.roi, downsample);
}

std::uint64_t trial_seed(std::uint64_t seed, int scene_id, std::size_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(scene_id), static_cast<std::uint32_t>(trial)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

AdaptationReport run_adaptation_protocol(const nn::ModelParams& model, const scenes::Scene& scene,
                                         const ProtocolConfig& cfg) {
  return run_adaptation_protocol(
      model, scene, cfg,
      cfg.use_roi ? output_roi(scene, model.downsample_factor) : std::optional<density::RoiMask>{});
}

namespace {

MetricTriple score(const nn::ModelParams& params, std::span<const nn::Sample> samples,
                   std::span<const std::size_t> idx, const std::optional<density::RoiMask>& roi) {
  std::vector<double> p, g;
  for (std::size_t i : idx) {
    p.push_back(density::count(nn::predict_from_features(params, samples[i].input), roi));
    g.push_back(density::count(samples[i].target, roi));
  }
  return metrics_from_counts(p, g);
}

}  // namespace

AdaptationReport run_adaptation_protocol(const nn::ModelParams& model, const scenes::Scene& scene,
                                         const ProtocolConfig& cfg,
                                         const std::optional<density::RoiMask>& roi) {
  const std::size_t n = scene.images.size();
  if (cfg.k < 1 || cfg.k >= n) {
    throw std::invalid_argument("adaptation protocol: scene " + std::to_string(scene.spec.id) +
                                " has " + std::to_string(n) + " images, need more than K=" +
                                std::to_string(cfg.k));
  }
  if (cfg.trials < 1) throw std::invalid_argument("adaptation protocol: trials must be >= 1");
  if (roi) roi->validate();

  const auto samples = metatrain::feature_samples(model, scene.images);
  if (roi && roi->grid.shape() != samples.front().target.shape()) {
    throw ShapeError("adaptation protocol: roi " + shape_str(roi->grid.shape()) +
                     " vs output " + shape_str(samples.front().target.shape()));
  }
  std::optional<Tensor> loss_roi;
  if (roi) loss_roi = roi->grid;

  AdaptationReport rep;
  rep.scene_id = scene.spec.id;
  rep.protocol = cfg;
  rep.trials.resize(cfg.trials);
  std::vector<std::exception_ptr> errors(cfg.trials);

  const auto n_trials = static_cast<long>(cfg.trials);
#pragma omp parallel for schedule(dynamic)
  for (long t = 0; t < n_trials; ++t) {
    auto& tr = rep.trials[static_cast<std::size_t>(t)];
    try {
      tr.seed = trial_seed(cfg.seed, scene.spec.id, static_cast<std::size_t>(t));
      std::mt19937_64 rng(tr.seed);
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      for (std::size_t i = 0; i < cfg.k; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
        std::swap(idx[i], idx[j]);
      }
      tr.shots.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cfg.k));
      const std::vector<std::size_t> rest(idx.begin() + static_cast<std::ptrdiff_t>(cfg.k),
                                          idx.end());
      std::vector<nn::Sample> shots;
      for (std::size_t i : tr.shots) shots.push_back(samples[i]);

      MetricTriple last = score(model, samples, rest, roi);
      tr.curve.push_back(last.mae);
      if (cfg.steps > 0) {
        metatrain::finetune(model, shots, cfg.steps, cfg.alpha, loss_roi,
                            [&](std::size_t, const nn::ModelParams& p) {
                              last = score(p, samples, rest, roi);
                              tr.curve.push_back(last.mae);
                            });
      }
      tr.final = last;
    } catch (...) {
      errors[static_cast<std::size_t>(t)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<double> mae, rmse, mde;
  for (const auto& tr : rep.trials) {
    mae.push_back(tr.final.mae);
    rmse.push_back(tr.final.rmse);
    mde.push_back(tr.final.mde);
  }
  rep.mae = summarize(mae);
  rep.rmse = summarize(rmse);
  rep.mde = summarize(mde);
  return rep;
}

ComparisonTable compare_methods(const MethodReports& reports) {
  if (reports.empty()) throw std::invalid_argument("compare_methods: no reports");
  ComparisonTable table;
  table.protocol = reports.front().second.at(0).protocol;
  const auto& ref = reports.front().second;
  for (const auto& [name, scenes] : reports) {
    if (scenes.size() != ref.size()) {
      throw std::invalid_argument("compare_methods: method '" + name +
                                  "' has a different number of scenes");
    }
    std::vector<ComparisonRow> rows;
    const std::size_t trials = scenes.front().trials.size();
    std::vector<double> mae(trials, 0.0), rmse(trials, 0.0), mde(trials, 0.0);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto& r = scenes[s];
      if (r.scene_id != ref[s].scene_id || r.trials.size() != trials ||
          r.protocol.k != table.protocol.k || r.protocol.use_roi != table.protocol.use_roi) {
        throw std::invalid_argument("compare_methods: method '" + name +
                                    "' does not share the protocol or scene order");
      }
      rows.push_back({"scene " + std::to_string(r.scene_id), r.mae, r.rmse, r.mde});
      for (std::size_t t = 0; t < trials; ++t) {
        mae[t] += r.trials[t].final.mae;
        rmse[t] += r.trials[t].final.rmse;
        mde[t] += r.trials[t].final.mde;
      }
    }
    const double ns = static_cast<double>(scenes.size());
    for (std::size_t t = 0; t < trials; ++t) {
      mae[t] /= ns;
      rmse[t] /= ns;
      mde[t] /= ns;
    }
    rows.push_back({"average", summarize(mae), summarize(rmse), summarize(mde)});
    table.methods.push_back(name);
    table.rows.push_back(std::move(rows));
  }
  return table;
}

}  // namespace metacount::eval
