#include "metacount/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "metacount/metatrain.hpp"

namespace fs = std::filesystem;

namespace metacount::pipeline {

namespace {

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw RuntimeError(path.string() + ": write failed");
}

std::string loss_line(std::size_t it, double loss) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%zu %.17g\n", it, loss);
  return buf;
}

scenes::GeneratorOptions generator_options(const config::ExperimentConfig& cfg) {
  scenes::GeneratorOptions o;
  o.height = cfg.dataset.height;
  o.width = cfg.dataset.width;
  o.downsample = cfg.model.downsample_factor();
  o.sigma = cfg.dataset.sigma;
  return o;
}

nn::ModelParams load_model(const config::ExperimentConfig& cfg, const std::string& name,
                           const std::string& producer) {
  const fs::path path = Layout{cfg.out}.checkpoint(name);
  if (!fs::exists(path)) {
    throw RuntimeError("missing checkpoint " + path.string() + "; run `metacount " + producer +
                       "` first");
  }
  nn::ModelParams p;
  try {
    p = nn::load_checkpoint(path.string());
  } catch (const std::exception& e) {
    throw RuntimeError(path.string() + ": " + e.what());
  }
  nn::NetConfig want = cfg.model, have = p.config;
  want.seed = have.seed = 0;
  if (!(want == have)) {
    throw RuntimeError(path.string() + ": checkpoint architecture differs from the [model] config");
  }
  return p;
}

const char* checkpoint_for(const std::string& method) {
  if (method == "pretrained" || method == "finetuned") return "pretrained";
  if (method == "meta-pretrained" || method == "maml") return "maml";
  return "reptile";
}

const char* producer_for(const std::string& ckpt) {
  if (std::string(ckpt) == "pretrained") return "pretrain";
  if (std::string(ckpt) == "maml") return "metatrain";
  return "reptile";
}

bool adapts(const std::string& method) {
  return method == "finetuned" || method == "maml" || method == "reptile";
}

eval::ProtocolConfig protocol(const config::ExperimentConfig& cfg, std::size_t k,
                              std::size_t steps) {
  eval::ProtocolConfig p;
  p.k = k;
  p.steps = steps;
  p.trials = cfg.eval.trials;
  p.alpha = cfg.train.alpha;
  p.use_roi = cfg.eval.roi;
  p.seed = cfg.stage_seed("eval");
  return p;
}

std::string k_tag(std::size_t k) { return "k" + std::to_string(k); }

}  // namespace

Split load_split(const config::ExperimentConfig& cfg) {
  const fs::path root = cfg.dataset.path.empty() ? Layout{cfg.out}.data() : fs::path(cfg.dataset.path);
  if (!fs::exists(root)) {
    throw RuntimeError("missing dataset " + root.string() + "; run `metacount generate` first");
  }
  scenes::ScenePool pool;
  try {
    pool = scenes::load_dataset(root.string(), cfg.model.downsample_factor(), cfg.dataset.sigma);
  } catch (const std::exception& e) {
    throw RuntimeError(e.what());
  }
  const std::size_t need = cfg.dataset.train_scenes + cfg.dataset.test_scenes;
  if (pool.size() < need) {
    throw RuntimeError(root.string() + ": " + std::to_string(pool.size()) + " scenes, need " +
                       std::to_string(need));
  }
  std::size_t max_k = cfg.train.k;
  for (std::size_t k : cfg.eval.k) max_k = std::max(max_k, k);
  for (std::size_t i = 0; i < need; ++i) {
    if (pool[i].images.size() <= max_k) {
      throw RuntimeError(root.string() + ": scene " + std::to_string(pool[i].spec.id) + " has " +
                         std::to_string(pool[i].images.size()) + " images, need more than " +
                         std::to_string(max_k));
    }
  }
  Split s;
  s.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.dataset.train_scenes));
  s.test.assign(pool.begin() + static_cast<std::ptrdiff_t>(cfg.dataset.train_scenes),
                pool.begin() + static_cast<std::ptrdiff_t>(need));
  return s;
}

void cmd_generate(const config::ExperimentConfig& cfg) {
  if (!cfg.dataset.path.empty()) {
    throw config::ConfigError("[dataset] path is set; generate only writes synthetic data");
  }
  const auto pool = scenes::generate_scene_pool(
      cfg.dataset.train_scenes + cfg.dataset.test_scenes, cfg.dataset.images_per_scene,
      cfg.stage_seed("data"), generator_options(cfg));
  const fs::path dir = Layout{cfg.out}.data();
  fs::remove_all(dir);
  scenes::write_dataset(dir.string(), pool);
}

void cmd_pretrain(const config::ExperimentConfig& cfg) {
  const auto rc = cfg.resolved();
  const Split split = load_split(rc);
  std::string log;
  const auto params = metatrain::pretrain(rc.model, split.train, rc.pretrain,
                                          [&](std::size_t it, double l) { log += loss_line(it, l); });
  const Layout lay{rc.out};
  fs::create_directories(lay.checkpoint("pretrained").parent_path());
  nn::save_checkpoint(lay.checkpoint("pretrained").string(), params);
  write_file(lay.log("pretrain"), log);
}

void cmd_metatrain(const config::ExperimentConfig& cfg) {
  const auto rc = cfg.resolved();
  const auto init = load_model(rc, "pretrained", "pretrain");
  const Split split = load_split(rc);
  std::string log;
  const auto params = metatrain::meta_train(init, split.train, rc.train,
                                            [&](std::size_t it, double l) { log += loss_line(it, l); });
  const Layout lay{rc.out};
  nn::save_checkpoint(lay.checkpoint("maml").string(), params);
  write_file(lay.log("metatrain"), log);
}

void cmd_reptile(const config::ExperimentConfig& cfg) {
  const auto rc = cfg.resolved();
  const auto init = load_model(rc, "pretrained", "pretrain");
  const Split split = load_split(rc);
  metatrain::TrainConfig tc = rc.train;
  tc.beta = rc.reptile.beta;
  tc.inner_steps = rc.reptile.inner_steps;
  tc.outer_iterations = rc.reptile.outer_iterations;
  tc.second_order = false;
  tc.seed = rc.stage_seed("reptile");
  std::string log;
  const auto params = metatrain::reptile_train(init, split.train, tc,
                                               [&](std::size_t it, double l) { log += loss_line(it, l); });
  const Layout lay{rc.out};
  nn::save_checkpoint(lay.checkpoint("reptile").string(), params);
  write_file(lay.log("reptile"), log);
}

std::vector<eval::ComparisonTable> cmd_evaluate(const config::ExperimentConfig& cfg,
                                                const std::string& method) {
  std::vector<std::string> methods;
  if (method == "all") {
    methods = method_names();
  } else if (std::find(method_names().begin(), method_names().end(), method) !=
             method_names().end()) {
    methods = {method};
  } else {
    throw config::ConfigError("unknown method '" + method +
                              "' (expected pretrained, finetuned, meta-pretrained, maml, "
                              "reptile or all)");
  }
  const auto rc = cfg.resolved();
  std::map<std::string, nn::ModelParams> models;
  for (const auto& m : methods) {
    const std::string ck = checkpoint_for(m);
    if (!models.count(ck)) models.emplace(ck, load_model(rc, ck, producer_for(ck)));
  }
  const Split split = load_split(rc);
  const Layout lay{rc.out};

  std::vector<eval::ComparisonTable> tables;
  for (std::size_t k : rc.eval.k) {
    eval::MethodReports all;
    for (const auto& m : methods) {
      const auto& model = models.at(checkpoint_for(m));
      const auto proto = protocol(rc, k, adapts(m) ? rc.eval.steps : 0);
      std::vector<eval::AdaptationReport> reps;
      for (const auto& scene : split.test) {
        reps.push_back(eval::run_adaptation_protocol(model, scene, proto));
        write_file(lay.reports() / m / k_tag(k) /
                       ("scene_" + std::to_string(scene.spec.id) + ".json"),
                   eval::render_json(reps.back()));
      }
      const auto table = eval::compare_methods({{m, reps}});
      write_file(lay.reports() / (m + "_" + k_tag(k) + ".json"), eval::render_json(table));
      write_file(lay.reports() / (m + "_" + k_tag(k) + ".txt"), eval::render_text(table));
      all.emplace_back(m, std::move(reps));
    }
    auto table = eval::compare_methods(all);
    if (methods.size() > 1) {
      write_file(lay.reports() / ("comparison_" + k_tag(k) + ".json"), eval::render_json(table));
      write_file(lay.reports() / ("comparison_" + k_tag(k) + ".txt"), eval::render_text(table));
    }
    tables.push_back(std::move(table));
  }
  return tables;
}

void cmd_curves(const config::ExperimentConfig& cfg) {
  const auto rc = cfg.resolved();
  const Layout lay{rc.out};
  std::vector<std::string> methods{"finetuned", "maml"};
  if (fs::exists(lay.checkpoint("reptile"))) methods.push_back("reptile");
  std::map<std::string, nn::ModelParams> models;
  for (const auto& m : methods) {
    const std::string ck = checkpoint_for(m);
    if (!models.count(ck)) models.emplace(ck, load_model(rc, ck, producer_for(ck)));
  }
  const Split split = load_split(rc);
  std::vector<std::size_t> picks = rc.eval.curve_scenes;
  if (picks.empty()) {
    for (std::size_t i = 0; i < split.test.size(); ++i) picks.push_back(i);
  }

  for (std::size_t k : rc.eval.k) {
    const auto proto = protocol(rc, k, rc.eval.steps);
    for (std::size_t i : picks) {
      const auto& scene = split.test.at(i);
      const std::string tag = k_tag(k) + "_scene_" + std::to_string(scene.spec.id);
      std::vector<std::vector<double>> means;
      for (const auto& m : methods) {
        const auto rep = eval::run_adaptation_protocol(models.at(checkpoint_for(m)), scene, proto);
        write_file(lay.curves() / (m + "_" + tag + ".csv"), eval::render_curves_csv(rep));
        std::vector<double> mean(rc.eval.steps + 1, 0.0);
        for (const auto& t : rep.trials) {
          for (std::size_t s = 0; s < mean.size(); ++s) mean[s] += t.curve[s];
        }
        for (double& v : mean) v /= static_cast<double>(rep.trials.size());
        means.push_back(std::move(mean));
      }
      std::ostringstream os;
      os << "step";
      for (const auto& m : methods) os << ',' << m;
      os << '\n';
      char buf[64];
      for (std::size_t s = 0; s <= rc.eval.steps; ++s) {
        os << s;
        for (const auto& mean : means) {
          std::snprintf(buf, sizeof buf, ",%.17g", mean[s]);
          os << buf;
        }
        os << '\n';
      }
      write_file(lay.curves() / ("mean_" + tag + ".csv"), os.str());
    }
  }
}

}  // namespace metacount::pipeline
