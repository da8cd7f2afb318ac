#include <algorithm>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metacount/config.hpp"
#include "metacount/pipeline.hpp"

using namespace metacount;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::size_t> k;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> trials;
  std::optional<bool> roi;
};

config::ExperimentConfig build_config(const Overrides& o) {
  config::ExperimentConfig cfg;
  if (!o.config.empty()) cfg = config::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (!o.k.empty()) cfg.eval.k = o.k;
  if (o.steps) cfg.eval.steps = *o.steps;
  if (o.trials) cfg.eval.trials = *o.trials;
  if (o.roi) cfg.eval.roi = *o.roi;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot scene-adaptive crowd counting experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  std::string method = "all";
  app.add_option("--config", o.config, "INI experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "global seed");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--k", o.k, "shots for evaluation (repeatable or comma separated)")->delimiter(',');
  app.add_option("--steps", o.steps, "fine-tuning steps at evaluation");
  app.add_option("--trials", o.trials, "random trials per scene");
  app.add_flag("--roi,!--no-roi", o.roi, "mask loss and counts with the scene roi");

  auto* gen = app.add_subcommand("generate", "write the synthetic dataset");
  auto* pre = app.add_subcommand("pretrain", "supervised pretraining on the training scenes");
  auto* meta = app.add_subcommand("metatrain", "second-order meta-training from the pretrained model");
  auto* rep = app.add_subcommand("reptile", "first-order Reptile meta-training");
  auto* ev = app.add_subcommand("evaluate", "K-shot evaluation on held-out scenes");
  ev->add_option("--method", method,
                 "pretrained, finetuned, meta-pretrained, maml, reptile or all");
  auto* cur = app.add_subcommand("curves", "per-step MAE tables for the adapted methods");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  config::ExperimentConfig cfg;
  try {
    cfg = build_config(o);
    if (ev->parsed()) {
      const auto& names = pipeline::method_names();
      if (method != "all" && std::find(names.begin(), names.end(), method) == names.end()) {
        throw config::ConfigError("unknown method '" + method + "'");
      }
    }
  } catch (const config::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) {
      pipeline::cmd_generate(cfg);
    } else if (pre->parsed()) {
      pipeline::cmd_pretrain(cfg);
    } else if (meta->parsed()) {
      pipeline::cmd_metatrain(cfg);
    } else if (rep->parsed()) {
      pipeline::cmd_reptile(cfg);
    } else if (ev->parsed()) {
      for (const auto& table : pipeline::cmd_evaluate(cfg, method)) {
        std::cout << eval::render_text(table) << "\n";
      }
    } else if (cur->parsed()) {
      pipeline::cmd_curves(cfg);
    }
  } catch (const config::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
