#pragma once

// Experiment commands. Every command writes only below cfg.out:
//   data/                       synthetic dataset (scene_<id>/...)
//   checkpoints/<name>.ckpt     pretrained, maml, reptile
//   logs/<stage>.log            "<iteration> <loss>" lines
//   reports/                    per-scene JSON reports and comparison tables
//   curves/                     trial,step,mae tables

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "metacount/config.hpp"
#include "metacount/eval.hpp"
#include "metacount/scenes.hpp"

namespace metacount::pipeline {

// A missing upstream artifact or any failure while running a stage.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Layout {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path checkpoint(const std::string& name) const {
    return root / "checkpoints" / (name + ".ckpt");
  }
  std::filesystem::path log(const std::string& stage) const { return root / "logs" / (stage + ".log"); }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path curves() const { return root / "curves"; }
};

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"pretrained", "finetuned", "meta-pretrained", "maml",
                                              "reptile"};
  return names;
}

struct Split {
  scenes::ScenePool train;
  scenes::ScenePool test;
};

// Loads the dataset (cfg.dataset.path, or <out>/data) and splits it by scene
// id: the first train_scenes ids train, the next test_scenes ids are held out.
Split load_split(const config::ExperimentConfig& cfg);

void cmd_generate(const config::ExperimentConfig& cfg);
void cmd_pretrain(const config::ExperimentConfig& cfg);
void cmd_metatrain(const config::ExperimentConfig& cfg);
void cmd_reptile(const config::ExperimentConfig& cfg);

// method is one of method_names() or "all". Returns one comparison table per
// configured K.
std::vector<eval::ComparisonTable> cmd_evaluate(const config::ExperimentConfig& cfg,
                                                const std::string& method);

// Per-step MAE tables for the adapted methods on the selected held-out scenes.
void cmd_curves(const config::ExperimentConfig& cfg);

}  // namespace metacount::pipeline
