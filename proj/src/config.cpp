#include "metacount/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace metacount::config {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

template <class T>
T parse_number(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(what + ": '" + raw + "' is not a valid number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ConfigError(what + ": value must be finite");
  }
  return v;
}

bool parse_bool(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(what + ": '" + raw + "' is not a boolean");
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

using Setter = std::function<void(ExperimentConfig&, const std::string& value, const std::string& what)>;

template <class T, class F>
Setter number(F field) {
  return [field](ExperimentConfig& c, const std::string& v, const std::string& w) {
    field(c) = parse_number<T>(v, w);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment.seed", number<std::uint64_t>([](auto& c) -> auto& { return c.seed; })},
      {"experiment.out", [](auto& c, const auto& v, const auto&) { c.out = trim(v); }},
      {"dataset.path", [](auto& c, const auto& v, const auto&) { c.dataset.path = trim(v); }},
      {"dataset.train_scenes",
       number<std::size_t>([](auto& c) -> auto& { return c.dataset.train_scenes; })},
      {"dataset.test_scenes",
       number<std::size_t>([](auto& c) -> auto& { return c.dataset.test_scenes; })},
      {"dataset.images_per_scene",
       number<std::size_t>([](auto& c) -> auto& { return c.dataset.images_per_scene; })},
      {"dataset.height", number<std::size_t>([](auto& c) -> auto& { return c.dataset.height; })},
      {"dataset.width", number<std::size_t>([](auto& c) -> auto& { return c.dataset.width; })},
      {"dataset.sigma", number<double>([](auto& c) -> auto& { return c.dataset.sigma; })},
      {"model.extractor",
       [](auto& c, const auto& v, const auto& w) {
         try {
           c.model.extractor = parse_extractor(v);
         } catch (const ConfigError& e) {
           throw ConfigError(w + ": " + e.what());
         }
       }},
      {"model.estimator",
       [](auto& c, const auto& v, const auto& w) {
         try {
           c.model.estimator = parse_estimator(v);
         } catch (const ConfigError& e) {
           throw ConfigError(w + ": " + e.what());
         }
       }},
      {"model.init_std", number<double>([](auto& c) -> auto& { return c.model.init_std; })},
      {"pretrain.epochs", number<std::size_t>([](auto& c) -> auto& { return c.pretrain.epochs; })},
      {"pretrain.batch_size",
       number<std::size_t>([](auto& c) -> auto& { return c.pretrain.batch_size; })},
      {"pretrain.learning_rate",
       number<double>([](auto& c) -> auto& { return c.pretrain.learning_rate; })},
      {"pretrain.final_lr_scale",
       number<double>([](auto& c) -> auto& { return c.pretrain.final_lr_scale; })},
      {"train.alpha", number<double>([](auto& c) -> auto& { return c.train.alpha; })},
      {"train.beta", number<double>([](auto& c) -> auto& { return c.train.beta; })},
      {"train.inner_steps",
       number<std::size_t>([](auto& c) -> auto& { return c.train.inner_steps; })},
      {"train.meta_batch", number<std::size_t>([](auto& c) -> auto& { return c.train.meta_batch; })},
      {"train.outer_iterations",
       number<std::size_t>([](auto& c) -> auto& { return c.train.outer_iterations; })},
      {"train.k", number<std::size_t>([](auto& c) -> auto& { return c.train.k; })},
      {"train.second_order",
       [](auto& c, const auto& v, const auto& w) { c.train.second_order = parse_bool(v, w); }},
      {"train.meta_test_size",
       number<std::size_t>([](auto& c) -> auto& { return c.train.meta_test_size; })},
      {"train.adam_b1", number<double>([](auto& c) -> auto& { return c.train.adam.b1; })},
      {"train.adam_b2", number<double>([](auto& c) -> auto& { return c.train.adam.b2; })},
      {"train.adam_eps", number<double>([](auto& c) -> auto& { return c.train.adam.eps; })},
      {"reptile.beta", number<double>([](auto& c) -> auto& { return c.reptile.beta; })},
      {"reptile.inner_steps",
       number<std::size_t>([](auto& c) -> auto& { return c.reptile.inner_steps; })},
      {"reptile.outer_iterations",
       number<std::size_t>([](auto& c) -> auto& { return c.reptile.outer_iterations; })},
      {"eval.k",
       [](auto& c, const auto& v, const auto& w) {
         try {
           c.eval.k = parse_size_list(v);
         } catch (const ConfigError& e) {
           throw ConfigError(w + ": " + e.what());
         }
       }},
      {"eval.steps", number<std::size_t>([](auto& c) -> auto& { return c.eval.steps; })},
      {"eval.trials", number<std::size_t>([](auto& c) -> auto& { return c.eval.trials; })},
      {"eval.roi", [](auto& c, const auto& v, const auto& w) { c.eval.roi = parse_bool(v, w); }},
      {"eval.curve_scenes",
       [](auto& c, const auto& v, const auto& w) {
         try {
           c.eval.curve_scenes = trim(v).empty() ? std::vector<std::size_t>{} : parse_size_list(v);
         } catch (const ConfigError& e) {
           throw ConfigError(w + ": " + e.what());
         }
       }},
  };
  return table;
}

}  // namespace

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number<std::size_t>(item, "list"));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

namespace {

std::vector<std::array<std::size_t, 3>> parse_triples(const std::string& text) {
  std::vector<std::array<std::size_t, 3>> out;
  for (const auto& item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 3) {
      throw ConfigError("layer '" + item + "' must be channels:kernel:stride-or-dilation");
    }
    out.push_back({parse_number<std::size_t>(parts[0], "layer"),
                   parse_number<std::size_t>(parts[1], "layer"),
                   parse_number<std::size_t>(parts[2], "layer")});
  }
  if (out.empty()) throw ConfigError("empty layer list");
  return out;
}

}  // namespace

std::vector<nn::ExtractorLayerSpec> parse_extractor(const std::string& text) {
  std::vector<nn::ExtractorLayerSpec> out;
  for (const auto& t : parse_triples(text)) out.push_back({t[0], t[1], t[2]});
  return out;
}

std::vector<nn::EstimatorLayerSpec> parse_estimator(const std::string& text) {
  std::vector<nn::EstimatorLayerSpec> out;
  for (const auto& t : parse_triples(text)) out.push_back({t[0], t[1], t[2]});
  return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig cfg;
  const auto& table = setters();
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) {
      throw ConfigError(origin + ": key '" + section + "' is outside any section");
    }
    for (const auto& [key, node] : keys) {
      const std::string full = section + "." + key;
      const auto it = table.find(full);
      if (it == table.end()) throw ConfigError(origin + ": unknown key [" + section + "] " + key);
      it->second(cfg, node.data(), origin + ": [" + section + "] " + key);
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  auto layers = [](const auto& specs, auto third) {
    std::string s;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      s += (i ? "," : "") + std::to_string(specs[i].out_channels) + ":" +
           std::to_string(specs[i].kernel) + ":" + std::to_string(third(specs[i]));
    }
    return s;
  };
  os << "[experiment]\nseed = " << c.seed << "\nout = " << c.out << "\n\n";
  os << "[dataset]\n";
  if (!c.dataset.path.empty()) os << "path = " << c.dataset.path << "\n";
  os << "train_scenes = " << c.dataset.train_scenes << "\ntest_scenes = " << c.dataset.test_scenes
     << "\nimages_per_scene = " << c.dataset.images_per_scene
     << "\nheight = " << c.dataset.height << "\nwidth = " << c.dataset.width
     << "\nsigma = " << fmt(c.dataset.sigma) << "\n\n";
  os << "[model]\nextractor = " << layers(c.model.extractor, [](const auto& l) { return l.stride; })
     << "\nestimator = " << layers(c.model.estimator, [](const auto& l) { return l.dilation; })
     << "\ninit_std = " << fmt(c.model.init_std) << "\n\n";
  os << "[pretrain]\nepochs = " << c.pretrain.epochs << "\nbatch_size = " << c.pretrain.batch_size
     << "\nlearning_rate = " << fmt(c.pretrain.learning_rate)
     << "\nfinal_lr_scale = " << fmt(c.pretrain.final_lr_scale) << "\n\n";
  os << "[train]\nalpha = " << fmt(c.train.alpha) << "\nbeta = " << fmt(c.train.beta)
     << "\ninner_steps = " << c.train.inner_steps << "\nmeta_batch = " << c.train.meta_batch
     << "\nouter_iterations = " << c.train.outer_iterations << "\nk = " << c.train.k
     << "\nsecond_order = " << (c.train.second_order ? "true" : "false")
     << "\nmeta_test_size = " << c.train.meta_test_size
     << "\nadam_b1 = " << fmt(c.train.adam.b1) << "\nadam_b2 = " << fmt(c.train.adam.b2)
     << "\nadam_eps = " << fmt(c.train.adam.eps) << "\n\n";
  os << "[reptile]\nbeta = " << fmt(c.reptile.beta) << "\ninner_steps = " << c.reptile.inner_steps
     << "\nouter_iterations = " << c.reptile.outer_iterations << "\n\n";
  os << "[eval]\nk = " << join(c.eval.k) << "\nsteps = " << c.eval.steps
     << "\ntrials = " << c.eval.trials << "\nroi = " << (c.eval.roi ? "true" : "false") << "\n";
  if (!c.eval.curve_scenes.empty()) os << "curve_scenes = " << join(c.eval.curve_scenes) << "\n";
  return os.str();
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(!out.empty(), "[experiment] out must not be empty");
  need(dataset.train_scenes >= 2, "[dataset] train_scenes must be >= 2");
  need(dataset.test_scenes >= 1, "[dataset] test_scenes must be >= 1");
  need(dataset.sigma > 0.0, "[dataset] sigma must be positive");
  if (dataset.path.empty()) {
    need(dataset.images_per_scene >= 2, "[dataset] images_per_scene must be >= 2");
    need(dataset.height > 0 && dataset.width > 0, "[dataset] height and width must be positive");
  }
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[model] ") + e.what());
  }
  const std::size_t s = model.downsample_factor();
  if (dataset.path.empty()) {
    need(dataset.height % s == 0 && dataset.width % s == 0,
         "[dataset] height and width must be divisible by the model downsample factor " +
             std::to_string(s));
  }
  try {
    pretrain.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  need(train.alpha > 0.0, "[train] alpha must be positive");
  need(reptile.beta > 0.0 && reptile.beta <= 1.0, "[reptile] beta must be in (0, 1]");
  need(reptile.inner_steps >= 1, "[reptile] inner_steps must be >= 1");
  need(eval.trials >= 1, "[eval] trials must be >= 1");
  need(!eval.k.empty(), "[eval] k must list at least one value");
  for (std::size_t k : eval.k) {
    need(k >= 1, "[eval] k values must be >= 1");
    if (dataset.path.empty()) {
      need(k < dataset.images_per_scene, "[eval] k=" + std::to_string(k) +
                                             " must be below images_per_scene=" +
                                             std::to_string(dataset.images_per_scene));
    }
  }
  if (dataset.path.empty()) {
    need(train.k < dataset.images_per_scene, "[train] k must be below images_per_scene");
  }
  for (std::size_t i : eval.curve_scenes) {
    need(i < dataset.test_scenes, "[eval] curve_scenes entry " + std::to_string(i) +
                                      " exceeds test_scenes");
  }
}

std::uint64_t ExperimentConfig::stage_seed(std::string_view stage) const {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (unsigned char ch : stage) words.push_back(ch);
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  c.model.seed = stage_seed("model");
  c.pretrain.seed = stage_seed("pretrain");
  c.train.seed = stage_seed("metatrain");
  return c;
}

}  // namespace metacount::config
