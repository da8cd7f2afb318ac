#include "metacount/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "metacount/pgm.hpp"

namespace fs = std::filesystem;

namespace metacount::scenes {

void SceneSpec::validate() const {
  if (count_min > count_max) throw std::invalid_argument("scene spec: count_min > count_max");
  if (!(sigma_top > 0.0) || !(sigma_bottom > 0.0)) {
    throw std::invalid_argument("scene spec: blob sizes must be positive");
  }
  if (!(noise_level >= 0.0)) throw std::invalid_argument("scene spec: negative noise level");
  if (height == 0 || width == 0) throw std::invalid_argument("scene spec: empty extent");
}

namespace {

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

void add_blob(Tensor& img, double cx, double cy, double sigma, double amplitude) {
  const long H = static_cast<long>(img.dim(0)), W = static_cast<long>(img.dim(1));
  const double radius = 3.0 * sigma;
  const long r0 = std::max(0L, static_cast<long>(std::floor(cy - radius)));
  const long r1 = std::min(H - 1, static_cast<long>(std::ceil(cy + radius)));
  const long c0 = std::max(0L, static_cast<long>(std::floor(cx - radius)));
  const long c1 = std::min(W - 1, static_cast<long>(std::ceil(cx + radius)));
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (long r = r0; r <= r1; ++r) {
    const double dy = static_cast<double>(r) + 0.5 - cy;
    for (long c = c0; c <= c1; ++c) {
      const double dx = static_cast<double>(c) + 0.5 - cx;
      img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) +=
          amplitude * std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
}

density::RoiMask make_roi(const SceneSpec& spec) {
  density::RoiMask roi{Tensor({spec.height, spec.width}, 0.0)};
  for (std::size_t r = std::min(spec.roi_top, spec.height - 1); r < spec.height; ++r) {
    for (std::size_t c = 0; c < spec.width; ++c) roi.grid.at(r, c) = 1.0;
  }
  return roi;
}

}  // namespace

SceneSpec draw_scene_spec(int id, std::uint64_t master_seed, const GeneratorOptions& opts) {
  auto rng = seeded({master_seed, static_cast<std::uint64_t>(id), 0x5ce9eULL});
  SceneSpec s;
  s.id = id;
  s.height = opts.height;
  s.width = opts.width;
  s.count_min = uniform_int(rng, 0, 10);
  s.count_max = s.count_min + uniform_int(rng, 5, 25);
  s.sigma_top = uniform(rng, 0.7, 1.6);
  s.sigma_bottom = s.sigma_top * uniform(rng, 1.3, 2.8);
  s.background_seed = rng();
  s.noise_level = uniform(rng, 0.01, 0.06);
  s.background_level = uniform(rng, 0.0, 0.3);
  // Clutter looks like a person except for its size, which sits either below
  // or above this scene's person sizes. Only labeled shots reveal which.
  s.clutter_count = uniform_int(rng, 4, 12);
  if (uniform(rng, 0.0, 1.0) < 0.5) {
    s.clutter_sigma = s.sigma_top * uniform(rng, 0.4, 0.6);
  } else {
    s.clutter_sigma = s.sigma_bottom * uniform(rng, 1.5, 2.0);
  }
  s.clutter_amplitude = uniform(rng, 0.8, 1.0);
  s.roi_top = uniform_int(rng, 0, opts.height / 3);
  return s;
}

Tensor render_background(const SceneSpec& spec) {
  auto rng = seeded({spec.background_seed});
  Tensor bg({spec.height, spec.width}, spec.background_level);
  // Low-frequency shading: a few random plane waves.
  for (int k = 0; k < 3; ++k) {
    const double fx = uniform(rng, -1.5, 1.5) * 2.0 * std::numbers::pi / static_cast<double>(spec.width);
    const double fy = uniform(rng, -1.5, 1.5) * 2.0 * std::numbers::pi / static_cast<double>(spec.height);
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double amp = uniform(rng, 0.0, 0.08);
    for (std::size_t r = 0; r < spec.height; ++r) {
      for (std::size_t c = 0; c < spec.width; ++c) {
        bg.at(r, c) += amp * std::cos(fx * static_cast<double>(c) + fy * static_cast<double>(r) + phase);
      }
    }
  }
  for (std::size_t i = 0; i < spec.clutter_count; ++i) {
    const double cx = uniform(rng, 0.0, static_cast<double>(spec.width));
    const double cy = uniform(rng, 0.0, static_cast<double>(spec.height));
    add_blob(bg, cx, cy, spec.clutter_sigma, spec.clutter_amplitude);
  }
  return bg;
}

LabeledImage render_image(const SceneSpec& spec, const Tensor& background, std::uint64_t seed,
                          const GeneratorOptions& opts) {
  auto rng = seeded({seed});
  LabeledImage out;
  out.annotation.height = spec.height;
  out.annotation.width = spec.width;
  Tensor img = background;
  const std::size_t n = uniform_int(rng, spec.count_min, spec.count_max);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = uniform(rng, 0.0, static_cast<double>(spec.width));
    const double y = uniform(rng, 0.0, static_cast<double>(spec.height));
    const double t = y / static_cast<double>(spec.height);
    const double sigma = spec.sigma_top + (spec.sigma_bottom - spec.sigma_top) * t;
    add_blob(img, x, y, sigma, 1.0);
    out.annotation.points.push_back({x, y});
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double& v : img.data()) {
    v += spec.noise_level * noise(rng);
    v = std::clamp(v, 0.0, 1.0);
  }
  out.image = std::move(img);
  out.gt_density = density::downsample_density(
      density::make_density_map(out.annotation, opts.sigma), opts.downsample);
  return out;
}

ScenePool generate_scene_pool(std::size_t n_scenes, std::size_t images_per_scene,
                              std::uint64_t master_seed, const GeneratorOptions& opts) {
  if (n_scenes < 2) throw std::invalid_argument("generate_scene_pool: need at least 2 scenes");
  if (images_per_scene < 2) {
    throw std::invalid_argument("generate_scene_pool: need at least 2 images per scene");
  }
  if (opts.downsample == 0 || opts.height % opts.downsample != 0 ||
      opts.width % opts.downsample != 0) {
    throw std::invalid_argument("generate_scene_pool: extent not divisible by downsample factor");
  }
  ScenePool pool(n_scenes);
  const auto n = static_cast<long>(n_scenes);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    Scene& scene = pool[static_cast<std::size_t>(i)];
    scene.spec = draw_scene_spec(static_cast<int>(i), master_seed, opts);
    scene.spec.validate();
    const Tensor bg = render_background(scene.spec);
    auto seeds = seeded({master_seed, static_cast<std::uint64_t>(i), 0x1a9eULL});
    for (std::size_t j = 0; j < images_per_scene; ++j) {
      scene.images.push_back(render_image(scene.spec, bg, seeds(), opts));
    }
    scene.roi = make_roi(scene.spec);
  }
  return pool;
}

Episode sample_episode(const ScenePool& pool, std::size_t k, std::mt19937_64& rng) {
  if (pool.empty()) throw std::invalid_argument("sample_episode: empty pool");
  Episode ep;
  ep.scene_index = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
  const Scene& scene = pool[ep.scene_index];
  ep.scene_id = scene.spec.id;
  const std::size_t n = scene.images.size();
  if (k == 0 || k >= n) {
    throw std::invalid_argument("sample_episode: K=" + std::to_string(k) + " must be in [1, " +
                                std::to_string(n) + ") for scene " +
                                std::to_string(scene.spec.id));
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Partial Fisher-Yates; std::shuffle's draw pattern is unspecified.
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  ep.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  ep.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  return ep;
}

namespace {

void write_spec(const std::string& path, const SceneSpec& s) {
  std::ofstream out(path);
  out << std::hexfloat;
  out << "id " << s.id << '\n'
      << "count_min " << s.count_min << '\n'
      << "count_max " << s.count_max << '\n'
      << "sigma_top " << s.sigma_top << '\n'
      << "sigma_bottom " << s.sigma_bottom << '\n'
      << "background_seed " << s.background_seed << '\n'
      << "noise_level " << s.noise_level << '\n'
      << "height " << s.height << '\n'
      << "width " << s.width << '\n'
      << "background_level " << s.background_level << '\n'
      << "clutter_count " << s.clutter_count << '\n'
      << "clutter_sigma " << s.clutter_sigma << '\n'
      << "clutter_amplitude " << s.clutter_amplitude << '\n'
      << "roi_top " << s.roi_top << '\n';
  if (!out) throw density::DataError(path + ": write failed");
}

void read_spec(const std::string& path, SceneSpec& s) {
  std::ifstream in(path);
  std::string key, val;
  std::size_t line = 0;
  while (in >> key >> val) {
    ++line;
    try {
      if (key == "count_min") s.count_min = std::stoull(val);
      else if (key == "count_max") s.count_max = std::stoull(val);
      else if (key == "sigma_top") s.sigma_top = std::strtod(val.c_str(), nullptr);
      else if (key == "sigma_bottom") s.sigma_bottom = std::strtod(val.c_str(), nullptr);
      else if (key == "background_seed") s.background_seed = std::stoull(val);
      else if (key == "noise_level") s.noise_level = std::strtod(val.c_str(), nullptr);
      else if (key == "background_level") s.background_level = std::strtod(val.c_str(), nullptr);
      else if (key == "clutter_count") s.clutter_count = std::stoull(val);
      else if (key == "clutter_sigma") s.clutter_sigma = std::strtod(val.c_str(), nullptr);
      else if (key == "clutter_amplitude") s.clutter_amplitude = std::strtod(val.c_str(), nullptr);
      else if (key == "roi_top") s.roi_top = std::stoull(val);
    } catch (const std::exception&) {
      throw density::DataError(path + ":" + std::to_string(line) + ": malformed value '" + val + "'");
    }
  }
}

std::string image_name(std::size_t j) {
  std::ostringstream os;
  os << "images/" << std::setw(4) << std::setfill('0') << j << ".pgm";
  return os.str();
}

}  // namespace

void write_dataset(const std::string& root, const ScenePool& pool) {
  fs::create_directories(root);
  for (const Scene& scene : pool) {
    const fs::path dir = fs::path(root) / ("scene_" + std::to_string(scene.spec.id));
    fs::create_directories(dir / "images");
    std::vector<density::AnnotationRecord> records;
    for (std::size_t j = 0; j < scene.images.size(); ++j) {
      const std::string name = image_name(j);
      pgm::write((dir / name).string(), scene.images[j].image, 65535);
      records.push_back({name, scene.images[j].annotation});
    }
    density::write_annotations((dir / "annotations.txt").string(), records);
    if (scene.roi) density::write_roi((dir / "roi.pgm").string(), *scene.roi);
    write_spec((dir / "scene.txt").string(), scene.spec);
  }
}

ScenePool load_dataset(const std::string& root, std::size_t downsample, double sigma) {
  if (!fs::is_directory(root)) throw density::DataError(root + ": dataset root is not a directory");
  std::map<int, fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("scene_", 0) != 0) continue;
    try {
      std::size_t used = 0;
      const int id = std::stoi(name.substr(6), &used);
      if (used != name.size() - 6) throw std::invalid_argument("trailing");
      dirs[id] = entry.path();
    } catch (const std::exception&) {
      throw density::DataError(entry.path().string() + ": scene directory id is not an integer");
    }
  }
  if (dirs.empty()) throw density::DataError(root + ": no scene_<id> directories");

  ScenePool pool;
  for (const auto& [id, dir] : dirs) {
    Scene scene;
    scene.spec.id = id;
    const std::string ann_path = (dir / "annotations.txt").string();
    if (!fs::exists(ann_path)) throw density::DataError(ann_path + ": missing annotation file");
    auto records = density::read_annotations(ann_path);
    if (records.empty()) throw density::DataError(ann_path + ": no annotation records");
    std::size_t cmin = SIZE_MAX, cmax = 0;
    for (std::size_t j = 0; j < records.size(); ++j) {
      const auto& rec = records[j];
      const std::string img_path = (dir / rec.image_path).string();
      if (!fs::exists(img_path)) {
        throw density::DataError(ann_path + ":" + std::to_string(rec.line) + ": missing image " +
                                 img_path);
      }
      LabeledImage li;
      li.image = pgm::read(img_path);
      if (li.image.dim(0) != rec.annotation.height || li.image.dim(1) != rec.annotation.width) {
        throw density::DataError(img_path + ": extent " + std::to_string(li.image.dim(0)) + "x" +
                                 std::to_string(li.image.dim(1)) +
                                 " disagrees with annotation record");
      }
      if (rec.annotation.height % downsample != 0 || rec.annotation.width % downsample != 0) {
        throw density::DataError(img_path + ": extent not divisible by downsample factor " +
                                 std::to_string(downsample));
      }
      li.annotation = rec.annotation;
      li.gt_density =
          density::downsample_density(density::make_density_map(li.annotation, sigma), downsample);
      cmin = std::min(cmin, li.annotation.points.size());
      cmax = std::max(cmax, li.annotation.points.size());
      scene.images.push_back(std::move(li));
    }
    scene.spec.count_min = cmin;
    scene.spec.count_max = cmax;
    scene.spec.height = scene.images.front().image.dim(0);
    scene.spec.width = scene.images.front().image.dim(1);
    const std::string spec_path = (dir / "scene.txt").string();
    if (fs::exists(spec_path)) read_spec(spec_path, scene.spec);
    const std::string roi_path = (dir / "roi.pgm").string();
    if (fs::exists(roi_path)) {
      scene.roi = density::read_roi(roi_path);
      if (scene.roi->grid.dim(0) != scene.spec.height || scene.roi->grid.dim(1) != scene.spec.width) {
        throw density::DataError(roi_path + ": roi extent disagrees with images");
      }
    }
    pool.push_back(std::move(scene));
  }
  return pool;
}

}  // namespace metacount::scenes
