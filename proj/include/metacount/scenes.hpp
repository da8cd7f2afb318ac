#pragma once

// Synthetic camera scenes and the episodic sampler.
//
// A scene is one fixed camera: a static background texture (smooth shading
// plus static clutter blobs), a perspective gradient of person sizes from the
// top row to the bottom row, a count range and a sensor noise level. Images
// are rendered as unit-amplitude Gaussian blobs, one per annotated person.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "metacount/density.hpp"
#include "metacount/tensor.hpp"

namespace metacount::scenes {

struct SceneSpec {
  int id = 0;
  std::size_t count_min = 0;
  std::size_t count_max = 0;
  double sigma_top = 1.0;     // person blob size at row 0, pixels
  double sigma_bottom = 1.0;  // person blob size at the last row
  std::uint64_t background_seed = 0;
  double noise_level = 0.0;
  std::size_t height = 48;
  std::size_t width = 48;
  // Background texture parameters.
  double background_level = 0.0;
  std::size_t clutter_count = 0;
  double clutter_sigma = 1.0;
  double clutter_amplitude = 0.0;
  std::size_t roi_top = 0;  // rows above this are outside the scene ROI

  void validate() const;
};

struct LabeledImage {
  Tensor image;                      // [H,W] in [0,1]
  density::DotAnnotation annotation;
  density::DensityMap gt_density;    // at network output resolution
};

struct Scene {
  SceneSpec spec;
  std::vector<LabeledImage> images;
  std::optional<density::RoiMask> roi;  // full resolution
};

using ScenePool = std::vector<Scene>;

struct GeneratorOptions {
  std::size_t height = 48;
  std::size_t width = 48;
  std::size_t downsample = 4;
  double sigma = density::kDefaultSigma;
};

// Scene specs are drawn deterministically from master_seed; scene i gets
// id i. Requires n_scenes >= 2 and images_per_scene >= 2.
ScenePool generate_scene_pool(std::size_t n_scenes, std::size_t images_per_scene,
                              std::uint64_t master_seed, const GeneratorOptions& opts = {});

SceneSpec draw_scene_spec(int id, std::uint64_t master_seed, const GeneratorOptions& opts);
Tensor render_background(const SceneSpec& spec);
LabeledImage render_image(const SceneSpec& spec, const Tensor& background, std::uint64_t seed,
                          const GeneratorOptions& opts);

struct Episode {
  std::size_t scene_index = 0;  // into the pool
  int scene_id = 0;
  std::vector<std::size_t> train;  // image indices, |train| = K
  std::vector<std::size_t> test;   // the remaining images, shuffled
};

// Uniform scene, then K train images without replacement; test is the rest.
Episode sample_episode(const ScenePool& pool, std::size_t k, std::mt19937_64& rng);

// Dataset layout:
//   root/scene_<id>/images/*.pgm
//   root/scene_<id>/annotations.txt   (one record per image, see density.hpp)
//   root/scene_<id>/roi.pgm           (optional)
// Scenes are returned in increasing id order; ground truth is rebuilt from
// the annotations at 1/downsample resolution.
ScenePool load_dataset(const std::string& root, std::size_t downsample,
                       double sigma = density::kDefaultSigma);
void write_dataset(const std::string& root, const ScenePool& pool);

}  // namespace metacount::scenes
