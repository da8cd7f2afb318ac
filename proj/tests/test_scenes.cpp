#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "metacount/scenes.hpp"

using namespace metacount;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("metacount_scenes_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("pool generation is deterministic") {
  const auto a = scenes::generate_scene_pool(4, 6, 42);
  const auto b = scenes::generate_scene_pool(4, 6, 42);
  REQUIRE(a.size() == 4);
  for (std::size_t s = 0; s < a.size(); ++s) {
    CHECK(a[s].spec.sigma_top == b[s].spec.sigma_top);
    for (std::size_t i = 0; i < a[s].images.size(); ++i) {
      CHECK(a[s].images[i].image == b[s].images[i].image);
      CHECK(a[s].images[i].annotation.points == b[s].images[i].annotation.points);
    }
  }
  const auto c = scenes::generate_scene_pool(4, 6, 43);
  CHECK_FALSE(c[0].images[0].image == a[0].images[0].image);
}

TEST_CASE("generated images respect the labeled-image contract") {
  const auto pool = scenes::generate_scene_pool(6, 8, 7);
  for (const auto& scene : pool) {
    scene.spec.validate();
    REQUIRE(scene.roi.has_value());
    for (const auto& img : scene.images) {
      CHECK(img.image.shape() == Shape{48, 48});
      for (double v : img.image.data()) CHECK((v >= 0.0 && v <= 1.0));
      const std::size_t n = img.annotation.points.size();
      CHECK(n >= scene.spec.count_min);
      CHECK(n <= scene.spec.count_max);
      CHECK(img.gt_density.grid.shape() == Shape{12, 12});
      CHECK(std::abs(density::count(img.gt_density) - static_cast<double>(n)) < 1e-6);
    }
  }
}

TEST_CASE("a fixed count range renders exactly that many people") {
  auto spec = scenes::draw_scene_spec(0, 1, {});
  spec.count_min = spec.count_max = 5;
  const Tensor bg = scenes::render_background(spec);
  for (std::uint64_t s = 0; s < 20; ++s) {
    CHECK(scenes::render_image(spec, bg, s, {}).annotation.points.size() == 5);
  }
  spec.count_min = spec.count_max = 0;
  const auto empty = scenes::render_image(spec, bg, 3, {});
  CHECK(empty.annotation.points.empty());
  CHECK(density::count(empty.gt_density) == 0.0);
}

TEST_CASE("scene specs are validated") {
  scenes::SceneSpec s = scenes::draw_scene_spec(1, 1, {});
  s.count_min = s.count_max + 1;
  CHECK_THROWS(s.validate());
  s = scenes::draw_scene_spec(1, 1, {});
  s.sigma_top = 0.0;
  CHECK_THROWS(s.validate());
  s = scenes::draw_scene_spec(1, 1, {});
  s.noise_level = -0.1;
  CHECK_THROWS(s.validate());
  CHECK_THROWS(scenes::generate_scene_pool(1, 6, 1));
}

TEST_CASE("episodes split a scene into disjoint train and test sets") {
  const auto pool = scenes::generate_scene_pool(5, 12, 3);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = (i % 2) ? 1 : 5;
    const auto ep = scenes::sample_episode(pool, k, rng);
    REQUIRE(ep.train.size() == k);
    REQUIRE(ep.train.size() + ep.test.size() == 12);
    std::set<std::size_t> all(ep.train.begin(), ep.train.end());
    for (auto t : ep.test) all.insert(t);
    REQUIRE(all.size() == 12);
    REQUIRE(ep.scene_id == pool[ep.scene_index].spec.id);
  }
  CHECK_THROWS_AS(scenes::sample_episode(pool, 12, rng), std::invalid_argument);
  CHECK_THROWS_AS(scenes::sample_episode(pool, 0, rng), std::invalid_argument);
}

TEST_CASE("a fixed rng yields the same episode sequence") {
  const auto pool = scenes::generate_scene_pool(5, 12, 3);
  std::mt19937_64 a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    const auto x = scenes::sample_episode(pool, 5, a);
    const auto y = scenes::sample_episode(pool, 5, b);
    CHECK(x.scene_index == y.scene_index);
    CHECK(x.train == y.train);
    CHECK(x.test == y.test);
  }
}

TEST_CASE("distinct scenes never share an image") {
  const auto pool = scenes::generate_scene_pool(6, 8, 11);
  for (std::size_t a = 0; a < pool.size(); ++a) {
    for (std::size_t b = a + 1; b < pool.size(); ++b) {
      for (const auto& x : pool[a].images) {
        for (const auto& y : pool[b].images) CHECK_FALSE(x.image == y.image);
      }
    }
  }
}

TEST_CASE("datasets round trip through the on-disk layout") {
  const auto pool = scenes::generate_scene_pool(3, 5, 21);
  const auto dir = fresh_dir("roundtrip");
  scenes::write_dataset(dir.string(), pool);
  CHECK(fs::exists(dir / "scene_0" / "images" / "0000.pgm"));
  CHECK(fs::exists(dir / "scene_2" / "annotations.txt"));
  CHECK(fs::exists(dir / "scene_1" / "roi.pgm"));

  const auto back = scenes::load_dataset(dir.string(), 4, 3.0);
  REQUIRE(back.size() == 3);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(back[s].spec.id == pool[s].spec.id);
    CHECK(back[s].spec.sigma_top == pool[s].spec.sigma_top);
    CHECK(back[s].roi->grid == pool[s].roi->grid);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(back[s].images[i].annotation.points == pool[s].images[i].annotation.points);
      CHECK(back[s].images[i].gt_density.grid == pool[s].images[i].gt_density.grid);
      for (std::size_t k = 0; k < back[s].images[i].image.size(); ++k) {
        CHECK(std::abs(back[s].images[i].image[k] - pool[s].images[i].image[k]) <= 0.5 / 65535.0 + 1e-15);
      }
    }
  }
  // Writing the loaded pool again gives identical files.
  const auto dir2 = fresh_dir("roundtrip2");
  scenes::write_dataset(dir2.string(), back);
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir);
    std::ifstream a(entry.path(), std::ios::binary), b(dir2 / rel, std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) ==
          std::string(std::istreambuf_iterator<char>(b), {}));
  }
}

TEST_CASE("loading reports the offending path and line") {
  const auto pool = scenes::generate_scene_pool(2, 3, 5);
  const auto dir = fresh_dir("broken");
  scenes::write_dataset(dir.string(), pool);
  const auto ann = dir / "scene_1" / "annotations.txt";
  std::size_t lines = 0;
  {
    std::ifstream in(ann);
    for (std::string l; std::getline(in, l);) ++lines;
  }
  {
    std::ofstream out(ann, std::ios::app);
    out << "images/0000.pgm 48 48 1 50.0 1.0\n";
  }
  try {
    scenes::load_dataset(dir.string(), 4, 3.0);
    FAIL("expected a data error");
  } catch (const density::DataError& e) {
    CHECK(std::string(e.what()).find(ann.string() + ":" + std::to_string(lines + 1)) !=
          std::string::npos);
  }
  fs::remove(ann);
  CHECK_THROWS_AS(scenes::load_dataset(dir.string(), 4, 3.0), density::DataError);
  CHECK_THROWS_AS(scenes::load_dataset((dir / "missing").string(), 4, 3.0), density::DataError);

  const auto dir2 = fresh_dir("missing_image");
  scenes::write_dataset(dir2.string(), pool);
  fs::remove(dir2 / "scene_0" / "images" / "0001.pgm");
  try {
    scenes::load_dataset(dir2.string(), 4, 3.0);
    FAIL("expected a data error");
  } catch (const density::DataError& e) {
    CHECK(std::string(e.what()).find("annotations.txt:3") != std::string::npos);
  }
}
