#pragma once

// Ground-truth density maps from dot annotations, counting, and ROI masks.

#include <optional>
#include <string>
#include <vector>

#include "metacount/tensor.hpp"

namespace metacount::density {

// Malformed or inconsistent input data; the message carries path and line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point {
  double x = 0.0;  // column, pixels
  double y = 0.0;  // row, pixels

  bool operator==(const Point&) const = default;
};

// Points lie in [0,W) x [0,H). Pixel (r, c) covers [c, c+1) x [r, r+1) and
// is sampled at its centre.
struct DotAnnotation {
  std::vector<Point> points;
  std::size_t height = 0;
  std::size_t width = 0;

  void validate() const;  // throws std::out_of_range for points outside the extent
};

// Non-negative [H,W] grid whose sum is a count.
struct DensityMap {
  Tensor grid;

  std::size_t height() const { return grid.dim(0); }
  std::size_t width() const { return grid.dim(1); }
};

// {0,1}-valued [H,W] grid with at least one 1.
struct RoiMask {
  Tensor grid;

  static RoiMask all_ones(std::size_t h, std::size_t w);
  void validate() const;
};

inline constexpr double kDefaultSigma = 3.0;
inline constexpr double kTruncationRadius = 3.0;  // in units of sigma

// Each point contributes a Gaussian truncated at 3 sigma and renormalized so
// that its in-image mass is exactly 1. Points are accumulated in sorted
// (y, x) order so the result does not depend on annotation order.
DensityMap make_density_map(const DotAnnotation& ann, double sigma = kDefaultSigma);

double count(const DensityMap& map, const std::optional<RoiMask>& roi = {});
double count(const Tensor& grid, const std::optional<RoiMask>& roi = {});

// Sum-pooling over factor x factor blocks.
DensityMap downsample_density(const DensityMap& map, std::size_t factor);

// ROI at a coarser resolution: a cell is inside when at least half of its
// block is inside.
RoiMask downsample_roi(const RoiMask& roi, std::size_t factor);

// Annotation records, one per line:
//   <image-path> <H> <W> <n> x1 y1 ... xn yn
// Blank lines and lines starting with '#' are skipped.
struct AnnotationRecord {
  std::string image_path;
  DotAnnotation annotation;
  std::size_t line = 0;  // set by read_annotations
};

std::vector<AnnotationRecord> read_annotations(const std::string& path);
void write_annotations(const std::string& path, const std::vector<AnnotationRecord>& records);

RoiMask read_roi(const std::string& pgm_path);
void write_roi(const std::string& pgm_path, const RoiMask& roi);

}  // namespace metacount::density
