#include "metacount/density.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "metacount/pgm.hpp"

namespace metacount::density {

void DotAnnotation::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.x >= 0.0 && p.x < static_cast<double>(width) && p.y >= 0.0 &&
          p.y < static_cast<double>(height))) {
      std::ostringstream os;
      os << "point " << i << " (" << p.x << ", " << p.y << ") outside image extent " << height
         << "x" << width;
      throw std::out_of_range(os.str());
    }
  }
}

RoiMask RoiMask::all_ones(std::size_t h, std::size_t w) { return RoiMask{Tensor({h, w}, 1.0)}; }

void RoiMask::validate() const {
  if (grid.rank() != 2) throw ShapeError("roi must be [H,W], got " + shape_str(grid.shape()));
  bool any = false;
  for (double v : grid.data()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("roi entries must be 0 or 1");
    any = any || v == 1.0;
  }
  if (!any) throw std::invalid_argument("roi must contain at least one pixel");
}

DensityMap make_density_map(const DotAnnotation& ann, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("make_density_map: sigma must be positive");
  if (ann.height == 0 || ann.width == 0) {
    throw std::invalid_argument("make_density_map: empty image extent");
  }
  ann.validate();

  std::vector<Point> pts = ann.points;
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });

  DensityMap map{Tensor({ann.height, ann.width}, 0.0)};
  const double radius = kTruncationRadius * sigma;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const auto H = static_cast<long>(ann.height);
  const auto W = static_cast<long>(ann.width);
  std::vector<double> kernel;

  for (const Point& p : pts) {
    const long r0 = std::max(0L, static_cast<long>(std::ceil(p.y - radius - 0.5)));
    const long r1 = std::min(H - 1, static_cast<long>(std::floor(p.y + radius - 0.5)));
    const long c0 = std::max(0L, static_cast<long>(std::ceil(p.x - radius - 0.5)));
    const long c1 = std::min(W - 1, static_cast<long>(std::floor(p.x + radius - 0.5)));
    kernel.assign(static_cast<std::size_t>((r1 - r0 + 1) * (c1 - c0 + 1)), 0.0);
    double mass = 0.0;
    std::size_t k = 0;
    for (long r = r0; r <= r1; ++r) {
      const double dy = static_cast<double>(r) + 0.5 - p.y;
      for (long c = c0; c <= c1; ++c, ++k) {
        const double dx = static_cast<double>(c) + 0.5 - p.x;
        kernel[k] = std::exp(-(dx * dx + dy * dy) * inv2s2);
        mass += kernel[k];
      }
    }
    k = 0;
    for (long r = r0; r <= r1; ++r) {
      for (long c = c0; c <= c1; ++c, ++k) {
        map.grid.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) += kernel[k] / mass;
      }
    }
  }
  return map;
}

double count(const Tensor& grid, const std::optional<RoiMask>& roi) {
  if (!roi) return grid.sum();
  if (roi->grid.shape() != grid.shape()) {
    throw ShapeError("count: roi " + shape_str(roi->grid.shape()) + " vs map " +
                     shape_str(grid.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (roi->grid[i] == 1.0) s += grid[i];
  }
  return s;
}

double count(const DensityMap& map, const std::optional<RoiMask>& roi) {
  return count(map.grid, roi);
}

DensityMap downsample_density(const DensityMap& map, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("downsample_density: factor must be positive");
  const std::size_t H = map.height(), W = map.width();
  if (H % factor != 0 || W % factor != 0) {
    throw ShapeError("downsample_density: extent " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by " + std::to_string(factor));
  }
  const std::size_t h = H / factor, w = W / factor;
  DensityMap out{Tensor({h, w}, 0.0)};
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) out.grid.at(r / factor, c / factor) += map.grid.at(r, c);
  }
  return out;
}

RoiMask downsample_roi(const RoiMask& roi, std::size_t factor) {
  const std::size_t H = roi.grid.dim(0), W = roi.grid.dim(1);
  if (factor == 0 || H % factor != 0 || W % factor != 0) {
    throw ShapeError("downsample_roi: extent " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by " + std::to_string(factor));
  }
  const std::size_t h = H / factor, w = W / factor;
  Tensor inside({h, w}, 0.0);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) inside.at(r / factor, c / factor) += roi.grid.at(r, c);
  }
  const double half = 0.5 * static_cast<double>(factor * factor);
  RoiMask out{Tensor({h, w}, 0.0)};
  for (std::size_t i = 0; i < inside.size(); ++i) out.grid[i] = inside[i] >= half ? 1.0 : 0.0;
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

[[noreturn]] void fail(const std::string& path, std::size_t line, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& tok, const std::string& path, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    fail(path, line, "malformed number '" + tok + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& tok, const std::string& path, std::size_t line) {
  std::size_t v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    fail(path, line, "malformed integer '" + tok + "'");
  }
  return v;
}

}  // namespace

std::vector<AnnotationRecord> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open annotation file");
  std::vector<AnnotationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream is(line);
    std::vector<std::string> tok;
    for (std::string t; is >> t;) tok.push_back(t);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() < 4) fail(path, lineno, "expected '<path> <H> <W> <n> [x y]...'");
    AnnotationRecord rec;
    rec.line = lineno;
    rec.image_path = tok[0];
    rec.annotation.height = parse_size(tok[1], path, lineno);
    rec.annotation.width = parse_size(tok[2], path, lineno);
    if (rec.annotation.height == 0 || rec.annotation.width == 0) {
      fail(path, lineno, "image extent must be positive");
    }
    const std::size_t n = parse_size(tok[3], path, lineno);
    if (tok.size() != 4 + 2 * n) {
      fail(path, lineno, "expected " + std::to_string(n) + " points, found " +
                             std::to_string(tok.size() - 4) + " coordinates");
    }
    for (std::size_t i = 0; i < n; ++i) {
      rec.annotation.points.push_back(
          {parse_double(tok[4 + 2 * i], path, lineno), parse_double(tok[5 + 2 * i], path, lineno)});
    }
    try {
      rec.annotation.validate();
    } catch (const std::out_of_range& e) {
      fail(path, lineno, e.what());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_annotations(const std::string& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write annotation file");
  out << "# image H W n x1 y1 ... xn yn\n";
  for (const auto& r : records) {
    out << r.image_path << ' ' << r.annotation.height << ' ' << r.annotation.width << ' '
        << r.annotation.points.size();
    for (const auto& p : r.annotation.points) {
      out << ' ' << format_double(p.x) << ' ' << format_double(p.y);
    }
    out << '\n';
  }
  if (!out) throw DataError(path + ": write failed");
}

RoiMask read_roi(const std::string& pgm_path) {
  Tensor img = pgm::read(pgm_path);
  RoiMask roi{Tensor(img.shape(), 0.0)};
  for (std::size_t i = 0; i < img.size(); ++i) roi.grid[i] = img[i] >= 0.5 ? 1.0 : 0.0;
  try {
    roi.validate();
  } catch (const std::exception& e) {
    throw DataError(pgm_path + ": " + e.what());
  }
  return roi;
}

void write_roi(const std::string& pgm_path, const RoiMask& roi) {
  pgm::write(pgm_path, roi.grid, 255);
}

}  // namespace metacount::density
