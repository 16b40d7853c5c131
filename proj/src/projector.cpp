#include "csi/projector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace csi {

namespace fs = std::filesystem;
using nlohmann::json;

Volume3D::Volume3D(int nx_, int ny_, int nz_, double spacing_, std::array<double, 3> origin_)
    : nx(nx_), ny(ny_), nz(nz_), spacing(spacing_), origin(origin_) {
  if (nx < 1 || ny < 1 || nz < 1) throw std::invalid_argument("Volume3D: dims must be >= 1");
  if (!(spacing > 0.0)) throw std::invalid_argument("Volume3D: spacing must be > 0");
  data.assign(static_cast<std::size_t>(nx) * ny * nz, 0.0f);
}

Volume3D Volume3D::centered(int n, double spacing) {
  const double half = 0.5 * n * spacing;
  return Volume3D(n, n, n, spacing, {-half, -half, -half});
}

void Volume3D::validate() const {
  if (nx < 1 || ny < 1 || nz < 1) throw std::invalid_argument("Volume3D: dims must be >= 1");
  if (!(spacing > 0.0)) throw std::invalid_argument("Volume3D: spacing must be > 0");
  if (data.size() != static_cast<std::size_t>(nx) * ny * nz)
    throw std::invalid_argument("Volume3D: data length != nx*ny*nz");
  for (float v : data)
    if (!std::isfinite(v)) throw std::invalid_argument("Volume3D: non-finite voxel");
}

void write_volume(const fs::path& raw_path, const Volume3D& vol) {
  vol.validate();
  write_f32_blob(raw_path, vol.data);
  const json meta = {{"dims", {vol.nx, vol.ny, vol.nz}},
                     {"spacing", vol.spacing},
                     {"origin", vol.origin},
                     {"dtype", "float32"},
                     {"endianness", "little"}};
  std::ofstream out(sidecar_path(raw_path), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write sidecar for " + raw_path.string());
  out << meta.dump(2) << '\n';
}

Volume3D read_volume(const fs::path& raw_path) {
  std::ifstream in(sidecar_path(raw_path));
  if (!in) throw std::runtime_error("missing sidecar for " + raw_path.string());
  const json meta = json::parse(in);
  const auto dims = meta.at("dims").get<std::array<int, 3>>();
  Volume3D vol(dims[0], dims[1], dims[2], meta.at("spacing").get<double>(),
               meta.at("origin").get<std::array<double, 3>>());
  vol.data = read_f32_blob(raw_path);
  vol.validate();
  return vol;
}

void ProjectionGeometry::validate() const {
  if (!(sid > 0.0) || !(sdd > sid)) throw std::invalid_argument("geometry: need sdd > sid > 0");
  if (rows < 1 || cols < 1) throw std::invalid_argument("geometry: detector size must be >= 1");
  if (!(pixel_mm > 0.0)) throw std::invalid_argument("geometry: pixel_mm must be > 0");
  if (!(angular_step_deg > 0.0) || !(angular_range_deg > 0.0))
    throw std::invalid_argument("geometry: angular range and step must be > 0");
  const double n = angular_range_deg / angular_step_deg;
  if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n))
    throw std::invalid_argument("geometry: angular step must divide the angular range");
}

ProjectionGeometry full_geometry() { return {1164.0, 622.0, 256, 256, 1.16, 360.0, 6.0}; }

ProjectionGeometry desk_geometry() { return {1164.0, 622.0, 64, 64, 4.64, 360.0, 6.0}; }

std::vector<double> trajectory_angles(const ProjectionGeometry& geom) {
  geom.validate();
  const auto n = static_cast<int>(std::lround(geom.angular_range_deg / geom.angular_step_deg));
  std::vector<double> angles(n);
  for (int i = 0; i < n; ++i) angles[i] = i * geom.angular_step_deg;
  return angles;
}

Ray detector_ray(const ProjectionGeometry& geom, double angle_deg, int row, int col) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double u = (col - 0.5 * (geom.cols - 1)) * geom.pixel_mm;
  const double v = (0.5 * (geom.rows - 1) - row) * geom.pixel_mm;
  const double back = geom.sdd - geom.sid;
  Ray ray;
  ray.source = {geom.sid * ca, geom.sid * sa, 0.0};
  ray.target = {-back * ca - u * sa, -back * sa + u * ca, v};
  return ray;
}

double siddon_line_integral(const Volume3D& vol, const Ray& ray) {
  const std::array<int, 3> n{vol.nx, vol.ny, vol.nz};
  const auto lo = vol.origin;
  const auto hi = vol.upper();
  std::array<double, 3> d;
  for (int a = 0; a < 3; ++a) d[a] = ray.target[a] - ray.source[a];
  const double length = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (length == 0.0) return 0.0;

  // Parametric entry/exit of the volume box, alpha in [0, 1] along the segment.
  double amin = 0.0, amax = 1.0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (ray.source[a] < lo[a] || ray.source[a] >= hi[a]) return 0.0;
      continue;
    }
    const double a0 = (lo[a] - ray.source[a]) / d[a];
    const double a1 = (hi[a] - ray.source[a]) / d[a];
    amin = std::max(amin, std::min(a0, a1));
    amax = std::min(amax, std::max(a0, a1));
  }
  if (!(amin < amax)) return 0.0;

  // Starting voxel from a point just inside the entry face. An off-by-one at
  // a face tie produces a zero-length segment and self-corrects below.
  const double probe = amin + 1e-12 * (amax - amin);
  std::array<int, 3> idx, step;
  std::array<double, 3> next, delta;
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double pos = ray.source[a] + probe * d[a];
    idx[a] = std::clamp(static_cast<int>(std::floor((pos - lo[a]) / vol.spacing)), 0, n[a] - 1);
    if (d[a] > 0.0) {
      step[a] = 1;
      next[a] = (lo[a] + (idx[a] + 1) * vol.spacing - ray.source[a]) / d[a];
      delta[a] = vol.spacing / d[a];
    } else if (d[a] < 0.0) {
      step[a] = -1;
      next[a] = (lo[a] + idx[a] * vol.spacing - ray.source[a]) / d[a];
      delta[a] = -vol.spacing / d[a];
    } else {
      step[a] = 0;
      next[a] = inf;
      delta[a] = inf;
    }
  }

  double acc = 0.0;
  double cur = amin;
  while (cur < amax) {
    int axis = 0;
    if (next[1] < next[axis]) axis = 1;
    if (next[2] < next[axis]) axis = 2;
    const double stop = std::min(next[axis], amax);
    if (stop > cur) {
      acc += static_cast<double>(vol.at(idx[0], idx[1], idx[2])) * (stop - cur);
      cur = stop;
    }
    idx[axis] += step[axis];
    if (idx[axis] < 0 || idx[axis] >= n[axis]) break;
    next[axis] += delta[axis];
  }
  return acc * length;
}

Image2D forward_project(const Volume3D& vol, const ProjectionGeometry& geom, double angle_deg) {
  vol.validate();
  geom.validate();
  Image2D img(geom.rows, geom.cols);
  for (int r = 0; r < geom.rows; ++r)
    for (int c = 0; c < geom.cols; ++c)
      img(r, c) = static_cast<float>(siddon_line_integral(vol, detector_ray(geom, angle_deg, r, c)));
  return img;
}

Image2D threshold_mask(const Image2D& metal_projection, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("mask threshold must be > 0");
  Image2D mask(metal_projection.rows(), metal_projection.cols(), 1.0f);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (metal_projection[i] > threshold) mask[i] = 0.0f;
  return mask;
}

Image2D render_mask(const Volume3D& metal, const ProjectionGeometry& geom, double angle_deg,
                    double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("mask threshold must be > 0");
  return threshold_mask(forward_project(metal, geom, angle_deg), threshold);
}

}  // namespace csi
