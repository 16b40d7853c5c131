#include "csi/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

#include "csi/rng.hpp"

namespace csi {

namespace {

Eigen::Matrix3d rotation_matrix(const std::array<double, 3>& deg) {
  constexpr double k = std::numbers::pi / 180.0;
  return (Eigen::AngleAxisd(deg[2] * k, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(deg[1] * k, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(deg[0] * k, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

bool inside_local(const Primitive& p, const Eigen::Vector3d& q) {
  const auto& a = p.axes;
  switch (p.kind) {
    case PrimitiveKind::Ellipsoid: {
      const double s = (q.x() / a[0]) * (q.x() / a[0]) + (q.y() / a[1]) * (q.y() / a[1]) +
                       (q.z() / a[2]) * (q.z() / a[2]);
      return s <= 1.0;
    }
    case PrimitiveKind::Cylinder: {
      if (std::abs(q.z()) > a[2]) return false;
      return (q.x() / a[0]) * (q.x() / a[0]) + (q.y() / a[1]) * (q.y() / a[1]) <= 1.0;
    }
    case PrimitiveKind::PlateWithHoles: {
      if (std::abs(q.x()) > a[0] || std::abs(q.y()) > a[1] || std::abs(q.z()) > a[2]) return false;
      const double pitch = 2.0 * a[0] / std::max(p.holes, 1);
      for (int h = 0; h < p.holes; ++h) {
        const double hx = -a[0] + (h + 0.5) * pitch;
        const double dx = q.x() - hx;
        if (dx * dx + q.y() * q.y() <= p.hole_radius * p.hole_radius) return false;
      }
      return true;
    }
  }
  return false;
}

struct Box {
  Eigen::Vector3d lo, hi;
};

Box world_bounds(const Primitive& p, const Eigen::Matrix3d& rot) {
  const Eigen::Vector3d c(p.center[0], p.center[1], p.center[2]);
  Box box{Eigen::Vector3d::Constant(1e300), Eigen::Vector3d::Constant(-1e300)};
  for (int corner = 0; corner < 8; ++corner) {
    const Eigen::Vector3d local((corner & 1 ? 1 : -1) * p.axes[0], (corner & 2 ? 1 : -1) * p.axes[1],
                                (corner & 4 ? 1 : -1) * p.axes[2]);
    const Eigen::Vector3d w = c + rot * local;
    box.lo = box.lo.cwiseMin(w);
    box.hi = box.hi.cwiseMax(w);
  }
  return box;
}

void paint(Volume3D& vol, const Primitive& p, int supersample) {
  const Eigen::Matrix3d rot = rotation_matrix(p.rotation_deg);
  const Eigen::Matrix3d inv = rot.transpose();
  const Eigen::Vector3d c(p.center[0], p.center[1], p.center[2]);
  const Box box = world_bounds(p, rot);
  const auto up = vol.upper();
  for (int a = 0; a < 3; ++a) {
    if (box.hi[a] <= vol.origin[a] || box.lo[a] >= up[a])
      throw std::invalid_argument("build_phantom: primitive lies entirely outside the volume");
  }

  const std::array<int, 3> n{vol.nx, vol.ny, vol.nz};
  std::array<int, 3> i0, i1;
  for (int a = 0; a < 3; ++a) {
    i0[a] = std::clamp(static_cast<int>(std::floor((box.lo[a] - vol.origin[a]) / vol.spacing)), 0, n[a] - 1);
    i1[a] = std::clamp(static_cast<int>(std::floor((box.hi[a] - vol.origin[a]) / vol.spacing)), 0, n[a] - 1);
  }

  const int s = supersample;
  const double sub = vol.spacing / s;
  const double per_sample = 1.0 / (s * s * s);
  for (int k = i0[2]; k <= i1[2]; ++k)
    for (int j = i0[1]; j <= i1[1]; ++j)
      for (int i = i0[0]; i <= i1[0]; ++i) {
        int hits = 0;
        for (int sk = 0; sk < s; ++sk)
          for (int sj = 0; sj < s; ++sj)
            for (int si = 0; si < s; ++si) {
              const Eigen::Vector3d w(vol.origin[0] + i * vol.spacing + (si + 0.5) * sub,
                                      vol.origin[1] + j * vol.spacing + (sj + 0.5) * sub,
                                      vol.origin[2] + k * vol.spacing + (sk + 0.5) * sub);
              if (inside_local(p, inv * (w - c))) ++hits;
            }
        if (hits == 0) continue;
        const double f = hits * per_sample;
        float& v = vol.at(i, j, k);
        v = static_cast<float>(v * (1.0 - f) + p.attenuation * f);
      }
}

}  // namespace

void PhantomSpec::validate() const {
  if (grid.n < 1 || !(grid.spacing > 0.0)) throw std::invalid_argument("PhantomSpec: bad grid");
  if (supersample < 1) throw std::invalid_argument("PhantomSpec: supersample must be >= 1");
  for (const auto& p : parts) {
    if (!(p.attenuation >= 0.0)) throw std::invalid_argument("PhantomSpec: attenuation must be >= 0");
    for (double a : p.axes)
      if (!(a > 0.0)) throw std::invalid_argument("PhantomSpec: axes must be > 0");
    if (p.kind == PrimitiveKind::PlateWithHoles && (p.holes < 0 || p.hole_radius < 0.0))
      throw std::invalid_argument("PhantomSpec: bad plate holes");
  }
}

PhantomVolumes build_phantom(const PhantomSpec& spec) {
  spec.validate();
  PhantomVolumes out{Volume3D::centered(spec.grid.n, spec.grid.spacing),
                     Volume3D::centered(spec.grid.n, spec.grid.spacing)};
  for (const auto& p : spec.parts)
    paint(p.material == Material::Metal ? out.metal : out.tissue, p, spec.supersample);
  return out;
}

PhantomSpec random_knee_phantom(std::uint64_t seed, const KneePhantomOptions& opts) {
  Rng rng(derive_seed(seed, "phantom"));
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  PhantomSpec spec;
  spec.seed = seed;
  spec.grid = opts.grid;
  spec.supersample = opts.supersample;

  // Leg frame: long axis along z, small tilt, arbitrary yaw.
  const std::array<double, 3> leg_rot{uni(-4, 4), uni(-4, 4), uni(0, 360)};
  const Eigen::Matrix3d leg = rotation_matrix(leg_rot);
  const Eigen::Vector3d leg_center(uni(-5, 5), uni(-5, 5), 0.0);
  const double half_extent = 0.5 * opts.grid.n * opts.grid.spacing;
  auto place = [&](double x, double y, double z) {
    const Eigen::Vector3d w = leg_center + leg * Eigen::Vector3d(x, y, z);
    return std::array<double, 3>{w.x(), w.y(), w.z()};
  };
  auto tissue = [&](PrimitiveKind kind, std::array<double, 3> c, std::array<double, 3> axes, double mu) {
    spec.parts.push_back({kind, place(c[0], c[1], c[2]), axes, leg_rot, mu, Material::Tissue, 0, 0.0});
  };

  const double mu_soft = 0.02 * uni(0.9, 1.1);
  const double mu_bone = 0.05 * uni(0.9, 1.1);
  const double mu_marrow = 0.03 * uni(0.9, 1.1);
  const double rx = uni(45, 58), ry = uni(40, 52);
  const double joint = uni(-15, 15);
  const double shaft_len = 0.5 * half_extent + 20.0;

  tissue(PrimitiveKind::Cylinder, {0, 0, 0}, {rx, ry, 1.5 * half_extent}, mu_soft);

  const double fx = uni(-6, 6), fy = uni(-6, 2), rf = uni(11, 15);
  tissue(PrimitiveKind::Cylinder, {fx, fy, joint + shaft_len}, {rf, 0.9 * rf, shaft_len}, mu_bone);
  tissue(PrimitiveKind::Cylinder, {fx, fy, joint + shaft_len}, {0.55 * rf, 0.5 * rf, shaft_len}, mu_marrow);
  tissue(PrimitiveKind::Ellipsoid, {fx, fy, joint + 14}, {uni(28, 36), uni(20, 26), uni(14, 18)}, 0.9 * mu_bone);

  const double tx = fx + uni(-3, 3), ty = fy + uni(-3, 3), rt = uni(12, 16);
  tissue(PrimitiveKind::Cylinder, {tx, ty, joint - shaft_len}, {rt, 0.9 * rt, shaft_len}, mu_bone);
  tissue(PrimitiveKind::Cylinder, {tx, ty, joint - shaft_len}, {0.55 * rt, 0.5 * rt, shaft_len}, mu_marrow);
  tissue(PrimitiveKind::Ellipsoid, {tx, ty, joint - 12}, {uni(30, 36), uni(22, 27), uni(10, 14)}, 0.9 * mu_bone);

  const double fib_r = uni(5, 7);
  tissue(PrimitiveKind::Cylinder, {tx + uni(24, 30), ty - uni(4, 8), joint - 20 - shaft_len},
         {fib_r, fib_r, shaft_len}, mu_bone);
  const std::array<double, 3> patella_at{fx, ry - uni(12, 16), joint + uni(14, 22)};
  const std::array<double, 3> patella_axes{uni(16, 20), 7, uni(17, 21)};
  tissue(PrimitiveKind::Ellipsoid, patella_at, patella_axes, mu_bone);

  // Implants, uniform over the soft-tissue bounding box (clipped to the grid).
  const double mu_metal = 0.5;
  const int n_implants = std::uniform_int_distribution<int>(opts.implants_min, opts.implants_max)(rng);
  const double z_half = 0.75 * half_extent;
  for (int m = 0; m < n_implants; ++m) {
    Primitive p;
    p.material = Material::Metal;
    p.attenuation = mu_metal;
    p.center = place(uni(-rx, rx), uni(-ry, ry), uni(-z_half, z_half));
    const int type = std::uniform_int_distribution<int>(0, 2)(rng);
    if (type == 0) {  // K-wire
      p.kind = PrimitiveKind::Cylinder;
      p.axes = {1.0, 1.0, uni(30, 60)};
      p.rotation_deg = {uni(0, 180), uni(0, 180), uni(0, 360)};
    } else if (type == 1) {  // screw
      p.kind = PrimitiveKind::Cylinder;
      const double r = uni(2, 3);
      p.axes = {r, r, uni(15, 30)};
      p.rotation_deg = {uni(60, 120), uni(-20, 20), uni(0, 360)};
    } else {  // plate, roughly aligned with the leg
      p.kind = PrimitiveKind::PlateWithHoles;
      p.axes = {uni(30, 50), uni(5, 7), uni(1.5, 2.5)};
      p.holes = std::uniform_int_distribution<int>(3, 5)(rng);
      p.hole_radius = 2.0;
      p.rotation_deg = {uni(-10, 10), 90.0 + uni(-10, 10), leg_rot[2] + uni(0, 360)};
    }
    spec.parts.push_back(p);
  }
  return spec;
}

}  // namespace csi
