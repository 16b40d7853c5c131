#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "csi/image.hpp"

namespace csi {

/// Attenuation volume on an isotropic voxel grid. Voxel (i, j, k) covers
/// [origin + (i, j, k) * spacing, origin + (i+1, j+1, k+1) * spacing) in mm,
/// with the isocenter at (0, 0, 0). x runs fastest in `data`.
struct Volume3D {
  int nx = 0, ny = 0, nz = 0;
  double spacing = 1.0;
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::vector<float> data;

  Volume3D() = default;
  Volume3D(int nx, int ny, int nz, double spacing, std::array<double, 3> origin);

  /// Cube of n^3 voxels centered on the isocenter.
  static Volume3D centered(int n, double spacing);

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }

  std::array<double, 3> upper() const {
    return {origin[0] + nx * spacing, origin[1] + ny * spacing, origin[2] + nz * spacing};
  }
  std::array<double, 3> voxel_center(int i, int j, int k) const {
    return {origin[0] + (i + 0.5) * spacing, origin[1] + (j + 0.5) * spacing,
            origin[2] + (k + 0.5) * spacing};
  }

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  friend bool operator==(const Volume3D&, const Volume3D&) = default;
};

void write_volume(const std::filesystem::path& raw_path, const Volume3D& vol);
Volume3D read_volume(const std::filesystem::path& raw_path);

/// Circular C-arm trajectory around the z axis. At angle 0 the source sits at
/// (+sid, 0, 0) and the detector plane is centered at (-(sdd - sid), 0, 0).
/// Detector columns run along (-sin a, cos a, 0); rows run down along -z.
struct ProjectionGeometry {
  double sdd = 1164.0;
  double sid = 622.0;
  int rows = 256;
  int cols = 256;
  double pixel_mm = 1.16;
  double angular_range_deg = 360.0;
  double angular_step_deg = 6.0;

  void validate() const;
  double magnification() const { return sdd / sid; }
  friend bool operator==(const ProjectionGeometry&, const ProjectionGeometry&) = default;
};

/// Mobile C-arm parameters, full 256x256 detector.
ProjectionGeometry full_geometry();
/// 64x64 detector covering the same physical area (pixel pitch scaled 4x).
ProjectionGeometry desk_geometry();

std::vector<double> trajectory_angles(const ProjectionGeometry& geom);

struct Ray {
  std::array<double, 3> source;
  std::array<double, 3> target;  // detector pixel center
};

Ray detector_ray(const ProjectionGeometry& geom, double angle_deg, int row, int col);

/// Exact line integral of `vol` along the segment source -> target
/// (incremental Siddon traversal). Returns 0 when the ray misses the volume.
double siddon_line_integral(const Volume3D& vol, const Ray& ray);

/// Line integrals through every detector pixel center.
Image2D forward_project(const Volume3D& vol, const ProjectionGeometry& geom, double angle_deg);

/// Binary mask, 0 where the projected metal path exceeds `threshold`,
/// 1 on background.
Image2D render_mask(const Volume3D& metal, const ProjectionGeometry& geom, double angle_deg,
                    double threshold);

/// Mask from an already projected metal image.
Image2D threshold_mask(const Image2D& metal_projection, double threshold);

}  // namespace csi
