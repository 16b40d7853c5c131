#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "csi/projector.hpp"

namespace csi {

enum class PrimitiveKind { Ellipsoid, Cylinder, PlateWithHoles };
enum class Material { Tissue, Metal };

/// One rasterizable solid. `axes` are semi-axes in the primitive's local
/// frame: ellipsoid radii; cylinder (radius x, radius y, half-length along z);
/// plate (half-length x, half-width y, half-thickness z). Plates have
/// `holes` through-holes along local z, evenly spaced along local x.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Ellipsoid;
  std::array<double, 3> center{0.0, 0.0, 0.0};
  std::array<double, 3> axes{1.0, 1.0, 1.0};
  std::array<double, 3> rotation_deg{0.0, 0.0, 0.0};  // x, then y, then z
  double attenuation = 0.0;
  Material material = Material::Tissue;
  int holes = 0;
  double hole_radius = 0.0;

  friend bool operator==(const Primitive&, const Primitive&) = default;
};

struct VolumeGrid {
  int n = 64;
  double spacing = 2.5;
  friend bool operator==(const VolumeGrid&, const VolumeGrid&) = default;
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  VolumeGrid grid;
  /// Subsamples per voxel edge; occupancy is the inside fraction.
  int supersample = 1;
  std::vector<Primitive> parts;  // painted in order, later parts cover earlier

  void validate() const;
};

struct PhantomVolumes {
  Volume3D tissue;
  Volume3D metal;
};

/// Rasterizes tissue-tagged parts into `tissue` and metal-tagged parts into
/// `metal`. Throws std::invalid_argument for a part that lies entirely
/// outside the volume.
PhantomVolumes build_phantom(const PhantomSpec& spec);

struct KneePhantomOptions {
  VolumeGrid grid;
  int supersample = 2;
  int implants_min = 1;
  int implants_max = 3;
};

/// Procedural knee: soft-tissue elliptic cylinder with femur, tibia, fibula
/// and patella, plus randomly placed K-wires, screws and plates. Implant
/// centers are uniform over the soft-tissue bounding box.
PhantomSpec random_knee_phantom(std::uint64_t seed, const KneePhantomOptions& opts = {});

}  // namespace csi
