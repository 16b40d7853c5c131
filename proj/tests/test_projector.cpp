#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include <unistd.h>

#include "csi/masks.hpp"
#include "csi/phantom.hpp"
#include "csi/projector.hpp"
#include "oracles.hpp"

using namespace csi;

namespace {

ProjectionGeometry small_geometry(int px, double pitch) {
  ProjectionGeometry g = desk_geometry();
  g.rows = px;
  g.cols = px;
  g.pixel_mm = pitch;
  return g;
}

std::filesystem::path scratch(const char* name) {
  auto p = std::filesystem::temp_directory_path() / ("csi_test_projector_" + std::to_string(::getpid())) / name;
  std::filesystem::create_directories(p.parent_path());
  return p;
}

}  // namespace

TEST_CASE("trajectory angles enumerate the scan") {
  ProjectionGeometry g = full_geometry();
  const auto a = trajectory_angles(g);
  REQUIRE(a.size() == 60);
  CHECK(a.front() == 0.0);
  CHECK(a[1] == doctest::Approx(6.0));
  CHECK(a.back() == doctest::Approx(354.0));
  CHECK(50 * a.size() == 3000);

  g.angular_step_deg = 360;
  CHECK(trajectory_angles(g) == std::vector<double>{0.0});

  g.angular_range_deg = 180;
  g.angular_step_deg = 45;
  CHECK(trajectory_angles(g) == std::vector<double>{0, 45, 90, 135});

  g.angular_step_deg = 7;
  CHECK_THROWS_AS(trajectory_angles(g), std::invalid_argument);
}

TEST_CASE("geometry presets and validation") {
  const auto t1 = full_geometry();
  CHECK(t1.sdd == 1164.0);
  CHECK(t1.sid == 622.0);
  CHECK(t1.rows == 256);
  CHECK(t1.magnification() == doctest::Approx(1.871).epsilon(1e-3));
  const auto desk = desk_geometry();
  CHECK(desk.rows == 64);
  CHECK(desk.cols * desk.pixel_mm == doctest::Approx(t1.cols * t1.pixel_mm));

  ProjectionGeometry bad = t1;
  bad.sid = bad.sdd;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = t1;
  bad.pixel_mm = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = t1;
  bad.cols = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("empty volume projects to zero") {
  const Volume3D v = Volume3D::centered(16, 2.0);
  const Image2D img = forward_project(v, small_geometry(8, 8.0), 30.0);
  for (float x : img.values()) CHECK(x == 0.0f);
}

TEST_CASE("single voxel at the isocenter gives its side length on the central ray") {
  Volume3D v(1, 1, 1, 0.5, {-0.25, -0.25, -0.25});
  v.data[0] = 1.0f;
  const ProjectionGeometry g = small_geometry(3, 1.0);
  const Image2D img = forward_project(v, g, 0.0);
  CHECK(img(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
  const double dense = oracle::dense_ray_integral(v, detector_ray(g, 0.0, 1, 1), 1e-3);
  CHECK(std::abs(img(1, 1) - dense) < 1e-3);
  // Oblique view crosses the voxel through its center along a longer chord.
  const double chord = 0.5 / std::cos(37.0 * std::numbers::pi / 180.0);
  CHECK(forward_project(v, g, 37.0)(1, 1) == doctest::Approx(chord).epsilon(1e-6));
}

TEST_CASE("rays that miss the volume integrate to zero") {
  Volume3D v = Volume3D::centered(4, 1.0);
  for (float& x : v.data) x = 1.0f;
  const ProjectionGeometry g = small_geometry(5, 20.0);
  const Image2D img = forward_project(v, g, 0.0);
  CHECK(img(0, 0) == 0.0f);
  CHECK(img(2, 2) > 0.0f);
}

TEST_CASE("Siddon matches dense sampling on random volumes") {
  Rng rng(7);
  std::uniform_real_distribution<double> ang(0.0, 360.0);
  double worst = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const Volume3D v = oracle::random_volume(rng, 24);
    const ProjectionGeometry g = small_geometry(6, 16.0);
    const double a = ang(rng);
    const Image2D img = forward_project(v, g, a);
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        const double ref = oracle::dense_ray_integral(v, detector_ray(g, a, r, c), 1e-3);
        worst = std::max(worst, std::abs(img(r, c) - ref) / std::max(1.0, std::abs(ref)));
      }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("forward projection is linear") {
  Rng rng(11);
  const Volume3D v1 = oracle::random_volume(rng, 20);
  Volume3D v2 = v1;
  for (float& x : v2.data) x = std::uniform_real_distribution<float>(0.0f, 2.0f)(rng);
  const ProjectionGeometry g = small_geometry(8, 10.0);
  const double a = 1.5, b = 0.25;
  Volume3D mix = v1;
  for (std::size_t i = 0; i < mix.data.size(); ++i)
    mix.data[i] = static_cast<float>(a * v1.data[i] + b * v2.data[i]);
  const Image2D p1 = forward_project(v1, g, 12.0), p2 = forward_project(v2, g, 12.0);
  const Image2D pm = forward_project(mix, g, 12.0);
  for (std::size_t i = 0; i < pm.size(); ++i) {
    const double expect = a * p1[i] + b * p2[i];
    CHECK(std::abs(pm[i] - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
  }

  Volume3D twice = v1;
  for (float& x : twice.data) x *= 2.0f;
  const Image2D pt = forward_project(twice, g, 12.0);
  for (std::size_t i = 0; i < pt.size(); ++i) CHECK(pt[i] == 2.0f * p1[i]);
}

TEST_CASE("volume invariants are enforced") {
  CHECK_THROWS_AS(Volume3D(0, 1, 1, 1.0, {0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Volume3D(1, 1, 1, 0.0, {0, 0, 0}), std::invalid_argument);
  Volume3D v = Volume3D::centered(2, 1.0);
  v.data[3] = NAN;
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  v.data.pop_back();
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
}

TEST_CASE("volume and image files round-trip") {
  Rng rng(3);
  const Volume3D v = oracle::random_volume(rng, 6);
  const auto vp = scratch("vol.raw");
  write_volume(vp, v);
  CHECK(read_volume(vp) == v);

  Image2D img = normal_image(5, 7, rng);
  const auto ip = scratch("img.raw");
  write_image(ip, img, 3.5);
  ImageSidecar meta;
  CHECK(read_image(ip, &meta) == img);
  CHECK(meta.rows == 5);
  CHECK(meta.cols == 7);
  REQUIRE(meta.normalization);
  CHECK(*meta.normalization == 3.5);
  CHECK(std::filesystem::file_size(ip) == 5 * 7 * 4);
}

TEST_CASE("phantom rasterization") {
  SUBCASE("tissue-only spec leaves the metal volume empty") {
    PhantomSpec spec;
    spec.grid = {16, 2.0};
    spec.parts.push_back({PrimitiveKind::Ellipsoid, {0, 0, 0}, {8, 6, 5}, {10, 0, 30}, 0.3, Material::Tissue, 0, 0});
    const auto vols = build_phantom(spec);
    for (float x : vols.metal.data) CHECK(x == 0.0f);
    double sum = 0;
    for (float x : vols.tissue.data) sum += x;
    CHECK(sum > 0.0);
  }
  SUBCASE("cylinder voxel count matches its analytic volume") {
    PhantomSpec spec;
    spec.grid = {40, 1.0};
    spec.parts.push_back({PrimitiveKind::Cylinder, {0.3, -0.2, 0}, {5, 5, 10}, {0, 0, 0}, 1.0, Material::Metal, 0, 0});
    const auto vols = build_phantom(spec);
    double count = 0;
    for (float x : vols.metal.data) count += x > 0.0f ? 1.0 : 0.0;
    const double analytic = std::numbers::pi * 25.0 * 20.0;
    CHECK(std::abs(count - analytic) / analytic < 0.02);
  }
  SUBCASE("supersampled occupancy approaches the analytic volume") {
    PhantomSpec spec;
    spec.grid = {24, 1.0};
    spec.supersample = 4;
    spec.parts.push_back({PrimitiveKind::Ellipsoid, {0, 0, 0}, {7, 5, 4}, {20, 10, 5}, 1.0, Material::Tissue, 0, 0});
    const auto vols = build_phantom(spec);
    double occ = 0;
    for (float x : vols.tissue.data) occ += x;
    const double analytic = 4.0 / 3.0 * std::numbers::pi * 7 * 5 * 4;
    CHECK(std::abs(occ - analytic) / analytic < 0.01);
  }
  SUBCASE("plate holes remove material") {
    PhantomSpec spec;
    spec.grid = {40, 1.0};
    spec.supersample = 2;
    Primitive plate{PrimitiveKind::PlateWithHoles, {0, 0, 0}, {15, 5, 2}, {0, 0, 0}, 1.0, Material::Metal, 0, 2.0};
    spec.parts.push_back(plate);
    double solid = 0;
    for (float x : build_phantom(spec).metal.data) solid += x;
    spec.parts[0].holes = 3;
    double holed = 0;
    for (float x : build_phantom(spec).metal.data) holed += x;
    const double removed = 3 * std::numbers::pi * 4.0 * 4.0;
    CHECK(solid - holed == doctest::Approx(removed).epsilon(0.1));
  }
  SUBCASE("parts outside the volume are rejected") {
    PhantomSpec spec;
    spec.grid = {16, 1.0};
    spec.parts.push_back({PrimitiveKind::Ellipsoid, {100, 0, 0}, {2, 2, 2}, {0, 0, 0}, 1.0, Material::Tissue, 0, 0});
    CHECK_THROWS_AS(build_phantom(spec), std::invalid_argument);
  }
  SUBCASE("negative attenuation is rejected") {
    PhantomSpec spec;
    spec.grid = {16, 1.0};
    spec.parts.push_back({PrimitiveKind::Ellipsoid, {0, 0, 0}, {2, 2, 2}, {0, 0, 0}, -1.0, Material::Tissue, 0, 0});
    CHECK_THROWS_AS(build_phantom(spec), std::invalid_argument);
  }
}

TEST_CASE("procedural knee phantoms are deterministic per seed") {
  KneePhantomOptions opts;
  opts.grid = {32, 5.0};
  const auto a = build_phantom(random_knee_phantom(42, opts));
  const auto b = build_phantom(random_knee_phantom(42, opts));
  CHECK(a.tissue == b.tissue);
  CHECK(a.metal == b.metal);
  const auto c = build_phantom(random_knee_phantom(43, opts));
  CHECK_FALSE(a.tissue == c.tissue);

  const PhantomSpec spec = random_knee_phantom(42, opts);
  int metal_parts = 0;
  for (const auto& p : spec.parts) metal_parts += p.material == Material::Metal;
  CHECK(metal_parts >= opts.implants_min);
  CHECK(metal_parts <= opts.implants_max);
  double metal_sum = 0;
  for (float x : a.metal.data) metal_sum += x;
  CHECK(metal_sum > 0.0);
}

TEST_CASE("metal masks") {
  const ProjectionGeometry g = small_geometry(48, 1.16);
  SUBCASE("no metal gives an all-background mask") {
    const Image2D m = render_mask(Volume3D::centered(16, 1.0), g, 0.0, 1e-3);
    for (float x : m.values()) CHECK(x == 1.0f);
  }
  SUBCASE("non-positive thresholds are rejected") {
    CHECK_THROWS_AS(render_mask(Volume3D::centered(4, 1.0), g, 0.0, 0.0), std::invalid_argument);
  }
  SUBCASE("a centered block casts a magnified, centered shadow") {
    // 2 mm thick (along the beam) by 16 x 16 mm.
    Volume3D v(2, 16, 16, 1.0, {-1.0, -8.0, -8.0});
    for (float& x : v.data) x = 1.0f;
    const Image2D m = render_mask(v, g, 0.0, 1e-3);
    CHECK(m.is_binary());
    double zeros = 0, cr = 0, cc = 0;
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c)
        if (m(r, c) == 0.0f) {
          zeros += 1;
          cr += r;
          cc += c;
        }
    REQUIRE(zeros > 0);
    CHECK(cr / zeros == doctest::Approx(0.5 * (g.rows - 1)).epsilon(0.01));
    CHECK(cc / zeros == doctest::Approx(0.5 * (g.cols - 1)).epsilon(0.01));
    // Shadow side: 16 mm magnified by sdd / (sid - 1) at the near face.
    const double side_px = 16.0 * g.sdd / (g.sid - 1.0) / g.pixel_mm;
    CHECK(zeros == doctest::Approx(side_px * side_px).epsilon(0.08));
    const double plain = 16.0 * g.magnification() / g.pixel_mm;
    CHECK(std::sqrt(zeros) > plain - 1.0);
  }
  SUBCASE("mask and complement partition the detector") {
    KneePhantomOptions opts;
    opts.grid = {32, 5.0};
    const auto vols = build_phantom(random_knee_phantom(5, opts));
    const Image2D m = render_mask(vols.metal, desk_geometry(), 48.0, 1e-3);
    for (float x : m.values()) {
      const float comp = 1.0f - x;
      CHECK(x + comp == 1.0f);
      CHECK(x * comp == 0.0f);
    }
  }
}

TEST_CASE("synthetic masks") {
  SUBCASE("circle area") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const Image2D m = synthetic_mask(MaskFamily::Circle, 20, seed, 64, 64);
      CHECK(m.is_binary());
      double zeros = 0;
      for (float x : m.values()) zeros += x == 0.0f;
      CHECK(std::abs(zeros - std::numbers::pi * 100.0) / (std::numbers::pi * 100.0) <= 0.05);
    }
  }
  SUBCASE("horizontal band spans the full width") {
    const Image2D m = synthetic_mask(MaskFamily::HRect, 20, 9, 64, 48);
    int rows_hit = 0;
    for (int r = 0; r < m.rows(); ++r) {
      int zeros = 0;
      for (int c = 0; c < m.cols(); ++c) zeros += m(r, c) == 0.0f;
      CHECK((zeros == 0 || zeros == m.cols()));
      rows_hit += zeros == m.cols();
    }
    CHECK(rows_hit == 20);
  }
  SUBCASE("vertical band spans the full height") {
    const Image2D m = synthetic_mask(MaskFamily::VRect, 33, 9, 48, 64);
    int cols_hit = 0;
    for (int c = 0; c < m.cols(); ++c) {
      int zeros = 0;
      for (int r = 0; r < m.rows(); ++r) zeros += m(r, c) == 0.0f;
      CHECK((zeros == 0 || zeros == m.rows()));
      cols_hit += zeros == m.rows();
    }
    CHECK(cols_hit == 33);
  }
  SUBCASE("seeded placement") {
    CHECK(synthetic_mask(MaskFamily::Circle, 30, 5, 64, 64) == synthetic_mask(MaskFamily::Circle, 30, 5, 64, 64));
    CHECK_FALSE(synthetic_mask(MaskFamily::Circle, 30, 5, 64, 64) ==
                synthetic_mask(MaskFamily::Circle, 30, 6, 64, 64));
  }
  SUBCASE("size limits") {
    CHECK_THROWS_AS(synthetic_mask(MaskFamily::Circle, 19, 1, 64, 64), std::invalid_argument);
    CHECK_THROWS_AS(synthetic_mask(MaskFamily::Circle, 61, 1, 128, 128), std::invalid_argument);
    CHECK_THROWS_AS(synthetic_mask(MaskFamily::HRect, 51, 1, 128, 128), std::invalid_argument);
    CHECK_THROWS_AS(synthetic_mask(MaskFamily::VRect, 19, 1, 128, 128), std::invalid_argument);
    CHECK_THROWS_AS(synthetic_mask(MaskFamily::Circle, 40, 1, 32, 32), std::invalid_argument);
    CHECK_THROWS_AS(synthetic_mask(MaskFamily::Metal, 20, 1, 64, 64), std::invalid_argument);
    CHECK_NOTHROW(synthetic_mask(MaskFamily::Circle, 60, 1, 64, 64));
    CHECK_NOTHROW(synthetic_mask(MaskFamily::HRect, 50, 1, 64, 64));
  }
  SUBCASE("family names") {
    for (auto f : {MaskFamily::Metal, MaskFamily::Circle, MaskFamily::HRect, MaskFamily::VRect})
      CHECK(parse_mask_family(to_string(f)) == f);
    CHECK_FALSE(parse_mask_family("square"));
  }
}

TEST_CASE("PGM export marks metal black and background white") {
  Image2D m(2, 3, 1.0f);
  m(1, 2) = 0.0f;
  const auto p = scratch("mask.pgm");
  write_pgm(p, m);
  const Image2D back = read_pgm(p);
  CHECK(back == m);
}
