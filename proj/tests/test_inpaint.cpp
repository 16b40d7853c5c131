#include <doctest.h>

#include <cmath>
#include <vector>

#include "csi/inpaint.hpp"
#include "csi/masks.hpp"
#include "csi/score.hpp"
#include "oracles.hpp"

using namespace csi;

namespace {

Image2D checkerboard(int rows, int cols) {
  Image2D m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>((r + c) % 2);
  return m;
}

Image2D disk_mask(int rows, int cols, double cy, double cx, double radius) {
  Image2D m(rows, cols, 1.0f);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= radius * radius) m(r, c) = 0.0f;
  return m;
}

InpaintProblem make_problem(Image2D y, Image2D m, int n_steps, std::uint64_t seed) {
  InpaintProblem p;
  p.y = std::move(y);
  p.m = std::move(m);
  p.cfg.n_steps = n_steps;
  p.cfg.seed = seed;
  return p;
}

}  // namespace

TEST_CASE("compose selects per pixel") {
  Rng rng(1);
  const Image2D a = normal_image(6, 7, rng), b = normal_image(6, 7, rng);
  CHECK(compose(a, b, Image2D(6, 7, 1.0f)) == a);
  CHECK(compose(a, b, Image2D(6, 7, 0.0f)) == b);
  const Image2D m = checkerboard(6, 7);
  const Image2D x = compose(a, b, m);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 7; ++c) CHECK(x(r, c) == ((r + c) % 2 == 1 ? a(r, c) : b(r, c)));
  CHECK(compose(a, x, m) == x);
  Image2D soft = m;
  soft[0] = 0.5f;
  CHECK_THROWS_AS(compose(a, b, soft), std::invalid_argument);
  CHECK_THROWS_AS(compose(a, Image2D(6, 6), m), std::invalid_argument);
}

TEST_CASE("known branch is the forward kernel on the measurement") {
  const VeSchedule s;
  Rng rng(2);
  InpaintProblem p = make_problem(normal_image(8, 8, rng), Image2D(8, 8, 1.0f), 10, 0);
  const Image2D z = normal_image(8, 8, rng);
  CHECK(known_branch(p, 0.0, z) == p.y);
  // Linear in y for fixed noise: kb(2y) - kb(y) = y.
  const Image2D k1 = known_branch(p, 0.6, z);
  InpaintProblem p2 = p;
  p2.y = p.y * 2.0f;
  const Image2D k2 = known_branch(p2, 0.6, z);
  for (std::size_t i = 0; i < p.y.size(); ++i) CHECK(k2[i] - k1[i] == doctest::Approx(p.y[i]).epsilon(1e-4));

  std::vector<double> dev;
  for (int k = 0; k < 100; ++k) {
    const Image2D x = known_branch(p, 0.5, normal_image(8, 8, rng));
    for (std::size_t i = 0; i < x.size(); ++i) dev.push_back(x[i] - p.y[i]);
  }
  CHECK(oracle::moments(dev).var == doctest::Approx(s.marginal_variance(0.5)).epsilon(0.05));
}

TEST_CASE("problem validation") {
  InpaintProblem p = make_problem(Image2D(4, 4), Image2D(4, 4, 1.0f), 10, 0);
  CHECK_NOTHROW(p.validate());
  p.m[0] = 0.3f;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.m = Image2D(4, 5, 1.0f);
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.m = Image2D(4, 4, 1.0f);
  p.y[2] = NAN;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("known pixels are reproduced bit-exactly for every mask family") {
  const VeSchedule s;
  Rng rng(3);
  Image2D y(64, 64);
  for (float& v : y.values()) v = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
  const AnalyticGaussianScore model(GaussianDataSpec{Image2D(64, 64, 0.5f), 0.25}, s);

  Image2D metal(64, 64, 1.0f);
  for (int r = 20; r < 30; ++r)
    for (int c = 5; c < 60; ++c) metal(r, c) = 0.0f;
  std::vector<Image2D> masks{metal, synthetic_mask(MaskFamily::Circle, 30, 1, 64, 64),
                             synthetic_mask(MaskFamily::HRect, 25, 2, 64, 64),
                             synthetic_mask(MaskFamily::VRect, 40, 3, 64, 64)};
  std::vector<InpaintProblem> problems;
  for (const auto& m : masks) problems.push_back(make_problem(y, m, 20, 7));
  const auto batch = inpaint_batch(problems, model);
  for (std::size_t k = 0; k < masks.size(); ++k) {
    const Image2D single = inpaint(problems[k], model);
    for (const Image2D* out : {&single, &batch[k]}) {
      CHECK(out->all_finite());
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (masks[k][i] == 1.0f) CHECK(out->operator[](i) == y[i]);
        else CHECK((out->operator[](i) >= 0.0f && out->operator[](i) <= 1.0f));
      }
    }
  }
  CHECK(inpaint(problems[1], model) == inpaint(problems[1], model));
}

TEST_CASE("an all-known mask returns the measurement") {
  const VeSchedule s;
  Rng rng(4);
  const Image2D y = normal_image(8, 8, rng) * 3.0f;  // out of [0, 1] on purpose
  const AnalyticGaussianScore model(GaussianDataSpec{Image2D(8, 8), 1.0}, s);
  CHECK(inpaint(make_problem(y, Image2D(8, 8, 1.0f), 15, 1), model) == y);
}

TEST_CASE("masked region follows the prior mean under an independent-pixel oracle") {
  const VeSchedule s;
  const float mu = 0.5f;
  const AnalyticGaussianScore model(GaussianDataSpec{Image2D(8, 8, mu), 0.1}, s);
  Image2D m(8, 8, 1.0f);
  for (int r = 0; r < 8; ++r)
    for (int c = 4; c < 8; ++c) m(r, c) = 0.0f;
  const Image2D y(8, 8, 0.9f);
  std::vector<InpaintProblem> problems;
  for (int k = 0; k < 200; ++k) problems.push_back(make_problem(y, m, 200, 1000 + k));
  const auto outs = inpaint_batch(problems, model);
  double acc = 0;
  int n = 0;
  for (const auto& x : outs)
    for (std::size_t i = 0; i < x.size(); ++i)
      if (m[i] == 0.0f) {
        acc += x[i];
        ++n;
      }
  const double mean = acc / n;
  MESSAGE("masked mean " << mean);
  CHECK(std::abs(mean - mu) / mu < 0.05);
}

TEST_CASE("resampling repeats keep fidelity and change the chain") {
  const VeSchedule s;
  Rng rng(6);
  Image2D y(16, 16);
  for (float& v : y.values()) v = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
  const Image2D m = disk_mask(16, 16, 8, 8, 4);
  const AnalyticGaussianScore model(GaussianDataSpec{Image2D(16, 16, 0.5f), 0.2}, s);
  InpaintProblem p = make_problem(y, m, 10, 3);
  const Image2D once = inpaint(p, model);
  p.cfg.resample_repeats = 3;
  const Image2D thrice = inpaint(p, model);
  CHECK_FALSE(once == thrice);
  for (std::size_t i = 0; i < y.size(); ++i)
    if (m[i] == 1.0f) CHECK(thrice[i] == y[i]);
}

TEST_CASE("batched problems must share the step structure") {
  const VeSchedule s;
  const AnalyticGaussianScore model(GaussianDataSpec{Image2D(8, 8), 1.0}, s);
  std::vector<InpaintProblem> ps{make_problem(Image2D(8, 8), Image2D(8, 8, 1.0f), 10, 0),
                                 make_problem(Image2D(8, 8), Image2D(8, 8, 1.0f), 11, 0)};
  CHECK_THROWS_AS(inpaint_batch(ps, model), std::invalid_argument);
  CHECK(inpaint_batch(std::span<const InpaintProblem>{}, model).empty());
}

TEST_CASE("snapshots during inpainting") {
  const VeSchedule s;
  const AnalyticGaussianScore model(GaussianDataSpec{Image2D(8, 8), 1.0}, s);
  std::vector<int> seen;
  inpaint(make_problem(Image2D(8, 8), disk_mask(8, 8, 4, 4, 2), 9, 0), model,
          [&](int i, const Image2D&) { seen.push_back(i); }, 3);
  CHECK(seen == std::vector<int>{6, 3, 0});
}

TEST_CASE("harmonic interpolation baseline") {
  SUBCASE("linear ramp under a centered disk is recovered") {
    Image2D y(64, 64);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) y(r, c) = static_cast<float>(0.1 + 0.8 * c / 63.0);
    const Image2D m = disk_mask(64, 64, 31.5, 31.5, 15);
    Image2D masked = y;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (m[i] == 0.0f) masked[i] = 0.0f;
    const Image2D out = interpolate_baseline(masked, m);
    double worst = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      worst = std::max(worst, std::abs(double(out[i]) - y[i]));
      if (m[i] == 1.0f) CHECK(out[i] == masked[i]);
    }
    CHECK(worst < 1e-3);
  }
  SUBCASE("constant stays constant for any mask") {
    const Image2D y(32, 32, 0.37f);
    for (const auto& m : {synthetic_mask(MaskFamily::HRect, 20, 4, 32, 32),
                          synthetic_mask(MaskFamily::Circle, 25, 4, 32, 32), checkerboard(32, 32)}) {
      const Image2D out = interpolate_baseline(y, m);
      for (float v : out.values()) CHECK(v == doctest::Approx(0.37f).epsilon(1e-5));
    }
  }
  SUBCASE("full-height band reaches both borders") {
    // With reflecting borders the fill of a vertical band is a straight line
    // between the two known columns.
    Image2D y(16, 16);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) y(r, c) = c < 5 ? 0.2f : 0.8f;
    Image2D m(16, 16, 1.0f);
    for (int r = 0; r < 16; ++r)
      for (int c = 5; c < 11; ++c) m(r, c) = 0.0f;
    const Image2D out = interpolate_baseline(y, m);
    // Column 4 holds 0.2, column 11 holds 0.8; six unknown columns between.
    for (int c = 5; c < 11; ++c) CHECK(out(7, c) == doctest::Approx(0.2 + 0.6 * (c - 4) / 7.0).epsilon(1e-5));
  }
  SUBCASE("rejections and trivial masks") {
    CHECK_THROWS_AS(interpolate_baseline(Image2D(4, 4), Image2D(4, 4, 0.0f)), std::invalid_argument);
    Image2D half(4, 4, 1.0f);
    half[0] = 0.5f;
    CHECK_THROWS_AS(interpolate_baseline(Image2D(4, 4), half), std::invalid_argument);
    Rng rng(1);
    const Image2D y = normal_image(4, 4, rng);
    CHECK(interpolate_baseline(y, Image2D(4, 4, 1.0f)) == y);
  }
}
