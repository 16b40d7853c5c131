#include "csi/inpaint.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "csi/rng.hpp"

namespace csi {

void InpaintProblem::validate() const {
  if (y.empty()) throw std::invalid_argument("inpaint: empty measurement");
  require_same_shape(y, m, "inpaint: measurement and mask");
  if (!m.is_binary()) throw std::invalid_argument("inpaint: mask must be binary");
  if (!y.all_finite()) throw std::invalid_argument("inpaint: measurement has non-finite values");
  sched.validate();
  cfg.validate();
}

Image2D known_branch(const InpaintProblem& problem, double t, const Image2D& noise) {
  return perturb(problem.sched, problem.y, t, noise);
}

Image2D compose(const Image2D& x1, const Image2D& x2, const Image2D& m) {
  require_same_shape(x1, x2, "compose");
  require_same_shape(x1, m, "compose");
  if (!m.is_binary()) throw std::invalid_argument("compose: mask must be binary");
  Image2D out(x1.rows(), x1.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] != 0.0f ? x1[i] : x2[i];
  return out;
}

namespace {

struct Chain {
  const InpaintProblem* problem;
  VeSchedule sched;
  Rng rng;
  Image2D x;
};

void langevin_in_place(Image2D& x, const Image2D& s, const Image2D& z, double snr) {
  const double sn = s.l2_norm();
  if (sn == 0.0) return;
  const double eps = langevin_step_size(z.l2_norm(), sn, snr);
  const auto a = static_cast<float>(eps);
  const auto b = static_cast<float>(std::sqrt(2.0 * eps));
  for (std::size_t p = 0; p < x.size(); ++p) x[p] += a * s[p] + b * z[p];
}

std::vector<Image2D> run_chains(std::span<const InpaintProblem> problems, const ScoreModel& model,
                                const SnapshotFn& snapshot, int snapshot_every) {
  if (problems.empty()) return {};
  const SamplerConfig& c0 = problems.front().cfg;
  for (const auto& p : problems) {
    p.validate();
    if (p.cfg.n_steps != c0.n_steps || p.cfg.corrector_iters != c0.corrector_iters ||
        p.cfg.resample_repeats != c0.resample_repeats)
      throw std::invalid_argument("inpaint_batch: problems must share the step structure");
    if (!p.y.same_shape(problems.front().y)) throw std::invalid_argument("inpaint_batch: problems must share a shape");
  }
  const int n = c0.n_steps;
  const int rows = problems.front().y.rows(), cols = problems.front().y.cols();

  std::vector<Chain> chains;
  chains.reserve(problems.size());
  for (const auto& p : problems) {
    Chain ch{&p, p.sched.with_steps(n), Rng(derive_seed(p.cfg.seed, "inpaint")), {}};
    ch.x = normal_image(rows, cols, ch.rng) * static_cast<float>(ch.sched.sigma_max);
    if (p.compose_initial) ch.x = compose(known_branch(p, 1.0, normal_image(rows, cols, ch.rng)), ch.x, p.m);
    chains.push_back(std::move(ch));
  }

  std::vector<Image2D> xs(chains.size());
  auto gather = [&] {
    for (std::size_t k = 0; k < chains.size(); ++k) xs[k] = chains[k].x;
  };

  for (int i = n; i >= 1; --i) {
    const double t = chains.front().sched.time_at(i);
    const std::vector<double> ts(chains.size(), t);
    for (int rep = 0; rep < c0.resample_repeats; ++rep) {
      for (int it = 0; it < c0.corrector_iters; ++it) {
        gather();
        const auto scores = model.evaluate_batch(xs, ts);
        for (std::size_t k = 0; k < chains.size(); ++k) {
          const Image2D z = normal_image(rows, cols, chains[k].rng);
          langevin_in_place(chains[k].x, scores[k], z, chains[k].problem->cfg.snr);
        }
      }
      gather();
      const auto scores = model.evaluate_batch(xs, ts);
      for (std::size_t k = 0; k < chains.size(); ++k) {
        Chain& ch = chains[k];
        const Image2D z = normal_image(rows, cols, ch.rng);
        Image2D x2 = ancestral_update(ch.sched, DiffusionState{std::move(ch.x), t, i}, scores[k], z).x;
        const Image2D x1 = known_branch(*ch.problem, ch.sched.time_at(i - 1), normal_image(rows, cols, ch.rng));
        ch.x = compose(x1, x2, ch.problem->m);
        if (rep + 1 < c0.resample_repeats) {
          const double hi = ch.sched.sigma_at(i), lo = ch.sched.sigma_at(i - 1);
          const auto up = static_cast<float>(std::sqrt(hi * hi - lo * lo));
          const Image2D zr = normal_image(rows, cols, ch.rng);
          for (std::size_t p = 0; p < ch.x.size(); ++p) ch.x[p] += up * zr[p];
        }
      }
    }
    for (const auto& ch : chains)
      if (!ch.x.all_finite()) throw SamplingError(i, "non-finite inpainting state");
    if (snapshot && snapshot_every > 0 && (i - 1) % snapshot_every == 0) snapshot(i - 1, chains.front().x);
  }

  std::vector<Image2D> out;
  out.reserve(chains.size());
  for (auto& ch : chains) {
    const Image2D& m = ch.problem->m;
    for (std::size_t p = 0; p < ch.x.size(); ++p)
      if (m[p] == 0.0f) ch.x[p] = std::clamp(ch.x[p], 0.0f, 1.0f);
    out.push_back(std::move(ch.x));
  }
  return out;
}

}  // namespace

Image2D inpaint(const InpaintProblem& problem, const ScoreModel& model, const SnapshotFn& snapshot,
                int snapshot_every) {
  return std::move(run_chains(std::span<const InpaintProblem>(&problem, 1), model, snapshot, snapshot_every).front());
}

std::vector<Image2D> inpaint_batch(std::span<const InpaintProblem> problems, const ScoreModel& model) {
  return run_chains(problems, model, {}, 0);
}

Image2D interpolate_baseline(const Image2D& y, const Image2D& m) {
  require_same_shape(y, m, "interpolate_baseline");
  if (!m.is_binary()) throw std::invalid_argument("interpolate_baseline: mask must be binary");
  const int rows = y.rows(), cols = y.cols();
  std::vector<int> unknown(y.size(), -1);
  int n_unknown = 0;
  for (std::size_t p = 0; p < y.size(); ++p)
    if (m[p] == 0.0f) unknown[p] = n_unknown++;
  if (n_unknown == static_cast<int>(y.size()))
    throw std::invalid_argument("interpolate_baseline: mask has no known pixels");
  Image2D out = y;
  if (n_unknown == 0) return out;

  // 5-point Laplacian over masked pixels; neighbors outside the image are
  // dropped, which is the reflecting (Neumann) border condition.
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n_unknown) * 5);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_unknown);
  const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int row = unknown[static_cast<std::size_t>(r) * cols + c];
      if (row < 0) continue;
      int degree = 0;
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
        ++degree;
        const int col = unknown[static_cast<std::size_t>(rr) * cols + cc];
        if (col >= 0)
          trip.emplace_back(row, col, -1.0);
        else
          rhs[row] += y(rr, cc);
      }
      trip.emplace_back(row, row, static_cast<double>(degree));
    }
  Eigen::SparseMatrix<double> a(n_unknown, n_unknown);
  a.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
  if (solver.info() != Eigen::Success) throw std::runtime_error("interpolate_baseline: factorization failed");
  const Eigen::VectorXd u = solver.solve(rhs);
  for (std::size_t p = 0; p < y.size(); ++p)
    if (unknown[p] >= 0) out[p] = static_cast<float>(u[unknown[p]]);
  return out;
}

}  // namespace csi
