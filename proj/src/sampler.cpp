#include "csi/sampler.hpp"

#include <cmath>
#include <string>

namespace csi {

void SamplerConfig::validate() const {
  if (n_steps < 1) throw std::invalid_argument("SamplerConfig: n_steps must be >= 1");
  if (!(snr > 0.0)) throw std::invalid_argument("SamplerConfig: snr must be > 0");
  if (corrector_iters < 0) throw std::invalid_argument("SamplerConfig: corrector_iters must be >= 0");
  if (resample_repeats < 1) throw std::invalid_argument("SamplerConfig: resample_repeats must be >= 1");
}

SamplingError::SamplingError(int step, const std::string& what)
    : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}

DiffusionState ancestral_update(const VeSchedule& sched, const DiffusionState& state, const Image2D& score,
                                const Image2D& noise) {
  if (state.step_index < 1) throw std::invalid_argument("predictor: already at t = 0");
  require_same_shape(state.x, score, "ancestral_update");
  require_same_shape(state.x, noise, "ancestral_update");
  const double hi = sched.sigma_at(state.step_index);
  const double lo = sched.sigma_at(state.step_index - 1);
  const double dvar = hi * hi - lo * lo;
  const auto drift = static_cast<float>(dvar);
  const auto diff = static_cast<float>(std::sqrt(lo * lo * dvar / (hi * hi)));
  DiffusionState next{state.x, sched.time_at(state.step_index - 1), state.step_index - 1};
  for (std::size_t i = 0; i < next.x.size(); ++i) next.x[i] += drift * score[i] + diff * noise[i];
  return next;
}

DiffusionState predictor_step(const VeSchedule& sched, const ScoreModel& model, const DiffusionState& state,
                              Rng& rng) {
  if (state.step_index < 1) throw std::invalid_argument("predictor: already at t = 0");
  const Image2D s = model.evaluate(state.x, state.t);
  const Image2D z = normal_image(state.x.rows(), state.x.cols(), rng);
  return ancestral_update(sched, state, s, z);
}

double langevin_step_size(double noise_norm, double score_norm, double snr) {
  const double r = snr * noise_norm / score_norm;
  return 2.0 * r * r;
}

namespace {

void apply_langevin(Image2D& x, const Image2D& score, const Image2D& noise, double eps) {
  const auto a = static_cast<float>(eps);
  const auto b = static_cast<float>(std::sqrt(2.0 * eps));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += a * score[i] + b * noise[i];
}

}  // namespace

CorrectorResult langevin_update(const DiffusionState& state, const Image2D& score, const Image2D& noise,
                                double snr) {
  require_same_shape(state.x, score, "langevin_update");
  require_same_shape(state.x, noise, "langevin_update");
  if (!(snr > 0.0)) throw std::invalid_argument("corrector: snr must be > 0");
  CorrectorResult out{state, 0.0, false};
  const double sn = score.l2_norm();
  if (sn == 0.0) {
    out.skipped = true;
    return out;
  }
  out.step_size = langevin_step_size(noise.l2_norm(), sn, snr);
  apply_langevin(out.state.x, score, noise, out.step_size);
  return out;
}

CorrectorResult corrector_step(const ScoreModel& model, const DiffusionState& state, double snr, Rng& rng) {
  const Image2D s = model.evaluate(state.x, state.t);
  const Image2D z = normal_image(state.x.rows(), state.x.cols(), rng);
  return langevin_update(state, s, z, snr);
}

Image2D pc_sample(const VeSchedule& sched, const ScoreModel& model, const SamplerConfig& cfg, int rows, int cols,
                  const SnapshotFn& snapshot, int snapshot_every) {
  return pc_sample_batch(sched, model, cfg, rows, cols, 1, snapshot, snapshot_every).front();
}

std::vector<Image2D> pc_sample_batch(const VeSchedule& sched_in, const ScoreModel& model, const SamplerConfig& cfg,
                                     int rows, int cols, int count, const SnapshotFn& snapshot,
                                     int snapshot_every) {
  cfg.validate();
  if (count < 1) throw std::invalid_argument("pc_sample_batch: count must be >= 1");
  const VeSchedule sched = sched_in.with_steps(cfg.n_steps);
  const int n = cfg.n_steps;

  std::vector<Rng> rngs;
  std::vector<Image2D> xs;
  rngs.reserve(count);
  xs.reserve(count);
  for (int k = 0; k < count; ++k) {
    rngs.emplace_back(derive_seed(cfg.seed, "sample", static_cast<std::uint64_t>(k)));
    xs.push_back(normal_image(rows, cols, rngs.back()) * static_cast<float>(sched.sigma_max));
  }

  auto check = [&](int step) {
    for (const auto& x : xs)
      if (!x.all_finite()) throw SamplingError(step, "non-finite sampler state");
  };

  for (int i = n; i >= 1; --i) {
    const double t = sched.time_at(i);
    const std::vector<double> ts(count, t);

    for (int it = 0; it < cfg.corrector_iters; ++it) {
      const auto scores = model.evaluate_batch(xs, ts);
      std::vector<Image2D> noise;
      noise.reserve(count);
      double z_norm = 0.0, s_norm = 0.0;
      for (int k = 0; k < count; ++k) {
        noise.push_back(normal_image(rows, cols, rngs[k]));
        z_norm += noise.back().l2_norm();
        s_norm += scores[k].l2_norm();
      }
      if (s_norm == 0.0) continue;
      const double eps = langevin_step_size(z_norm / count, s_norm / count, cfg.snr);
      for (int k = 0; k < count; ++k) apply_langevin(xs[k], scores[k], noise[k], eps);
    }

    const auto scores = model.evaluate_batch(xs, ts);
    for (int k = 0; k < count; ++k) {
      const Image2D z = normal_image(rows, cols, rngs[k]);
      xs[k] = ancestral_update(sched, DiffusionState{std::move(xs[k]), t, i}, scores[k], z).x;
    }
    check(i);
    if (snapshot && snapshot_every > 0 && (i - 1) % snapshot_every == 0) snapshot(i - 1, xs.front());
  }
  return xs;
}

}  // namespace csi
