#include "csi/score.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace csi {

std::vector<Image2D> ScoreModel::evaluate_batch(std::span<const Image2D> xs,
                                                std::span<const double> ts) const {
  if (xs.size() != ts.size()) throw std::invalid_argument("evaluate_batch: size mismatch");
  std::vector<Image2D> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(evaluate(xs[i], ts[i]));
  return out;
}

Image2D analytic_score(const GaussianDataSpec& spec, const VeSchedule& sched, const Image2D& x, double t) {
  require_same_shape(x, spec.mean, "analytic_score");
  const double var = spec.tau * spec.tau + sched.marginal_variance(t);
  Image2D s(x.rows(), x.cols());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<float>(-(static_cast<double>(x[i]) - spec.mean[i]) / var);
  return s;
}

double gaussian_log_density(const GaussianDataSpec& spec, const VeSchedule& sched, const Image2D& x,
                            double t) {
  require_same_shape(x, spec.mean, "gaussian_log_density");
  const double var = spec.tau * spec.tau + sched.marginal_variance(t);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - spec.mean[i];
    acc += -0.5 * d * d / var - 0.5 * std::log(2.0 * std::numbers::pi * var);
  }
  return acc;
}

AnalyticGaussianScore::AnalyticGaussianScore(GaussianDataSpec spec, VeSchedule sched)
    : spec_(std::move(spec)), sched_(sched) {
  if (!(spec_.tau > 0.0)) throw std::invalid_argument("GaussianDataSpec: tau must be > 0");
  sched_.validate();
}

Image2D AnalyticGaussianScore::evaluate(const Image2D& x, double t) const {
  return analytic_score(spec_, sched_, x, t);
}

TimeEmbedding::TimeEmbedding(int n_features, double scale, std::uint64_t seed) : scale_(scale) {
  if (n_features < 1) throw std::invalid_argument("TimeEmbedding: n_features must be >= 1");
  Rng rng(derive_seed(seed, "time-embedding"));
  std::normal_distribution<double> nd(0.0, scale);
  freqs_.resize(n_features);
  for (double& f : freqs_) f = nd(rng);
}

std::vector<double> TimeEmbedding::features(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("time_features: t must lie in [0, 1]");
  const int n = n_features();
  std::vector<double> out(2 * n);
  for (int k = 0; k < n; ++k) {
    const double phase = 2.0 * std::numbers::pi * freqs_[k] * t;
    out[k] = std::sin(phase);
    out[n + k] = std::cos(phase);
  }
  return out;
}

std::vector<double> time_features(const TimeEmbedding& emb, double t) { return emb.features(t); }

DsmDraw draw_dsm_sample(int rows, int cols, Rng& rng) {
  DsmDraw d;
  // generate_canonical is in [0, 1), so 1 - u is in (0, 1].
  d.t = 1.0 - std::generate_canonical<double, 53>(rng);
  d.noise = normal_image(rows, cols, rng);
  return d;
}

double dsm_loss(const ScoreModel& model, const VeSchedule& sched, std::span<const Image2D> batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("dsm_loss: empty batch");
  double total = 0.0;
  for (const Image2D& x0 : batch) {
    const DsmDraw d = draw_dsm_sample(x0.rows(), x0.cols(), rng);
    const double var = sched.marginal_variance(d.t);
    const double std_t = std::sqrt(var);
    const Image2D xt = perturb(sched, x0, d.t, d.noise);
    const Image2D s = model.evaluate(xt, d.t);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double r = static_cast<double>(s[i]) + d.noise[i] / std_t;
      acc += r * r;
    }
    total += var * acc;
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace csi
