#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csi/image.hpp"
#include "csi/rng.hpp"
#include "csi/sde.hpp"

namespace csi {

enum class ScoreKind { Analytic, Learned };

/// Approximates grad_x log p_t(x) for the VE-perturbed data distribution.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual ScoreKind kind() const = 0;
  virtual Image2D evaluate(const Image2D& x, double t) const = 0;
  /// Batched evaluation at per-image times; the default loops over evaluate().
  virtual std::vector<Image2D> evaluate_batch(std::span<const Image2D> xs,
                                              std::span<const double> ts) const;
};

/// Independent-pixel Gaussian data N(mean, tau^2 I).
struct GaussianDataSpec {
  Image2D mean;
  double tau = 1.0;
};

/// -(x - mean) / (tau^2 + sigma^2(t) - sigma^2(0)).
Image2D analytic_score(const GaussianDataSpec& spec, const VeSchedule& sched, const Image2D& x, double t);

/// Log density of the VE-perturbed Gaussian at time t (for oracles).
double gaussian_log_density(const GaussianDataSpec& spec, const VeSchedule& sched, const Image2D& x,
                            double t);

class AnalyticGaussianScore final : public ScoreModel {
 public:
  AnalyticGaussianScore(GaussianDataSpec spec, VeSchedule sched);
  ScoreKind kind() const override { return ScoreKind::Analytic; }
  Image2D evaluate(const Image2D& x, double t) const override;
  const GaussianDataSpec& spec() const { return spec_; }

 private:
  GaussianDataSpec spec_;
  VeSchedule sched_;
};

/// Gaussian random Fourier features of the diffusion time. Frequencies are
/// drawn once from N(0, scale^2) and frozen.
class TimeEmbedding {
 public:
  TimeEmbedding() = default;
  TimeEmbedding(int n_features, double scale, std::uint64_t seed);

  int n_features() const { return static_cast<int>(freqs_.size()); }
  /// Output width: a sin and a cos per frequency.
  int dim() const { return 2 * n_features(); }
  double scale() const { return scale_; }
  std::span<const double> frequencies() const { return freqs_; }

  /// [sin(2 pi f_k t)..., cos(2 pi f_k t)...]
  std::vector<double> features(double t) const;

 private:
  std::vector<double> freqs_;
  double scale_ = 0.0;
};

std::vector<double> time_features(const TimeEmbedding& emb, double t);

/// Random draw for one denoising score-matching term: t ~ U(0, 1] (never 0)
/// and standard normal noise.
struct DsmDraw {
  double t = 1.0;
  Image2D noise;
};
DsmDraw draw_dsm_sample(int rows, int cols, Rng& rng);

/// Mean over the batch of
/// lambda(t) * || s(x_t, t) + z / sqrt(sigma^2(t) - sigma^2(0)) ||^2 with
/// lambda(t) = sigma^2(t) - sigma^2(0) and x_t = perturb(x0, t, z).
double dsm_loss(const ScoreModel& model, const VeSchedule& sched, std::span<const Image2D> batch, Rng& rng);

}  // namespace csi
