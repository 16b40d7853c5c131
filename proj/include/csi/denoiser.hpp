#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "csi/image.hpp"
#include "csi/nn.hpp"
#include "csi/score.hpp"
#include "csi/sde.hpp"

namespace csi {

struct ModelConfig {
  std::vector<int> channels{16, 32, 64};  // one entry per resolution level
  int time_features = 16;
  double time_scale = 16.0;
  int embed_dim = 64;
  /// Expected data scale used for input preconditioning.
  double sigma_data = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
using Mat = nn::Mat<T>;

/// Encoder-decoder score network F. With v = sigma^2(t) - sigma^2(0) and
/// s_d = sigma_data, the output is a noise estimate
///   o = c_out F(c_in x, t) - c_skip x,
///   c_in = 1 / sqrt(s_d^2 + v), c_out = s_d c_in, c_skip = sqrt(v) / (s_d^2 + v),
/// and score(x, t) = o / sqrt(v). With F = 0 this is the exact score of
/// N(0, s_d^2) data, so F only carries the correction at every noise level.
template <typename T>
class BasicDenoiser {
 public:
  struct Tape {
    std::vector<double> ts;
    Mat<T> gfp, emb_pre;
    nn::Act<T> x_in, head_in;
    std::vector<typename nn::ResBlock<T>::Cache> down, up;
    std::vector<nn::Act<T>> pool_in, up_in;
  };

  BasicDenoiser() = default;
  BasicDenoiser(const ModelConfig& cfg, const VeSchedule& sched);

  const ModelConfig& config() const { return cfg_; }
  const VeSchedule& schedule() const { return sched_; }
  const TimeEmbedding& time_embedding() const { return temb_; }

  /// Smallest spatial divisor the input must honor (pooling levels).
  int size_divisor() const { return 1 << (static_cast<int>(cfg_.channels.size()) - 1); }

  /// x: (1 x n*h*w) raw images, ts: per-image times. Returns the raw output o.
  nn::Act<T> forward(const nn::Act<T>& x, std::span<const double> ts, Tape* tape) const;
  /// Accumulates parameter gradients for dL/do = dout.
  void backward(const Tape& tape, const Mat<T>& dout);

  std::vector<nn::ParamRef<T>> params();
  std::size_t param_count();
  void zero_grad();

  /// Copies parameters from another precision.
  template <typename U>
  BasicDenoiser<U> cast() const;

  Mat<T> embed(std::span<const double> ts, Tape* tape) const;

 private:
  template <typename U>
  friend class BasicDenoiser;

  ModelConfig cfg_;
  VeSchedule sched_;
  TimeEmbedding temb_;
  nn::Dense<T> temb_dense_;
  nn::Conv2d<T> conv_in_, conv_out_;
  std::vector<nn::ResBlock<T>> down_, up_;
};

extern template class BasicDenoiser<float>;
extern template class BasicDenoiser<double>;

/// Preconditioning factor applied to the network input.
double input_scale(const ModelConfig& cfg, const VeSchedule& sched, double t);
double skip_scale(const ModelConfig& cfg, const VeSchedule& sched, double t);
double output_scale(const ModelConfig& cfg, const VeSchedule& sched, double t);

/// Packs images into a (1 x n*h*w) activation.
template <typename T>
nn::Act<T> pack_images(std::span<const Image2D> xs);

/// Single-precision network exposed as a ScoreModel. Inference is const and
/// keeps no shared scratch state.
class DenoiserNet final : public ScoreModel {
 public:
  DenoiserNet(const ModelConfig& cfg, const VeSchedule& sched);

  ScoreKind kind() const override { return ScoreKind::Learned; }
  Image2D evaluate(const Image2D& x, double t) const override;
  std::vector<Image2D> evaluate_batch(std::span<const Image2D> xs, std::span<const double> ts) const override;

  BasicDenoiser<float>& core() { return core_; }
  const BasicDenoiser<float>& core() const { return core_; }
  const ModelConfig& config() const { return core_.config(); }
  const VeSchedule& schedule() const { return core_.schedule(); }

  std::vector<float> flat_params() const;
  void set_flat_params(std::span<const float> flat);

 private:
  BasicDenoiser<float> core_;
};

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t step = 0;
  std::vector<float> m, v;
};

struct TrainOptions {
  double lr = 1e-4;
  int steps = 0;  // total optimizer steps
  int batch = 8;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;  // global-norm clip; <= 0 disables
  std::function<void(std::int64_t step, double loss)> on_step;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step, double loss);
  int step() const { return step_; }

 private:
  int step_;
};

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per executed step
};

/// Runs optimizer steps [adam.step, opts.steps). Each step draws from its own
/// substream derive_seed(seed, "train", step), so a resumed run reproduces a
/// straight run bit for bit.
TrainResult train(DenoiserNet& net, AdamState& adam, std::span<const Image2D> dataset, const TrainOptions& opts);

/// Denoising score-matching loss of a single batch evaluated through the
/// network's training path (same draws as dsm_loss for the same rng).
double dsm_loss_network(const DenoiserNet& net, std::span<const Image2D> batch, Rng& rng);

struct Checkpoint {
  ModelConfig model;
  VeSchedule schedule;
  double normalization = 1.0;
  int rows = 0, cols = 0;
  std::uint64_t train_seed = 0;
};

/// Writes params.bin, optimizer.bin and manifest.json into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const DenoiserNet& net, const AdamState& adam,
                     const Checkpoint& meta);

struct LoadedCheckpoint {
  Checkpoint meta;
  DenoiserNet net;
  AdamState adam;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace csi
