#include "csi/denoiser.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "csi/json_io.hpp"
#include "csi/rng.hpp"

namespace csi {

namespace fs = std::filesystem;
using nlohmann::json;

void ModelConfig::validate() const {
  if (channels.empty()) throw std::invalid_argument("ModelConfig: channels must not be empty");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("ModelConfig: channel counts must be >= 1");
  if (time_features < 1 || embed_dim < 1) throw std::invalid_argument("ModelConfig: bad embedding size");
  if (!(time_scale > 0.0) || !(sigma_data > 0.0)) throw std::invalid_argument("ModelConfig: bad scales");
}

double input_scale(const ModelConfig& cfg, const VeSchedule& sched, double t) {
  return 1.0 / std::sqrt(cfg.sigma_data * cfg.sigma_data + sched.marginal_variance(t));
}

double skip_scale(const ModelConfig& cfg, const VeSchedule& sched, double t) {
  const double v = sched.marginal_variance(t);
  return std::sqrt(v) / (cfg.sigma_data * cfg.sigma_data + v);
}

double output_scale(const ModelConfig& cfg, const VeSchedule& sched, double t) {
  return cfg.sigma_data * input_scale(cfg, sched, t);
}

template <typename T>
nn::Act<T> pack_images(std::span<const Image2D> xs) {
  if (xs.empty()) throw std::invalid_argument("pack_images: empty batch");
  const int h = xs[0].rows(), w = xs[0].cols();
  nn::Act<T> a{static_cast<int>(xs.size()), h, w, Mat<T>(1, static_cast<Eigen::Index>(xs.size()) * h * w)};
  for (std::size_t b = 0; b < xs.size(); ++b) {
    require_same_shape(xs[0], xs[b], "pack_images");
    for (std::size_t i = 0; i < xs[b].size(); ++i) a.m(0, static_cast<Eigen::Index>(b * h * w + i)) = static_cast<T>(xs[b][i]);
  }
  return a;
}

template nn::Act<float> pack_images<float>(std::span<const Image2D>);
template nn::Act<double> pack_images<double>(std::span<const Image2D>);

template <typename T>
BasicDenoiser<T>::BasicDenoiser(const ModelConfig& cfg, const VeSchedule& sched)
    : cfg_(cfg), sched_(sched), temb_(cfg.time_features, cfg.time_scale, cfg.seed) {
  cfg_.validate();
  sched_.validate();
  const auto& ch = cfg_.channels;
  const int levels = static_cast<int>(ch.size());
  temb_dense_ = nn::Dense<T>(temb_.dim(), cfg_.embed_dim);
  conv_in_ = nn::Conv2d<T>(1, ch[0], 3);
  for (int l = 0; l < levels; ++l) down_.emplace_back(l == 0 ? ch[0] : ch[l - 1], ch[l], cfg_.embed_dim);
  for (int l = 0; l + 1 < levels; ++l) up_.emplace_back(ch[l + 1] + ch[l], ch[l], cfg_.embed_dim);
  conv_out_ = nn::Conv2d<T>(ch[0], 1, 3);

  std::mt19937_64 rng(derive_seed(cfg_.seed, "model-init"));
  temb_dense_.init(1.0, rng);
  conv_in_.init(1.0, rng);
  for (auto& b : down_) b.init(rng);
  for (auto& b : up_) b.init(rng);
  // conv_out starts at zero: the untrained network is the N(0, sigma_data^2) score.
}

template <typename T>
Mat<T> BasicDenoiser<T>::embed(std::span<const double> ts, Tape* tape) const {
  Mat<T> gfp(temb_.dim(), static_cast<Eigen::Index>(ts.size()));
  for (std::size_t b = 0; b < ts.size(); ++b) {
    const auto f = temb_.features(ts[b]);
    for (int k = 0; k < temb_.dim(); ++k) gfp(k, static_cast<Eigen::Index>(b)) = static_cast<T>(f[k]);
  }
  Mat<T> pre = temb_dense_.forward(gfp);
  Mat<T> emb = nn::silu(pre);
  if (tape) {
    tape->gfp = std::move(gfp);
    tape->emb_pre = std::move(pre);
  }
  return emb;
}

template <typename T>
nn::Act<T> BasicDenoiser<T>::forward(const nn::Act<T>& x, std::span<const double> ts, Tape* tape) const {
  if (x.channels() != 1) throw std::invalid_argument("denoiser: expects single-channel input");
  if (static_cast<int>(ts.size()) != x.n) throw std::invalid_argument("denoiser: one time per image required");
  if (x.h % size_divisor() != 0 || x.w % size_divisor() != 0)
    throw std::invalid_argument("denoiser: image size must be divisible by " + std::to_string(size_divisor()));
  const int levels = static_cast<int>(cfg_.channels.size());

  nn::Act<T> xin = x;
  for (int b = 0; b < x.n; ++b)
    xin.m.middleCols(static_cast<Eigen::Index>(b) * x.plane(), x.plane()) *=
        static_cast<T>(input_scale(cfg_, sched_, ts[b]));

  const Mat<T> emb = embed(ts, tape);
  if (tape) {
    tape->ts.assign(ts.begin(), ts.end());
    tape->down.resize(levels);
    tape->up.resize(levels - 1);
    tape->pool_in.resize(levels);
    tape->up_in.resize(levels - 1);
  }

  nn::Act<T> h = conv_in_.forward(xin);
  std::vector<nn::Act<T>> skips;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      if (tape) tape->pool_in[l] = h;
      h = nn::avg_pool2(h);
    }
    h = down_[l].forward(h, emb, tape ? &tape->down[l] : nullptr);
    if (l + 1 < levels) skips.push_back(h);
  }
  for (int l = levels - 2; l >= 0; --l) {
    if (tape) tape->up_in[l] = h;
    h = nn::concat_channels(nn::upsample2(h), skips[l]);
    h = up_[l].forward(h, emb, tape ? &tape->up[l] : nullptr);
  }
  nn::Act<T> out = conv_out_.forward(nn::silu(h));
  for (int b = 0; b < x.n; ++b) {
    const auto cols = static_cast<Eigen::Index>(b) * x.plane();
    out.m.middleCols(cols, x.plane()) =
        static_cast<T>(output_scale(cfg_, sched_, ts[b])) * out.m.middleCols(cols, x.plane()) -
        static_cast<T>(skip_scale(cfg_, sched_, ts[b])) * x.m.middleCols(cols, x.plane());
  }
  if (tape) {
    tape->x_in = std::move(xin);
    tape->head_in = std::move(h);
  }
  return out;
}

template <typename T>
void BasicDenoiser<T>::backward(const Tape& tape, const Mat<T>& dout) {
  const int levels = static_cast<int>(cfg_.channels.size());
  const auto& ch = cfg_.channels;
  Mat<T> demb = Mat<T>::Zero(cfg_.embed_dim, static_cast<Eigen::Index>(tape.ts.size()));

  Mat<T> dhead = dout;
  const auto plane = static_cast<Eigen::Index>(tape.head_in.plane());
  for (std::size_t b = 0; b < tape.ts.size(); ++b)
    dhead.middleCols(static_cast<Eigen::Index>(b) * plane, plane) *=
        static_cast<T>(output_scale(cfg_, sched_, tape.ts[b]));
  Mat<T> da;
  conv_out_.backward(nn::silu(tape.head_in), dhead, &da);
  Mat<T> dh = nn::silu_backward(tape.head_in, da);

  std::vector<Mat<T>> dskips(std::max(levels - 1, 0));
  for (int l = 0; l + 1 < levels; ++l) {
    const Mat<T> dcat = up_[l].backward(tape.up[l], dh, demb);
    dskips[l] = dcat.bottomRows(ch[l]);
    dh = nn::upsample2_backward(tape.up_in[l], Mat<T>(dcat.topRows(ch[l + 1])));
  }
  for (int l = levels - 1; l >= 0; --l) {
    if (l + 1 < levels) dh += dskips[l];
    dh = down_[l].backward(tape.down[l], dh, demb);
    if (l > 0) dh = nn::avg_pool2_backward(tape.pool_in[l], dh);
  }
  conv_in_.backward(tape.x_in, dh, nullptr);

  const Mat<T> demb_pre = demb.cwiseProduct(nn::silu_grad(tape.emb_pre));
  temb_dense_.backward(tape.gfp, demb_pre, nullptr);
}

template <typename T>
std::vector<nn::ParamRef<T>> BasicDenoiser<T>::params() {
  std::vector<nn::ParamRef<T>> out;
  temb_dense_.params(out);
  conv_in_.params(out);
  for (auto& b : down_) b.params(out);
  for (auto& b : up_) b.params(out);
  conv_out_.params(out);
  return out;
}

template <typename T>
std::size_t BasicDenoiser<T>::param_count() {
  std::size_t n = 0;
  for (const auto& p : params()) n += static_cast<std::size_t>(p.value->size());
  return n;
}

template <typename T>
void BasicDenoiser<T>::zero_grad() {
  for (auto& p : params()) p.grad->setZero();
}

template <typename T>
template <typename U>
BasicDenoiser<U> BasicDenoiser<T>::cast() const {
  BasicDenoiser<T> src = *this;
  BasicDenoiser<U> dst(cfg_, sched_);
  auto sp = src.params();
  auto dp = dst.params();
  for (std::size_t i = 0; i < sp.size(); ++i) *dp[i].value = sp[i].value->template cast<U>();
  return dst;
}

template class BasicDenoiser<float>;
template class BasicDenoiser<double>;
template BasicDenoiser<double> BasicDenoiser<float>::cast<double>() const;
template BasicDenoiser<float> BasicDenoiser<double>::cast<float>() const;

DenoiserNet::DenoiserNet(const ModelConfig& cfg, const VeSchedule& sched) : core_(cfg, sched) {}

std::vector<Image2D> DenoiserNet::evaluate_batch(std::span<const Image2D> xs, std::span<const double> ts) const {
  if (xs.size() != ts.size()) throw std::invalid_argument("evaluate_batch: size mismatch");
  if (xs.empty()) return {};
  const nn::Act<float> out = core_.forward(pack_images<float>(xs), ts, nullptr);
  std::vector<Image2D> scores;
  scores.reserve(xs.size());
  const int plane = out.plane();
  for (std::size_t b = 0; b < xs.size(); ++b) {
    const auto inv_std = static_cast<float>(1.0 / schedule().marginal_std(ts[b]));
    Image2D s(xs[b].rows(), xs[b].cols());
    for (int i = 0; i < plane; ++i) s[i] = out.m(0, static_cast<Eigen::Index>(b) * plane + i) * inv_std;
    scores.push_back(std::move(s));
  }
  return scores;
}

Image2D DenoiserNet::evaluate(const Image2D& x, double t) const {
  const double ts[1] = {t};
  return std::move(evaluate_batch(std::span<const Image2D>(&x, 1), ts).front());
}

std::vector<float> DenoiserNet::flat_params() const {
  BasicDenoiser<float> copy = core_;
  std::vector<float> flat;
  for (const auto& p : copy.params()) flat.insert(flat.end(), p.value->data(), p.value->data() + p.value->size());
  return flat;
}

void DenoiserNet::set_flat_params(std::span<const float> flat) {
  auto ps = core_.params();
  std::size_t total = 0;
  for (const auto& p : ps) total += static_cast<std::size_t>(p.value->size());
  if (flat.size() != total) throw std::invalid_argument("set_flat_params: parameter count mismatch");
  std::size_t off = 0;
  for (auto& p : ps) {
    std::copy_n(flat.data() + off, p.value->size(), p.value->data());
    off += static_cast<std::size_t>(p.value->size());
  }
}

TrainingDiverged::TrainingDiverged(int step, double loss)
    : std::runtime_error("training diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) + ")"),
      step_(step) {}

namespace {

struct PreparedBatch {
  std::vector<Image2D> noisy;
  std::vector<Image2D> noise;
  std::vector<double> ts;
};

PreparedBatch prepare_batch(const VeSchedule& sched, std::span<const Image2D> clean, Rng& rng) {
  PreparedBatch pb;
  for (const Image2D& x0 : clean) {
    DsmDraw d = draw_dsm_sample(x0.rows(), x0.cols(), rng);
    pb.noisy.push_back(perturb(sched, x0, d.t, d.noise));
    pb.noise.push_back(std::move(d.noise));
    pb.ts.push_back(d.t);
  }
  return pb;
}

// Per-image ||o + z||^2 averaged over the batch; fills dL/do when requested.
double noise_loss(const nn::Act<float>& out, const PreparedBatch& pb, Mat<float>* dout) {
  const int plane = out.plane();
  const auto n = static_cast<double>(pb.noise.size());
  if (dout) dout->resize(1, out.m.cols());
  double total = 0.0;
  for (std::size_t b = 0; b < pb.noise.size(); ++b) {
    for (int i = 0; i < plane; ++i) {
      const Eigen::Index col = static_cast<Eigen::Index>(b) * plane + i;
      const double r = static_cast<double>(out.m(0, col)) + pb.noise[b][i];
      total += r * r;
      if (dout) (*dout)(0, col) = static_cast<float>(2.0 * r / n);
    }
  }
  return total / n;
}

}  // namespace

double dsm_loss_network(const DenoiserNet& net, std::span<const Image2D> batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("dsm_loss: empty batch");
  const PreparedBatch pb = prepare_batch(net.schedule(), batch, rng);
  const nn::Act<float> out = net.core().forward(pack_images<float>(pb.noisy), pb.ts, nullptr);
  return noise_loss(out, pb, nullptr);
}

TrainResult train(DenoiserNet& net, AdamState& adam, std::span<const Image2D> dataset, const TrainOptions& opts) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (opts.batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  auto& core = net.core();
  auto ps = core.params();
  std::size_t total = 0;
  for (const auto& p : ps) total += static_cast<std::size_t>(p.value->size());
  if (adam.m.empty()) {
    adam.m.assign(total, 0.0f);
    adam.v.assign(total, 0.0f);
  }
  if (adam.m.size() != total || adam.v.size() != total)
    throw std::invalid_argument("train: optimizer state does not match the model");

  TrainResult result;
  std::vector<Image2D> clean(opts.batch);
  for (auto step = adam.step; step < opts.steps; ++step) {
    Rng rng(derive_seed(opts.seed, "train", static_cast<std::uint64_t>(step)));
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    for (auto& img : clean) img = dataset[pick(rng)];
    const PreparedBatch pb = prepare_batch(net.schedule(), clean, rng);

    typename BasicDenoiser<float>::Tape tape;
    const nn::Act<float> out = core.forward(pack_images<float>(pb.noisy), pb.ts, &tape);
    Mat<float> dout;
    const double loss = noise_loss(out, pb, &dout);
    if (!std::isfinite(loss)) throw TrainingDiverged(static_cast<int>(step), loss);

    core.zero_grad();
    core.backward(tape, dout);

    double gnorm2 = 0.0;
    for (const auto& p : ps) gnorm2 += p.grad->template cast<double>().squaredNorm();
    if (!std::isfinite(gnorm2)) throw TrainingDiverged(static_cast<int>(step), loss);
    const double gnorm = std::sqrt(gnorm2);
    const double clip = (opts.grad_clip > 0.0 && gnorm > opts.grad_clip) ? opts.grad_clip / gnorm : 1.0;

    const auto t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(adam.beta1, t);
    const double c2 = 1.0 - std::pow(adam.beta2, t);
    std::size_t off = 0;
    for (auto& p : ps) {
      float* w = p.value->data();
      const float* g = p.grad->data();
      for (Eigen::Index i = 0; i < p.value->size(); ++i, ++off) {
        const double gi = g[i] * clip;
        const double m = adam.beta1 * adam.m[off] + (1.0 - adam.beta1) * gi;
        const double v = adam.beta2 * adam.v[off] + (1.0 - adam.beta2) * gi * gi;
        adam.m[off] = static_cast<float>(m);
        adam.v[off] = static_cast<float>(v);
        w[i] = static_cast<float>(w[i] - opts.lr * (m / c1) / (std::sqrt(v / c2) + adam.eps));
      }
    }
    adam.step = step + 1;
    result.loss_trace.push_back(loss);
    if (opts.on_step) opts.on_step(step, loss);
  }
  return result;
}

void save_checkpoint(const fs::path& dir, const DenoiserNet& net, const AdamState& adam, const Checkpoint& meta) {
  fs::create_directories(dir);
  const auto flat = net.flat_params();
  write_f32_blob(dir / "params.bin", flat);
  std::vector<float> opt = adam.m;
  opt.insert(opt.end(), adam.v.begin(), adam.v.end());
  write_f32_blob(dir / "optimizer.bin", opt);
  const json manifest = {{"architecture", net.config()},
                         {"schedule", meta.schedule},
                         {"normalization", meta.normalization},
                         {"image_shape", {meta.rows, meta.cols}},
                         {"seed", meta.train_seed},
                         {"step", adam.step},
                         {"param_count", flat.size()},
                         {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no checkpoint manifest in " + dir.string());
  const json manifest = json::parse(in);
  Checkpoint meta;
  meta.model = manifest.at("architecture").get<ModelConfig>();
  meta.schedule = manifest.at("schedule").get<VeSchedule>();
  meta.normalization = manifest.at("normalization").get<double>();
  const auto shape = manifest.at("image_shape").get<std::array<int, 2>>();
  meta.rows = shape[0];
  meta.cols = shape[1];
  meta.train_seed = manifest.at("seed").get<std::uint64_t>();

  LoadedCheckpoint ck{meta, DenoiserNet(meta.model, meta.schedule), AdamState{}};
  ck.net.set_flat_params(read_f32_blob(dir / "params.bin"));
  ck.adam.step = manifest.at("step").get<std::int64_t>();
  const auto& a = manifest.at("adam");
  ck.adam.beta1 = a.at("beta1").get<double>();
  ck.adam.beta2 = a.at("beta2").get<double>();
  ck.adam.eps = a.at("eps").get<double>();
  if (fs::exists(dir / "optimizer.bin")) {
    auto opt = read_f32_blob(dir / "optimizer.bin");
    if (!opt.empty()) {
      const std::size_t half = opt.size() / 2;
      ck.adam.m.assign(opt.begin(), opt.begin() + static_cast<std::ptrdiff_t>(half));
      ck.adam.v.assign(opt.begin() + static_cast<std::ptrdiff_t>(half), opt.end());
    }
  }
  return ck;
}

}  // namespace csi
