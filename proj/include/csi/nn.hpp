#pragma once

// Minimal convolutional building blocks with hand-written backward passes.
// Activations for a batch are stored as a row-major (channels x batch*h*w)
// matrix, so convolutions reduce to one GEMM over an im2col buffer and
// channel concatenation is row stacking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace csi::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Act {
  int n = 0, h = 0, w = 0;
  Mat<T> m;  // channels x (n * h * w)

  int channels() const { return static_cast<int>(m.rows()); }
  int plane() const { return h * w; }
};

template <typename T>
Act<T> like(const Act<T>& a, int channels) {
  Act<T> out{a.n, a.h, a.w, Mat<T>(channels, static_cast<Eigen::Index>(a.n) * a.h * a.w)};
  return out;
}

/// View of one trainable tensor and its gradient accumulator.
template <typename T>
struct ParamRef {
  Mat<T>* value;
  Mat<T>* grad;
};

template <typename T>
void init_normal(Mat<T>& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(nd(rng));
}

template <typename T>
inline T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
inline T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

// Whole-matrix forms go through Eigen's vectorized exp.
template <typename T>
Mat<T> silu(const Mat<T>& x) {
  return (x.array() / (T(1) + (-x.array()).exp())).matrix();
}

template <typename T>
Mat<T> silu_grad(const Mat<T>& x) {
  const auto s = (T(1) + (-x.array()).exp()).inverse();
  return (s * (T(1) + x.array() * (T(1) - s))).matrix();
}

template <typename T>
Act<T> silu(const Act<T>& x) {
  return Act<T>{x.n, x.h, x.w, silu(x.m)};
}

/// dx = dy * silu'(x)
template <typename T>
Mat<T> silu_backward(const Act<T>& x, const Mat<T>& dy) {
  return dy.cwiseProduct(silu_grad(x.m));
}

/// Same-padded k x k convolution (k = 1 or 3), stride 1.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int cin, int cout, int k) : cin_(cin), cout_(cout), k_(k) {
    if (k != 1 && k != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
    w_ = Mat<T>::Zero(cout, cin * k * k);
    b_ = Mat<T>::Zero(cout, 1);
    dw_ = Mat<T>::Zero(cout, cin * k * k);
    db_ = Mat<T>::Zero(cout, 1);
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  int fan_in() const { return cin_ * k_ * k_; }

  void init(double gain, std::mt19937_64& rng) {
    init_normal(w_, gain / std::sqrt(static_cast<double>(fan_in())), rng);
    b_.setZero();
  }

  Act<T> forward(const Act<T>& x) const {
    Act<T> y = like(x, cout_);
    if (k_ == 1) {
      y.m.noalias() = w_ * x.m;
    } else {
      Mat<T> col;
      for_each_band(x, [&](int b, int y0, int y1, Eigen::Index off, Eigen::Index cols) {
        im2col_band(x, b, y0, y1, col);
        y.m.middleCols(off, cols).noalias() = w_ * col;
      });
    }
    y.m.colwise() += b_.col(0);
    return y;
  }

  /// Accumulates parameter gradients; returns dx when requested.
  void backward(const Act<T>& x, const Mat<T>& dy, Mat<T>* dx) {
    db_.col(0) += dy.rowwise().sum();
    if (k_ == 1) {
      dw_.noalias() += dy * x.m.transpose();
      if (dx) dx->noalias() = w_.transpose() * dy;
      return;
    }
    if (dx) dx->setZero(cin_, x.m.cols());
    Mat<T> col, dcol;
    for_each_band(x, [&](int b, int y0, int y1, Eigen::Index off, Eigen::Index cols) {
      im2col_band(x, b, y0, y1, col);
      dw_.noalias() += dy.middleCols(off, cols) * col.transpose();
      if (dx) {
        dcol.noalias() = w_.transpose() * dy.middleCols(off, cols);
        col2im_band(dcol, x, b, y0, y1, *dx);
      }
    });
  }

  void params(std::vector<ParamRef<T>>& out) {
    out.push_back({&w_, &dw_});
    out.push_back({&b_, &db_});
  }

  Mat<T>& weight() { return w_; }
  Mat<T>& bias() { return b_; }

 private:
  // The im2col buffer is built one band of image rows at a time so it stays
  // cache resident.
  static constexpr int kBandPixels = 1024;

  template <typename F>
  static void for_each_band(const Act<T>& x, F&& f) {
    const int band = std::max(1, kBandPixels / std::max(1, x.w));
    for (int b = 0; b < x.n; ++b)
      for (int y0 = 0; y0 < x.h; y0 += band) {
        const int y1 = std::min(x.h, y0 + band);
        f(b, y0, y1, static_cast<Eigen::Index>(b) * x.plane() + static_cast<Eigen::Index>(y0) * x.w,
          static_cast<Eigen::Index>(y1 - y0) * x.w);
      }
  }

  void im2col_band(const Act<T>& x, int b, int y0, int y1, Mat<T>& col) const {
    const int h = x.h, w = x.w;
    const std::size_t base = static_cast<std::size_t>(b) * x.plane();
    col.setZero(static_cast<Eigen::Index>(cin_) * 9, static_cast<Eigen::Index>(y1 - y0) * w);
    for (int ci = 0; ci < cin_; ++ci)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          T* dst = col.row((ci * 3 + ky) * 3 + kx).data();
          const T* src = x.m.row(ci).data() + base;
          const int dy = ky - 1, dx = kx - 1;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int yy = y0; yy < y1; ++yy) {
            const int sy = yy + dy;
            if (sy < 0 || sy >= h) continue;
            T* d = dst + static_cast<std::size_t>(yy - y0) * w;
            const T* s = src + static_cast<std::size_t>(sy) * w + dx;
            for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx];
          }
        }
  }

  void col2im_band(const Mat<T>& dcol, const Act<T>& x, int b, int y0, int y1, Mat<T>& dx) const {
    const int h = x.h, w = x.w;
    const std::size_t base = static_cast<std::size_t>(b) * x.plane();
    for (int ci = 0; ci < cin_; ++ci)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T* src = dcol.row((ci * 3 + ky) * 3 + kx).data();
          T* dst = dx.row(ci).data() + base;
          const int dy = ky - 1, ddx = kx - 1;
          const int x0 = std::max(0, -ddx), x1 = std::min(w, w - ddx);
          for (int yy = y0; yy < y1; ++yy) {
            const int sy = yy + dy;
            if (sy < 0 || sy >= h) continue;
            const T* s = src + static_cast<std::size_t>(yy - y0) * w;
            T* d = dst + static_cast<std::size_t>(sy) * w + ddx;
            for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
          }
        }
  }

  int cin_ = 0, cout_ = 0, k_ = 3;
  Mat<T> w_, b_, dw_, db_;
};

/// Fully connected layer over column vectors: y = W x + b, x is (in x batch).
template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(int in, int out)
      : w_(Mat<T>::Zero(out, in)), b_(Mat<T>::Zero(out, 1)), dw_(Mat<T>::Zero(out, in)),
        db_(Mat<T>::Zero(out, 1)) {}

  void init(double gain, std::mt19937_64& rng) {
    init_normal(w_, gain / std::sqrt(static_cast<double>(w_.cols())), rng);
    b_.setZero();
  }

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = w_ * x;
    y.colwise() += b_.col(0);
    return y;
  }

  void backward(const Mat<T>& x, const Mat<T>& dy, Mat<T>* dx) {
    dw_.noalias() += dy * x.transpose();
    db_.col(0) += dy.rowwise().sum();
    if (dx) dx->noalias() = w_.transpose() * dy;
  }

  void params(std::vector<ParamRef<T>>& out) {
    out.push_back({&w_, &dw_});
    out.push_back({&b_, &db_});
  }

 private:
  Mat<T> w_, b_, dw_, db_;
};

/// Adds a per-(channel, image) bias: y(c, b*hw + p) += e(c, b).
template <typename T>
void add_image_bias(Act<T>& y, const Mat<T>& e) {
  const int plane = y.plane();
  for (int c = 0; c < y.channels(); ++c)
    for (int b = 0; b < y.n; ++b) y.m.row(c).segment(static_cast<Eigen::Index>(b) * plane, plane).array() += e(c, b);
}

template <typename T>
Mat<T> image_bias_backward(const Act<T>& y, const Mat<T>& dy) {
  const int plane = y.plane();
  Mat<T> de(y.channels(), y.n);
  for (int c = 0; c < y.channels(); ++c)
    for (int b = 0; b < y.n; ++b) de(c, b) = dy.row(c).segment(static_cast<Eigen::Index>(b) * plane, plane).sum();
  return de;
}

template <typename T>
Act<T> avg_pool2(const Act<T>& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw std::invalid_argument("avg_pool2: odd spatial size");
  Act<T> y{x.n, x.h / 2, x.w / 2, Mat<T>(x.channels(), static_cast<Eigen::Index>(x.n) * (x.h / 2) * (x.w / 2))};
  for (int c = 0; c < x.channels(); ++c) {
    const T* s = x.m.row(c).data();
    T* d = y.m.row(c).data();
    for (int b = 0; b < x.n; ++b)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) {
          const std::size_t i = static_cast<std::size_t>(b) * x.plane() + static_cast<std::size_t>(2 * yy) * x.w + 2 * xx;
          d[static_cast<std::size_t>(b) * y.plane() + static_cast<std::size_t>(yy) * y.w + xx] =
              T(0.25) * (s[i] + s[i + 1] + s[i + x.w] + s[i + x.w + 1]);
        }
  }
  return y;
}

/// Gradient of avg_pool2 w.r.t. its input of shape `x`.
template <typename T>
Mat<T> avg_pool2_backward(const Act<T>& x, const Mat<T>& dy) {
  Mat<T> dx(x.channels(), x.m.cols());
  const int oh = x.h / 2, ow = x.w / 2, oplane = oh * ow;
  for (int c = 0; c < x.channels(); ++c) {
    const T* s = dy.row(c).data();
    T* d = dx.row(c).data();
    for (int b = 0; b < x.n; ++b)
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx)
          d[static_cast<std::size_t>(b) * x.plane() + static_cast<std::size_t>(yy) * x.w + xx] =
              T(0.25) * s[static_cast<std::size_t>(b) * oplane + static_cast<std::size_t>(yy / 2) * ow + xx / 2];
  }
  return dx;
}

/// Nearest-neighbor 2x upsampling.
template <typename T>
Act<T> upsample2(const Act<T>& x) {
  Act<T> y{x.n, x.h * 2, x.w * 2, Mat<T>(x.channels(), static_cast<Eigen::Index>(x.n) * x.h * x.w * 4)};
  for (int c = 0; c < x.channels(); ++c) {
    const T* s = x.m.row(c).data();
    T* d = y.m.row(c).data();
    for (int b = 0; b < x.n; ++b)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx)
          d[static_cast<std::size_t>(b) * y.plane() + static_cast<std::size_t>(yy) * y.w + xx] =
              s[static_cast<std::size_t>(b) * x.plane() + static_cast<std::size_t>(yy / 2) * x.w + xx / 2];
  }
  return y;
}

/// Gradient of upsample2 for an output gradient of shape (c, n, 2h, 2w).
template <typename T>
Mat<T> upsample2_backward(const Act<T>& x, const Mat<T>& dy) {
  Mat<T> dx = Mat<T>::Zero(x.channels(), x.m.cols());
  const int oh = x.h * 2, ow = x.w * 2, oplane = oh * ow;
  for (int c = 0; c < x.channels(); ++c) {
    const T* s = dy.row(c).data();
    T* d = dx.row(c).data();
    for (int b = 0; b < x.n; ++b)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx)
          d[static_cast<std::size_t>(b) * x.plane() + static_cast<std::size_t>(yy / 2) * x.w + xx / 2] +=
              s[static_cast<std::size_t>(b) * oplane + static_cast<std::size_t>(yy) * ow + xx];
  }
  return dx;
}

template <typename T>
Act<T> concat_channels(const Act<T>& a, const Act<T>& b) {
  Act<T> y = like(a, a.channels() + b.channels());
  y.m.topRows(a.channels()) = a.m;
  y.m.bottomRows(b.channels()) = b.m;
  return y;
}

/// Pre-activation residual block with an additive time-embedding bias:
/// out = skip(x) + conv2(silu(conv1(silu(x)) + proj(emb))).
template <typename T>
class ResBlock {
 public:
  struct Cache {
    Act<T> x, a0, a1, a2;
    Mat<T> emb;
  };

  ResBlock() = default;
  ResBlock(int cin, int cout, int emb_dim)
      : conv1_(cin, cout, 3), conv2_(cout, cout, 3), proj_(emb_dim, cout), has_skip_(cin != cout) {
    if (has_skip_) skip_ = Conv2d<T>(cin, cout, 1);
  }

  void init(std::mt19937_64& rng) {
    conv1_.init(std::sqrt(2.0), rng);
    conv2_.init(0.1, rng);  // near-identity residual at initialization
    proj_.init(1.0, rng);
    if (has_skip_) skip_.init(1.0, rng);
  }

  Act<T> forward(const Act<T>& x, const Mat<T>& emb, Cache* cache) const {
    Act<T> a0 = silu(x);
    Act<T> a1 = conv1_.forward(a0);
    add_image_bias(a1, proj_.forward(emb));
    Act<T> a2 = silu(a1);
    Act<T> y = conv2_.forward(a2);
    if (has_skip_)
      y.m += skip_.forward(x).m;
    else
      y.m += x.m;
    if (cache) *cache = Cache{x, std::move(a0), std::move(a1), std::move(a2), emb};
    return y;
  }

  /// Returns dx; adds the embedding gradient into `demb`.
  Mat<T> backward(const Cache& c, const Mat<T>& dy, Mat<T>& demb) {
    Mat<T> da2;
    conv2_.backward(c.a2, dy, &da2);
    Mat<T> da1 = silu_backward(c.a1, da2);
    Mat<T> de_proj = image_bias_backward(c.a1, da1);
    Mat<T> demb_local;
    proj_.backward(c.emb, de_proj, &demb_local);
    demb += demb_local;
    Mat<T> da0;
    conv1_.backward(c.a0, da1, &da0);
    Mat<T> dx = silu_backward(c.x, da0);
    if (has_skip_) {
      Mat<T> dskip;
      skip_.backward(c.x, dy, &dskip);
      dx += dskip;
    } else {
      dx += dy;
    }
    return dx;
  }

  void params(std::vector<ParamRef<T>>& out) {
    conv1_.params(out);
    conv2_.params(out);
    proj_.params(out);
    if (has_skip_) skip_.params(out);
  }

 private:
  Conv2d<T> conv1_, conv2_, skip_;
  Dense<T> proj_;
  bool has_skip_ = false;
};

}  // namespace csi::nn
