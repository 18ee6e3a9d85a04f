#include "hsfruit/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hsf::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void uniform_fill(Tensor& t, float bound, Rng& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.vec()) v = dist(rng);
}

void check_rank(const Tensor& x, int rank, const char* who) {
  if (x.rank() != rank) {
    fail(ErrorCode::kShapeMismatch, std::string(who) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
                                        shape_string(x.shape()));
  }
}

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// Column layout: row = (c * k + ky) * k + kx, column = oy * Wo + ox.
void im2col(const float* x, int c_in, int h, int w, int k, int s, int p, int ho, int wo, float* cols) {
  for (int c = 0; c < c_in; ++c) {
    const float* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          float* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int c_in, int h, int w, int k, int s, int p, int ho, int wo, float* x) {
  for (int c = 0; c < c_in; ++c) {
    float* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          const float* src = row + static_cast<std::size_t>(oy) * wo;
          float* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Range of output columns ox for which ix = ox*s - p + kx lies inside [0, w).
std::pair<int, int> valid_range(int w, int wo, int s, int p, int kx) {
  int lo = 0;
  while (lo < wo && lo * s - p + kx < 0) ++lo;
  int hi = wo;
  while (hi > lo && (hi - 1) * s - p + kx >= w) --hi;
  return {lo, hi};
}

void depthwise_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dOptions& o, Tensor& y) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = y.dim(2), wo = y.dim(3), k = o.kernel, s = o.stride, p = o.padding;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* in = x.data() + (static_cast<std::size_t>(i) * c + ch) * h * w;
      float* out = y.data() + (static_cast<std::size_t>(i) * c + ch) * ho * wo;
      const float* wk = weight.data() + static_cast<std::size_t>(ch) * k * k;
      std::fill(out, out + static_cast<std::size_t>(ho) * wo, bias ? (*bias)[ch] : 0.0f);
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const float wv = wk[ky * k + kx];
          const auto [lo, hi] = valid_range(w, wo, s, p, kx);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= h) continue;
            const float* src = in + static_cast<std::size_t>(iy) * w - p + kx;
            float* dst = out + static_cast<std::size_t>(oy) * wo;
            if (s == 1) {
              for (int ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox * s];
            }
          }
        }
      }
    }
  }
}

void depthwise_backward(const Tensor& x, const Tensor& weight, const Tensor& g, const Conv2dOptions& o,
                        Tensor& dweight, Tensor* dbias, Tensor* dx) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = g.dim(2), wo = g.dim(3), k = o.kernel, s = o.stride, p = o.padding;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* in = x.data() + (static_cast<std::size_t>(i) * c + ch) * h * w;
      const float* go = g.data() + (static_cast<std::size_t>(i) * c + ch) * ho * wo;
      float* din = dx ? dx->data() + (static_cast<std::size_t>(i) * c + ch) * h * w : nullptr;
      const float* wk = weight.data() + static_cast<std::size_t>(ch) * k * k;
      float* dwk = dweight.data() + static_cast<std::size_t>(ch) * k * k;
      if (dbias) {
        double acc = 0.0;
        for (std::size_t j = 0; j < static_cast<std::size_t>(ho) * wo; ++j) acc += go[j];
        (*dbias)[ch] += static_cast<float>(acc);
      }
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const float wv = wk[ky * k + kx];
          const auto [lo, hi] = valid_range(w, wo, s, p, kx);
          float acc = 0.0f;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= h) continue;
            const float* src = in + static_cast<std::size_t>(iy) * w - p + kx;
            const float* gg = go + static_cast<std::size_t>(oy) * wo;
            float row = 0.0f;
            if (s == 1) {
              for (int ox = lo; ox < hi; ++ox) row += gg[ox] * src[ox];
              if (din) {
                float* d = din + static_cast<std::size_t>(iy) * w - p + kx;
                for (int ox = lo; ox < hi; ++ox) d[ox] += wv * gg[ox];
              }
            } else {
              for (int ox = lo; ox < hi; ++ox) row += gg[ox] * src[ox * s];
              if (din) {
                float* d = din + static_cast<std::size_t>(iy) * w - p + kx;
                for (int ox = lo; ox < hi; ++ox) d[ox * s] += wv * gg[ox];
              }
            }
            acc += row;
          }
          dwk[ky * k + kx] += acc;
        }
      }
    }
  }
}

void conv_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dOptions& o, Tensor& y) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = y.dim(2), wo = y.dim(3), k = o.kernel;
  const int cols_rows = c * k * k;
  const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
  const bool pointwise = k == 1 && o.stride == 1 && o.padding == 0;
  std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(cols_rows) * plane_out);
  ConstMapMat wm(weight.data(), o.out_channels, cols_rows);
  for (int i = 0; i < n; ++i) {
    const float* in = x.data() + static_cast<std::size_t>(i) * c * h * w;
    const float* src = in;
    if (!pointwise) {
      im2col(in, c, h, w, k, o.stride, o.padding, ho, wo, cols.data());
      src = cols.data();
    }
    ConstMapMat xm(src, cols_rows, static_cast<Eigen::Index>(plane_out));
    MapMat ym(y.data() + static_cast<std::size_t>(i) * o.out_channels * plane_out, o.out_channels,
              static_cast<Eigen::Index>(plane_out));
    ym.noalias() = wm * xm;
    if (bias) {
      for (int oc = 0; oc < o.out_channels; ++oc) ym.row(oc).array() += (*bias)[oc];
    }
  }
}

void conv_backward(const Tensor& x, const Tensor& weight, const Tensor& g, const Conv2dOptions& o, Tensor& dweight,
                   Tensor* dbias, Tensor* dx) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = g.dim(2), wo = g.dim(3), k = o.kernel;
  const int cols_rows = c * k * k;
  const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
  const bool pointwise = k == 1 && o.stride == 1 && o.padding == 0;
  std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(cols_rows) * plane_out);
  std::vector<float> dcols(pointwise || !dx ? 0 : cols.size());
  ConstMapMat wm(weight.data(), o.out_channels, cols_rows);
  MapMat dwm(dweight.data(), o.out_channels, cols_rows);
  for (int i = 0; i < n; ++i) {
    const float* in = x.data() + static_cast<std::size_t>(i) * c * h * w;
    const float* src = in;
    if (!pointwise) {
      im2col(in, c, h, w, k, o.stride, o.padding, ho, wo, cols.data());
      src = cols.data();
    }
    ConstMapMat xm(src, cols_rows, static_cast<Eigen::Index>(plane_out));
    ConstMapMat gm(g.data() + static_cast<std::size_t>(i) * o.out_channels * plane_out, o.out_channels,
                   static_cast<Eigen::Index>(plane_out));
    dwm.noalias() += gm * xm.transpose();
    if (dbias) {
      for (int oc = 0; oc < o.out_channels; ++oc) {
        double acc = 0.0;
        const float* row = gm.data() + static_cast<std::size_t>(oc) * plane_out;
        for (std::size_t j = 0; j < plane_out; ++j) acc += row[j];
        (*dbias)[oc] += static_cast<float>(acc);
      }
    }
    if (dx) {
      float* din = dx->data() + static_cast<std::size_t>(i) * c * h * w;
      if (pointwise) {
        MapMat dxm(din, c, static_cast<Eigen::Index>(plane_out));
        dxm.noalias() = wm.transpose() * gm;
      } else {
        MapMat dcm(dcols.data(), cols_rows, static_cast<Eigen::Index>(plane_out));
        dcm.noalias() = wm.transpose() * gm;
        std::fill(din, din + static_cast<std::size_t>(c) * h * w, 0.0f);
        col2im(dcols.data(), c, h, w, k, o.stride, o.padding, ho, wo, din);
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
void Layer::named_params(const std::string& prefix, std::vector<NamedParam>& out) {
  for (Param* p : own_params_) out.push_back({prefix.empty() ? p->name : prefix + "." + p->name, p});
}

// ---------------------------------------------------------------------------
Conv2d::Conv2d(const Conv2dOptions& opt, Rng& rng) : opt_(opt) {
  require(opt.in_channels > 0 && opt.out_channels > 0 && opt.kernel > 0 && opt.stride > 0 && opt.padding >= 0,
          ErrorCode::kInvalidArgument, "invalid convolution geometry");
  require(opt.groups == 1 || (opt.groups == opt.in_channels && opt.out_channels == opt.in_channels),
          ErrorCode::kInvalidArgument, "only dense or depthwise (multiplier 1) convolutions are supported");
  const int in_per_group = opt.in_channels / opt.groups;
  weight_ = Param("weight", Tensor({opt.out_channels, in_per_group, opt.kernel, opt.kernel}));
  const int fan_in = in_per_group * opt.kernel * opt.kernel;
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  uniform_fill(weight_.value, bound, rng);
  if (opt.bias) {
    bias_ = Param("bias", Tensor({opt.out_channels}));
    uniform_fill(bias_.value, bound, rng);
    rebind_params({&weight_, &bias_});
  } else {
    rebind_params({&weight_});
  }
}

Conv2d::Conv2d(const Conv2d& other) : Layer(other), opt_(other.opt_), weight_(other.weight_), bias_(other.bias_) {
  if (opt_.bias) rebind_params({&weight_, &bias_});
  else rebind_params({&weight_});
}

Tensor Conv2d::infer(const Tensor& x) const {
  check_rank(x, 4, "conv2d");
  if (x.dim(1) != opt_.in_channels) {
    fail(ErrorCode::kShapeMismatch, "conv2d expects " + std::to_string(opt_.in_channels) + " input channels, got " +
                                        std::to_string(x.dim(1)));
  }
  const int ho = conv_out(x.dim(2), opt_.kernel, opt_.stride, opt_.padding);
  const int wo = conv_out(x.dim(3), opt_.kernel, opt_.stride, opt_.padding);
  require(ho > 0 && wo > 0, ErrorCode::kShapeMismatch, "conv2d input smaller than kernel");
  Tensor y({x.dim(0), opt_.out_channels, ho, wo});
  const Tensor* b = opt_.bias ? &bias_.value : nullptr;
  if (opt_.groups == 1) conv_forward(x, weight_.value, b, opt_, y);
  else depthwise_forward(x, weight_.value, b, opt_, y);
  return y;
}

Tensor Conv2d::forward(const Tensor& x, bool) {
  Tensor y = infer(x);
  cache_x_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& g, bool need_input_grad) {
  require(!cache_x_.empty(), ErrorCode::kState, "conv2d backward without forward");
  Tensor dx;
  if (need_input_grad) dx = Tensor(cache_x_.shape());
  Tensor* db = opt_.bias ? &bias_.grad : nullptr;
  if (opt_.groups == 1) conv_backward(cache_x_, weight_.value, g, opt_, weight_.grad, db, need_input_grad ? &dx : nullptr);
  else depthwise_backward(cache_x_, weight_.value, g, opt_, weight_.grad, db, need_input_grad ? &dx : nullptr);
  return dx;
}

// ---------------------------------------------------------------------------
Linear::Linear(int in_features, int out_features, Rng& rng, bool bias)
    : in_(in_features), out_(out_features), has_bias_(bias) {
  require(in_features > 0 && out_features > 0, ErrorCode::kInvalidArgument, "linear layer needs positive sizes");
  weight_ = Param("weight", Tensor({out_features, in_features}));
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_features));
  uniform_fill(weight_.value, bound, rng);
  if (bias) {
    bias_ = Param("bias", Tensor({out_features}));
    uniform_fill(bias_.value, bound, rng);
    rebind_params({&weight_, &bias_});
  } else {
    rebind_params({&weight_});
  }
}

Linear::Linear(const Linear& other)
    : Layer(other), in_(other.in_), out_(other.out_), has_bias_(other.has_bias_), weight_(other.weight_),
      bias_(other.bias_) {
  if (has_bias_) rebind_params({&weight_, &bias_});
  else rebind_params({&weight_});
}

Tensor Linear::infer(const Tensor& x) const {
  check_rank(x, 2, "linear");
  if (x.dim(1) != in_) {
    fail(ErrorCode::kShapeMismatch,
         "linear expects " + std::to_string(in_) + " features, got " + std::to_string(x.dim(1)));
  }
  const int n = x.dim(0);
  Tensor y({n, out_});
  ConstMapMat wm(weight_.value.data(), out_, in_);
  // Row by row so a sample's result never depends on what else is in the batch.
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const Eigen::RowVectorXf> xi(x.data() + static_cast<std::size_t>(i) * in_, in_);
    Eigen::Map<Eigen::RowVectorXf> yi(y.data() + static_cast<std::size_t>(i) * out_, out_);
    yi.noalias() = xi * wm.transpose();
    if (has_bias_) yi += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_);
  }
  return y;
}

Tensor Linear::forward(const Tensor& x, bool) {
  Tensor y = infer(x);
  cache_x_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& g, bool need_input_grad) {
  require(!cache_x_.empty(), ErrorCode::kState, "linear backward without forward");
  const int n = cache_x_.dim(0);
  ConstMapMat xm(cache_x_.data(), n, in_);
  ConstMapMat gm(g.data(), n, out_);
  MapMat dwm(weight_.grad.data(), out_, in_);
  dwm.noalias() += gm.transpose() * xm;
  if (has_bias_) {
    for (int j = 0; j < out_; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += g[static_cast<std::size_t>(i) * out_ + j];
      bias_.grad[j] += static_cast<float>(acc);
    }
  }
  Tensor dx;
  if (need_input_grad) {
    dx = Tensor({n, in_});
    MapMat dxm(dx.data(), n, in_);
    ConstMapMat wm(weight_.value.data(), out_, in_);
    dxm.noalias() = gm * wm;
  }
  return dx;
}

// ---------------------------------------------------------------------------
BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : channels_(channels), momentum_(momentum), eps_(eps), gamma_("weight", Tensor({channels}, 1.0f)),
      beta_("bias", Tensor({channels})), running_mean_({channels}, 0.0f), running_var_({channels}, 1.0f) {
  require(channels > 0, ErrorCode::kInvalidArgument, "batch norm needs channels > 0");
  rebind_params({&gamma_, &beta_});
}

BatchNorm2d::BatchNorm2d(const BatchNorm2d& o)
    : Layer(o), channels_(o.channels_), momentum_(o.momentum_), eps_(o.eps_), gamma_(o.gamma_), beta_(o.beta_),
      running_mean_(o.running_mean_), running_var_(o.running_var_) {
  rebind_params({&gamma_, &beta_});
}

void BatchNorm2d::named_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  out.push_back({prefix + ".running_mean", &running_mean_});
  out.push_back({prefix + ".running_var", &running_var_});
}

Tensor BatchNorm2d::infer(const Tensor& x) const {
  check_rank(x, 4, "batchnorm2d");
  require(x.dim(1) == channels_, ErrorCode::kShapeMismatch, "batchnorm2d channel mismatch");
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y(x.shape());
  for (int c = 0; c < channels_; ++c) {
    const float inv = 1.0f / std::sqrt(running_var_[c] + eps_);
    const float scale = gamma_.value[c] * inv;
    const float shift = beta_.value[c] - running_mean_[c] * scale;
    for (int i = 0; i < n; ++i) {
      const float* src = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
      float* dst = y.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] * scale + shift;
    }
  }
  return y;
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  cached_training_ = training;
  if (!training) {
    cache_x_ = x;
    return infer(x);
  }
  check_rank(x, 4, "batchnorm2d");
  require(x.dim(1) == channels_, ErrorCode::kShapeMismatch, "batchnorm2d channel mismatch");
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double m = static_cast<double>(n) * plane;
  Tensor y(x.shape());
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0.0f);
  for (int c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* src = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) sum += src[j];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* src = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = src[j] - mean;
        sq += d * d;
      }
    }
    const double var = sq / m;
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
    inv_std_[c] = inv;
    const float g = gamma_.value[c], b = beta_.value[c];
    const float meanf = static_cast<float>(mean);
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const float xh = (x[off + j] - meanf) * inv;
        xhat_[off + j] = xh;
        y[off + j] = xh * g + b;
      }
    }
    const double unbiased = m > 1 ? sq / (m - 1) : var;
    running_mean_[c] = static_cast<float>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
    running_var_[c] = static_cast<float>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& g, bool need_input_grad) {
  const int n = g.dim(0);
  const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
  Tensor dx;
  if (need_input_grad) dx = Tensor(g.shape());
  if (!cached_training_) {
    // Frozen statistics: a per-channel affine map.
    for (int c = 0; c < channels_; ++c) {
      const float inv = 1.0f / std::sqrt(running_var_[c] + eps_);
      const float scale = gamma_.value[c] * inv;
      double dgamma = 0.0, dbeta = 0.0;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          dgamma += static_cast<double>(g[off + j]) * (cache_x_[off + j] - running_mean_[c]) * inv;
          dbeta += g[off + j];
          if (need_input_grad) dx[off + j] = g[off + j] * scale;
        }
      }
      gamma_.grad[c] += static_cast<float>(dgamma);
      beta_.grad[c] += static_cast<float>(dbeta);
    }
    return dx;
  }
  for (int c = 0; c < channels_; ++c) {
    double dgamma = 0.0, dbeta = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        dgamma += static_cast<double>(g[off + j]) * xhat_[off + j];
        dbeta += g[off + j];
      }
    }
    gamma_.grad[c] += static_cast<float>(dgamma);
    beta_.grad[c] += static_cast<float>(dbeta);
    if (!need_input_grad) continue;
    const double m = static_cast<double>(n) * plane;
    const float k = gamma_.value[c] * inv_std_[c] / static_cast<float>(m);
    const float mdb = static_cast<float>(dbeta);
    const float mdg = static_cast<float>(dgamma);
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        dx[off + j] = k * (static_cast<float>(m) * g[off + j] - mdb - xhat_[off + j] * mdg);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
Tensor ReLU::infer(const Tensor& x) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return y;
}

Tensor ReLU::forward(const Tensor& x, bool) {
  cache_y_ = infer(x);
  return cache_y_;
}

Tensor ReLU::backward(const Tensor& g, bool) {
  Tensor dx(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) dx[i] = cache_y_[i] > 0.0f ? g[i] : 0.0f;
  return dx;
}

// ---------------------------------------------------------------------------
Pool2d::Pool2d(PoolKind kind, int kernel, int stride, int padding)
    : kind_(kind), kernel_(kernel), stride_(stride), padding_(padding) {
  require(kernel > 0 && stride > 0 && padding >= 0, ErrorCode::kInvalidArgument, "invalid pooling geometry");
  require(kind == PoolKind::kMax || padding == 0, ErrorCode::kInvalidArgument, "average pooling takes no padding");
}

Tensor Pool2d::run(const Tensor& x, std::vector<std::int32_t>* argmax) const {
  check_rank(x, 4, "pool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = conv_out(h, kernel_, stride_, padding_), wo = conv_out(w, kernel_, stride_, padding_);
  require(ho > 0 && wo > 0, ErrorCode::kShapeMismatch, "pooling input smaller than window");
  Tensor y({n, c, ho, wo});
  if (argmax) argmax->assign(y.size(), -1);
  const float inv_area = 1.0f / static_cast<float>(kernel_ * kernel_);
  for (int pl = 0; pl < n * c; ++pl) {
    const float* in = x.data() + static_cast<std::size_t>(pl) * h * w;
    float* out = y.data() + static_cast<std::size_t>(pl) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const std::size_t oi = static_cast<std::size_t>(oy) * wo + ox;
        if (kind_ == PoolKind::kAverage) {
          float acc = 0.0f;
          for (int ky = 0; ky < kernel_; ++ky) {
            const float* row = in + static_cast<std::size_t>(oy * stride_ + ky) * w + ox * stride_;
            for (int kx = 0; kx < kernel_; ++kx) acc += row[kx];
          }
          out[oi] = acc * inv_area;
        } else {
          float best = -std::numeric_limits<float>::infinity();
          std::int32_t best_i = -1;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ox * stride_ - padding_ + kx;
              if (ix < 0 || ix >= w) continue;
              const float v = in[static_cast<std::size_t>(iy) * w + ix];
              if (v > best) {
                best = v;
                best_i = iy * w + ix;
              }
            }
          }
          out[oi] = best;
          if (argmax) (*argmax)[static_cast<std::size_t>(pl) * ho * wo + oi] = best_i;
        }
      }
    }
  }
  return y;
}

Tensor Pool2d::infer(const Tensor& x) const { return run(x, nullptr); }

Tensor Pool2d::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  return run(x, kind_ == PoolKind::kMax ? &argmax_ : nullptr);
}

Tensor Pool2d::backward(const Tensor& g, bool) {
  Tensor dx(in_shape_);
  const int h = in_shape_[2], w = in_shape_[3];
  const int ho = g.dim(2), wo = g.dim(3);
  const float inv_area = 1.0f / static_cast<float>(kernel_ * kernel_);
  for (int pl = 0; pl < g.dim(0) * g.dim(1); ++pl) {
    float* din = dx.data() + static_cast<std::size_t>(pl) * h * w;
    const float* go = g.data() + static_cast<std::size_t>(pl) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const std::size_t oi = static_cast<std::size_t>(oy) * wo + ox;
        if (kind_ == PoolKind::kAverage) {
          const float v = go[oi] * inv_area;
          for (int ky = 0; ky < kernel_; ++ky) {
            float* row = din + static_cast<std::size_t>(oy * stride_ + ky) * w + ox * stride_;
            for (int kx = 0; kx < kernel_; ++kx) row[kx] += v;
          }
        } else {
          const std::int32_t idx = argmax_[static_cast<std::size_t>(pl) * ho * wo + oi];
          if (idx >= 0) din[idx] += go[oi];
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
Tensor GlobalAvgPool::infer(const Tensor& x) const {
  check_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c});
  for (int i = 0; i < n * c; ++i) {
    const float* src = x.data() + static_cast<std::size_t>(i) * plane;
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += src[j];
    y[i] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return y;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  return infer(x);
}

Tensor GlobalAvgPool::backward(const Tensor& g, bool) {
  Tensor dx(in_shape_);
  const std::size_t plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  const float inv = 1.0f / static_cast<float>(plane);
  for (std::size_t i = 0; i < g.size(); ++i) {
    float* dst = dx.data() + i * plane;
    std::fill(dst, dst + plane, g[i] * inv);
  }
  return dx;
}

// ---------------------------------------------------------------------------
namespace {
int bin_start(int i, int in, int out) { return (i * in) / out; }
int bin_end(int i, int in, int out) { return ((i + 1) * in + out - 1) / out; }
}  // namespace

Tensor AdaptiveAvgPool2d::infer(const Tensor& x) const {
  check_rank(x, 4, "adaptive_avg_pool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, out_h_, out_w_});
  for (int pl = 0; pl < n * c; ++pl) {
    const float* in = x.data() + static_cast<std::size_t>(pl) * h * w;
    float* out = y.data() + static_cast<std::size_t>(pl) * out_h_ * out_w_;
    for (int oy = 0; oy < out_h_; ++oy) {
      const int y0 = bin_start(oy, h, out_h_), y1 = bin_end(oy, h, out_h_);
      for (int ox = 0; ox < out_w_; ++ox) {
        const int x0 = bin_start(ox, w, out_w_), x1 = bin_end(ox, w, out_w_);
        float acc = 0.0f;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) acc += in[static_cast<std::size_t>(yy) * w + xx];
        out[oy * out_w_ + ox] = acc / static_cast<float>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return y;
}

Tensor AdaptiveAvgPool2d::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  return infer(x);
}

Tensor AdaptiveAvgPool2d::backward(const Tensor& g, bool) {
  Tensor dx(in_shape_);
  const int h = in_shape_[2], w = in_shape_[3];
  for (int pl = 0; pl < g.dim(0) * g.dim(1); ++pl) {
    float* din = dx.data() + static_cast<std::size_t>(pl) * h * w;
    const float* go = g.data() + static_cast<std::size_t>(pl) * out_h_ * out_w_;
    for (int oy = 0; oy < out_h_; ++oy) {
      const int y0 = bin_start(oy, h, out_h_), y1 = bin_end(oy, h, out_h_);
      for (int ox = 0; ox < out_w_; ++ox) {
        const int x0 = bin_start(ox, w, out_w_), x1 = bin_end(ox, w, out_w_);
        const float v = go[oy * out_w_ + ox] / static_cast<float>((y1 - y0) * (x1 - x0));
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) din[static_cast<std::size_t>(yy) * w + xx] += v;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
Tensor Flatten::infer(const Tensor& x) const {
  const int n = x.dim(0);
  return x.reshaped({n, static_cast<int>(x.size() / static_cast<std::size_t>(n))});
}

Tensor Flatten::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  return infer(x);
}

Tensor Flatten::backward(const Tensor& g, bool) { return g.reshaped(in_shape_); }

// ---------------------------------------------------------------------------
Tensor Dropout::forward(const Tensor& x, bool training) {
  if (!training || p_ <= 0.0f) {
    mask_.clear();
    return x;
  }
  std::bernoulli_distribution keep(1.0 - p_);
  const float scale = 1.0f / (1.0f - p_);
  mask_.resize(x.size());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = keep(rng_) ? scale : 0.0f;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& g, bool) {
  if (mask_.empty()) return g;
  Tensor dx(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * mask_[i];
  return dx;
}

// ---------------------------------------------------------------------------
Sequential::Sequential(const Sequential& other) : Layer(other) {
  for (const auto& [name, layer] : other.layers_) layers_.emplace_back(name, layer->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    layers_.clear();
    for (const auto& [name, layer] : other.layers_) layers_.emplace_back(name, layer->clone());
  }
  return *this;
}

Sequential& Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, bool training) {
  Tensor cur = x;
  for (auto& [name, layer] : layers_) cur = layer->forward(cur, training);
  return cur;
}

Tensor Sequential::backward(const Tensor& g, bool need_input_grad) {
  Tensor cur = g;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    cur = layers_[i].second->backward(cur, i > 0 || need_input_grad);
  }
  return cur;
}

Tensor Sequential::infer(const Tensor& x) const {
  Tensor cur = x;
  for (const auto& [name, layer] : layers_) cur = layer->infer(cur);
  return cur;
}

void Sequential::named_params(const std::string& prefix, std::vector<NamedParam>& out) {
  for (auto& [name, layer] : layers_) layer->named_params(prefix.empty() ? name : prefix + "." + name, out);
}

void Sequential::named_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  for (auto& [name, layer] : layers_) layer->named_buffers(prefix.empty() ? name : prefix + "." + name, out);
}

// ---------------------------------------------------------------------------
ResidualBlock::ResidualBlock(int in_channels, int out_channels, int stride, Rng& rng) {
  main_.emplace<Conv2d>("conv1", Conv2dOptions{in_channels, out_channels, 3, stride, 1, 1, false}, rng);
  main_.emplace<BatchNorm2d>("bn1", out_channels);
  main_.emplace<ReLU>("relu");
  main_.emplace<Conv2d>("conv2", Conv2dOptions{out_channels, out_channels, 3, 1, 1, 1, false}, rng);
  main_.emplace<BatchNorm2d>("bn2", out_channels);
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.emplace<Conv2d>("0", Conv2dOptions{in_channels, out_channels, 1, stride, 0, 1, false}, rng);
    shortcut_.emplace<BatchNorm2d>("1", out_channels);
  }
}

Tensor ResidualBlock::infer(const Tensor& x) const {
  Tensor y = main_.infer(x);
  Tensor s = shortcut_.empty() ? x : shortcut_.infer(x);
  require(y.same_shape(s), ErrorCode::kShapeMismatch, "residual branch shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) {
    const float v = y[i] + s[i];
    y[i] = v > 0.0f ? v : 0.0f;
  }
  return y;
}

Tensor ResidualBlock::forward(const Tensor& x, bool training) {
  Tensor y = main_.forward(x, training);
  Tensor s = shortcut_.empty() ? x : shortcut_.forward(x, training);
  require(y.same_shape(s), ErrorCode::kShapeMismatch, "residual branch shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) {
    const float v = y[i] + s[i];
    y[i] = v > 0.0f ? v : 0.0f;
  }
  cache_y_ = y;
  return y;
}

Tensor ResidualBlock::backward(const Tensor& g, bool) {
  Tensor gr(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) gr[i] = cache_y_[i] > 0.0f ? g[i] : 0.0f;
  Tensor dx = main_.backward(gr, true);
  if (shortcut_.empty()) {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gr[i];
  } else {
    Tensor ds = shortcut_.backward(gr, true);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
  }
  return dx;
}

void ResidualBlock::named_params(const std::string& prefix, std::vector<NamedParam>& out) {
  main_.named_params(prefix, out);
  shortcut_.named_params(prefix + ".downsample", out);
}

void ResidualBlock::named_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  main_.named_buffers(prefix, out);
  shortcut_.named_buffers(prefix + ".downsample", out);
}

// ---------------------------------------------------------------------------
std::vector<NamedParam> collect_params(Layer& root) {
  std::vector<NamedParam> out;
  root.named_params("", out);
  return out;
}

std::vector<NamedBuffer> collect_buffers(Layer& root) {
  std::vector<NamedBuffer> out;
  root.named_buffers("", out);
  return out;
}

std::size_t parameter_count(Layer& root) {
  std::size_t n = 0;
  for (const auto& p : collect_params(root)) n += p.param->value.size();
  return n;
}

void zero_grad(Layer& root) {
  for (auto& p : collect_params(root)) p.param->grad.fill(0.0f);
}

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, ErrorCode::kShapeMismatch, "softmax expects N x K logits");
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(k)));
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      out[i][j] = std::exp(static_cast<double>(row[j]) - mx);
      sum += out[i][j];
    }
    for (int j = 0; j < k; ++j) out[i][j] /= sum;
  }
  return out;
}

void keep_large_allocations() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace hsf::nn
