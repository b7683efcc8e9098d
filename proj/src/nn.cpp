// Copyright 2026 The DAD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dad/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "dad/error.hpp"

namespace dad::nn {
namespace {

Rng& row_rng(std::span<Rng> rngs, std::size_t row) {
  if (rngs.empty()) throw StateError("dropout is active but no random stream was supplied");
  return rngs.size() == 1 ? rngs[0] : rngs[row];
}

void require_rank(const Tensor& x, std::size_t rank, const char* layer) {
  if (x.rank() != rank) {
    throw InputError(std::string(layer) + ": expected rank " + std::to_string(rank) + " input, got " +
                     x.shape_string());
  }
}

void kaiming_uniform(std::span<double> values, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : values) v = uniform(rng, -bound, bound);
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out) : in_(in), out_(out), params_(in * out + out, 0.0) {}

std::string Linear::descriptor() const {
  return "linear " + std::to_string(in_) + " " + std::to_string(out_);
}

void Linear::initialize(Rng& rng) { kaiming_uniform(params_, in_, rng); }

Tensor Linear::forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const {
  require_rank(x, 2, "linear");
  if (x.dim(1) != in_) throw InputError("linear: expected " + std::to_string(in_) + " features");
  const std::size_t n = x.dim(0);
  Tensor out({n, out_});
  const double* w = params_.data();
  const double* b = params_.data() + in_ * out_;
  for (std::size_t r = 0; r < n; ++r) {
    double* o = out.data.data() + r * out_;
    std::copy(b, b + out_, o);
    const double* xr = x.data.data() + r * in_;
    for (std::size_t i = 0; i < in_; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wi = w + i * out_;
      for (std::size_t j = 0; j < out_; ++j) o[j] += xi * wi[j];
    }
  }
  if (cache) cache->input = x;
  return out;
}

Tensor Linear::backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const {
  const Tensor& x = cache.input;
  const std::size_t n = x.dim(0);
  Tensor gin({n, in_});
  const double* w = params_.data();
  double* gw = grad.data();
  double* gb = grad.data() + in_ * out_;
  for (std::size_t r = 0; r < n; ++r) {
    const double* g = grad_out.data.data() + r * out_;
    const double* xr = x.data.data() + r * in_;
    double* gi = gin.data.data() + r * in_;
    for (std::size_t i = 0; i < in_; ++i) {
      const double* wi = w + i * out_;
      double acc = 0.0;
      for (std::size_t j = 0; j < out_; ++j) acc += g[j] * wi[j];
      gi[i] = acc;
      const double xi = xr[i];
      if (xi != 0.0) {
        double* gwi = gw + i * out_;
        for (std::size_t j = 0; j < out_; ++j) gwi[j] += xi * g[j];
      }
    }
    for (std::size_t j = 0; j < out_; ++j) gb[j] += g[j];
  }
  return gin;
}

// ---------------------------------------------------------------- WeightNormLinear

WeightNormLinear::WeightNormLinear(std::size_t in, std::size_t out)
    : in_(in), out_(out), params_(in * out + 2 * out, 0.0) {}

std::string WeightNormLinear::descriptor() const {
  return "wnlinear " + std::to_string(in_) + " " + std::to_string(out_);
}

void WeightNormLinear::initialize(Rng& rng) {
  kaiming_uniform(std::span<double>(params_).subspan(0, in_ * out_), in_, rng);
  // g starts at |v| so the initial effective weight equals v.
  std::vector<double> norms;
  effective_weight(&norms);
  for (std::size_t o = 0; o < out_; ++o) params_[in_ * out_ + o] = norms[o];
  kaiming_uniform(std::span<double>(params_).subspan(in_ * out_ + out_, out_), in_, rng);
}

std::vector<double> WeightNormLinear::effective_weight(std::vector<double>* norms) const {
  std::vector<double> n(out_, 0.0);
  for (std::size_t i = 0; i < in_; ++i)
    for (std::size_t o = 0; o < out_; ++o) n[o] += params_[i * out_ + o] * params_[i * out_ + o];
  for (auto& v : n) v = std::sqrt(std::max(v, 1e-300));
  std::vector<double> w(in_ * out_);
  const double* g = params_.data() + in_ * out_;
  for (std::size_t i = 0; i < in_; ++i)
    for (std::size_t o = 0; o < out_; ++o) w[i * out_ + o] = g[o] * params_[i * out_ + o] / n[o];
  if (norms) *norms = std::move(n);
  return w;
}

Tensor WeightNormLinear::forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const {
  require_rank(x, 2, "wnlinear");
  if (x.dim(1) != in_) throw InputError("wnlinear: expected " + std::to_string(in_) + " features");
  const std::size_t n = x.dim(0);
  const auto w = effective_weight(nullptr);
  const double* b = params_.data() + in_ * out_ + out_;
  Tensor out({n, out_});
  for (std::size_t r = 0; r < n; ++r) {
    double* o = out.data.data() + r * out_;
    std::copy(b, b + out_, o);
    const double* xr = x.data.data() + r * in_;
    for (std::size_t i = 0; i < in_; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wi = w.data() + i * out_;
      for (std::size_t j = 0; j < out_; ++j) o[j] += xi * wi[j];
    }
  }
  if (cache) cache->input = x;
  return out;
}

Tensor WeightNormLinear::backward(const Tensor& grad_out, const Cache& cache,
                                  std::span<double> grad) const {
  const Tensor& x = cache.input;
  const std::size_t n = x.dim(0);
  std::vector<double> norms;
  const auto w = effective_weight(&norms);
  std::vector<double> gw(in_ * out_, 0.0);
  Tensor gin({n, in_});
  double* gb = grad.data() + in_ * out_ + out_;
  for (std::size_t r = 0; r < n; ++r) {
    const double* g = grad_out.data.data() + r * out_;
    const double* xr = x.data.data() + r * in_;
    double* gi = gin.data.data() + r * in_;
    for (std::size_t i = 0; i < in_; ++i) {
      const double* wi = w.data() + i * out_;
      double acc = 0.0;
      for (std::size_t j = 0; j < out_; ++j) acc += g[j] * wi[j];
      gi[i] = acc;
      for (std::size_t j = 0; j < out_; ++j) gw[i * out_ + j] += xr[i] * g[j];
    }
    for (std::size_t j = 0; j < out_; ++j) gb[j] += g[j];
  }
  // Chain through w = g v / |v|.
  const double* gscale = params_.data() + in_ * out_;
  double* gv = grad.data();
  double* gg = grad.data() + in_ * out_;
  for (std::size_t o = 0; o < out_; ++o) {
    double dot = 0.0;  // dW . v_hat
    for (std::size_t i = 0; i < in_; ++i) dot += gw[i * out_ + o] * params_[i * out_ + o] / norms[o];
    gg[o] += dot;
    const double s = gscale[o] / norms[o];
    for (std::size_t i = 0; i < in_; ++i) {
      const double vhat = params_[i * out_ + o] / norms[o];
      gv[i * out_ + o] += s * (gw[i * out_ + o] - dot * vhat);
    }
  }
  return gin;
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const {
  Tensor out = x;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  if (cache) cache->input = x;
  return out;
}

Tensor ReLU::backward(const Tensor& grad_out, const Cache& cache, std::span<double>) const {
  Tensor gin = grad_out;
  for (std::size_t i = 0; i < gin.data.size(); ++i)
    if (!(cache.input.data[i] > 0.0)) gin.data[i] = 0.0;
  return gin;
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

std::string Dropout::descriptor() const {
  std::ostringstream os;
  os.precision(17);
  os << "dropout " << rate_;
  return os.str();
}

Tensor Dropout::forward(const Tensor& x, const Mode& mode, std::span<Rng> rngs, Cache* cache) const {
  if (!mode.dropout || rate_ == 0.0) {
    if (cache) cache->aux = Tensor();
    return x;
  }
  Tensor out = x;
  Tensor mask(x.shape);
  const double keep_scale = 1.0 / (1.0 - rate_);
  const std::size_t rows = x.shape.empty() ? 0 : x.dim(0);
  const std::size_t per_row = rows ? x.size() / rows : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    Rng& rng = row_rng(rngs, r);
    for (std::size_t k = 0; k < per_row; ++k) {
      const std::size_t i = r * per_row + k;
      const double m = uniform01(rng) < rate_ ? 0.0 : keep_scale;
      mask.data[i] = m;
      out.data[i] *= m;
    }
  }
  if (cache) cache->aux = std::move(mask);
  return out;
}

Tensor Dropout::backward(const Tensor& grad_out, const Cache& cache, std::span<double>) const {
  if (cache.aux.data.empty()) return grad_out;
  Tensor gin = grad_out;
  for (std::size_t i = 0; i < gin.data.size(); ++i) gin.data[i] *= cache.aux.data[i];
  return gin;
}

// ---------------------------------------------------------------- BatchNorm1d

BatchNorm1d::BatchNorm1d(std::size_t features, double eps, double momentum)
    : features_(features), eps_(eps), momentum_(momentum), params_(2 * features), running_(2 * features) {
  std::fill(params_.begin(), params_.begin() + features, 1.0);
  std::fill(running_.begin() + features, running_.end(), 1.0);
}

std::string BatchNorm1d::descriptor() const { return "batchnorm1d " + std::to_string(features_); }

Tensor BatchNorm1d::forward(const Tensor& x, const Mode& mode, std::span<Rng>, Cache* cache) const {
  require_rank(x, 2, "batchnorm1d");
  if (x.dim(1) != features_) throw InputError("batchnorm1d: feature count mismatch");
  const std::size_t n = x.dim(0);
  const std::size_t f = features_;
  std::vector<double> mean(f, 0.0), var(f, 0.0);
  if (mode.batch_stats) {
    if (n < 2) throw InputError("batchnorm1d: batch statistics need at least two samples");
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < f; ++j) mean[j] += x.data[r * f + j];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < f; ++j) {
        const double d = x.data[r * f + j] - mean[j];
        var[j] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(n);
  } else {
    std::copy(running_.begin(), running_.begin() + f, mean.begin());
    std::copy(running_.begin() + f, running_.end(), var.begin());
  }
  std::vector<double> invstd(f);
  for (std::size_t j = 0; j < f; ++j) invstd[j] = 1.0 / std::sqrt(var[j] + eps_);
  Tensor xhat(x.shape);
  Tensor out(x.shape);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const double h = (x.data[r * f + j] - mean[j]) * invstd[j];
      xhat.data[r * f + j] = h;
      out.data[r * f + j] = params_[j] * h + params_[f + j];
    }
  if (cache) {
    cache->aux = std::move(xhat);
    cache->stats.clear();
    cache->stats.insert(cache->stats.end(), mean.begin(), mean.end());
    cache->stats.insert(cache->stats.end(), var.begin(), var.end());
    cache->stats.insert(cache->stats.end(), invstd.begin(), invstd.end());
    cache->index = {mode.batch_stats ? 1u : 0u, n};
  }
  return out;
}

Tensor BatchNorm1d::backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const {
  const std::size_t f = features_;
  const std::size_t n = cache.index.at(1);
  const bool batch = cache.index.at(0) == 1;
  const Tensor& xhat = cache.aux;
  const double* invstd = cache.stats.data() + 2 * f;
  Tensor gin(grad_out.shape);
  std::vector<double> sum_g(f, 0.0), sum_gh(f, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const double g = grad_out.data[r * f + j];
      sum_g[j] += g;
      sum_gh[j] += g * xhat.data[r * f + j];
    }
  for (std::size_t j = 0; j < f; ++j) {
    grad[j] += sum_gh[j];
    grad[f + j] += sum_g[j];
  }
  const double nn = static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const double gamma = params_[j];
      const double g = grad_out.data[r * f + j];
      if (batch) {
        gin.data[r * f + j] =
            gamma * invstd[j] / nn * (nn * g - sum_g[j] - xhat.data[r * f + j] * sum_gh[j]);
      } else {
        gin.data[r * f + j] = gamma * invstd[j] * g;
      }
    }
  return gin;
}

void BatchNorm1d::update_statistics(const Cache& cache) {
  if (cache.index.empty() || cache.index[0] != 1) return;
  const std::size_t f = features_;
  const double n = static_cast<double>(cache.index[1]);
  for (std::size_t j = 0; j < f; ++j) {
    running_[j] = (1.0 - momentum_) * running_[j] + momentum_ * cache.stats[j];
    const double unbiased = cache.stats[f + j] * n / (n - 1.0);
    running_[f + j] = (1.0 - momentum_) * running_[f + j] + momentum_ * unbiased;
  }
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding)
    : cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      pad_(padding),
      params_(out_channels * in_channels * kernel * kernel + out_channels, 0.0) {}

std::string Conv2d::descriptor() const {
  return "conv2d " + std::to_string(cin_) + " " + std::to_string(cout_) + " " + std::to_string(k_) +
         " " + std::to_string(pad_);
}

void Conv2d::initialize(Rng& rng) { kaiming_uniform(params_, cin_ * k_ * k_, rng); }

namespace {

// Column matrix (cin*k*k, oh*ow) for one sample.
void im2col(const double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, std::size_t oh, std::size_t ow, std::vector<double>& col) {
  col.assign(cin * k * k * oh * ow, 0.0);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col.data() + ((c * k + ky) * k + kx) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const long ix = static_cast<long>(xx + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            dst[y * ow + xx] = x[(c * h + iy) * w + ix];
          }
        }
      }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const {
  require_rank(x, 4, "conv2d");
  if (x.dim(1) != cin_) throw InputError("conv2d: channel mismatch");
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_) throw InputError("conv2d: input smaller than kernel");
  const std::size_t oh = h + 2 * pad_ - k_ + 1, ow = w + 2 * pad_ - k_ + 1;
  const std::size_t q = cin_ * k_ * k_, p = oh * ow;
  Tensor out({n, cout_, oh, ow});
  std::vector<double> col;
  const double* wt = params_.data();
  const double* b = params_.data() + cout_ * q;
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.data.data() + s * cin_ * h * w, cin_, h, w, k_, pad_, oh, ow, col);
    double* o = out.data.data() + s * cout_ * p;
    for (std::size_t co = 0; co < cout_; ++co) {
      double* orow = o + co * p;
      std::fill(orow, orow + p, b[co]);
      for (std::size_t j = 0; j < q; ++j) {
        const double wv = wt[co * q + j];
        const double* c = col.data() + j * p;
        for (std::size_t t = 0; t < p; ++t) orow[t] += wv * c[t];
      }
    }
  }
  if (cache) cache->input = x;
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const {
  const Tensor& x = cache.input;
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  const std::size_t q = cin_ * k_ * k_, p = oh * ow;
  Tensor gin(x.shape);
  std::vector<double> col, dcol(q * p);
  const double* wt = params_.data();
  double* gw = grad.data();
  double* gb = grad.data() + cout_ * q;
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.data.data() + s * cin_ * h * w, cin_, h, w, k_, pad_, oh, ow, col);
    const double* g = grad_out.data.data() + s * cout_ * p;
    std::fill(dcol.begin(), dcol.end(), 0.0);
    for (std::size_t co = 0; co < cout_; ++co) {
      const double* grow = g + co * p;
      double bsum = 0.0;
      for (std::size_t t = 0; t < p; ++t) bsum += grow[t];
      gb[co] += bsum;
      for (std::size_t j = 0; j < q; ++j) {
        const double* c = col.data() + j * p;
        double acc = 0.0;
        for (std::size_t t = 0; t < p; ++t) acc += grow[t] * c[t];
        gw[co * q + j] += acc;
        const double wv = wt[co * q + j];
        double* dc = dcol.data() + j * p;
        for (std::size_t t = 0; t < p; ++t) dc[t] += wv * grow[t];
      }
    }
    double* gi = gin.data.data() + s * cin_ * h * w;
    for (std::size_t c = 0; c < cin_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx) {
          const double* src = dcol.data() + ((c * k_ + ky) * k_ + kx) * p;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y + ky) - static_cast<long>(pad_);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const long ix = static_cast<long>(xx + kx) - static_cast<long>(pad_);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              gi[(c * h + iy) * w + ix] += src[y * ow + xx];
            }
          }
        }
  }
  return gin;
}

// ---------------------------------------------------------------- MaxPool2d

std::string MaxPool2d::descriptor() const { return "maxpool2d " + std::to_string(size_); }

Tensor MaxPool2d::forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const {
  require_rank(x, 4, "maxpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / size_, ow = w / size_;
  Tensor out({n, c, oh, ow});
  std::vector<std::size_t> arg(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* in = x.data.data() + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (y * size_) * w + xx * size_;
        for (std::size_t dy = 0; dy < size_; ++dy)
          for (std::size_t dx = 0; dx < size_; ++dx) {
            const std::size_t idx = (y * size_ + dy) * w + xx * size_ + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = plane * oh * ow + y * ow + xx;
        out.data[o] = in[best];
        arg[o] = plane * h * w + best;
      }
  }
  if (cache) {
    cache->input = Tensor(x.shape);
    cache->index = std::move(arg);
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out, const Cache& cache, std::span<double>) const {
  Tensor gin(cache.input.shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) gin.data[cache.index[o]] += grad_out.data[o];
  return gin;
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const {
  if (x.rank() < 1) throw InputError("flatten: empty shape");
  if (cache) cache->input = Tensor(x.shape);
  const std::size_t n = x.dim(0);
  return Tensor({n, n ? x.size() / n : 0}, x.data);
}

Tensor Flatten::backward(const Tensor& grad_out, const Cache& cache, std::span<double>) const {
  return Tensor(cache.input.shape, grad_out.data);
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Layer> make_layer(const std::string& descriptor) {
  std::istringstream is(descriptor);
  std::string kind;
  is >> kind;
  auto need = [&](auto& v) {
    if (!(is >> v)) throw DecodeError("malformed layer descriptor '" + descriptor + "'");
  };
  if (kind == "linear" || kind == "wnlinear") {
    std::size_t in = 0, out = 0;
    need(in);
    need(out);
    if (kind == "linear") return std::make_unique<Linear>(in, out);
    return std::make_unique<WeightNormLinear>(in, out);
  }
  if (kind == "relu") return std::make_unique<ReLU>();
  if (kind == "flatten") return std::make_unique<Flatten>();
  if (kind == "dropout") {
    double rate = 0.0;
    need(rate);
    return std::make_unique<Dropout>(rate);
  }
  if (kind == "batchnorm1d") {
    std::size_t f = 0;
    need(f);
    return std::make_unique<BatchNorm1d>(f);
  }
  if (kind == "conv2d") {
    std::size_t a = 0, b = 0, k = 0, p = 0;
    need(a);
    need(b);
    need(k);
    need(p);
    return std::make_unique<Conv2d>(a, b, k, p);
  }
  if (kind == "maxpool2d") {
    std::size_t s = 0;
    need(s);
    return std::make_unique<MaxPool2d>(s);
  }
  throw DecodeError("unknown layer kind '" + kind + "'");
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential tmp(other);
    layers_ = std::move(tmp.layers_);
  }
  return *this;
}

Sequential Sequential::from_descriptor(const std::string& descriptor) {
  Sequential net;
  std::istringstream is(descriptor);
  std::string token;
  while (std::getline(is, token, ';')) {
    if (!token.empty()) net.add(make_layer(token));
  }
  return net;
}

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Sequential& Sequential::insert(std::size_t position, std::unique_ptr<Layer> layer) {
  if (position > layers_.size()) throw InputError("layer insert position out of range");
  layers_.insert(layers_.begin() + static_cast<std::ptrdiff_t>(position), std::move(layer));
  return *this;
}

void Sequential::initialize(Rng& rng) {
  for (auto& l : layers_) l->initialize(rng);
}

Tensor Sequential::forward(const Tensor& x, const Mode& mode, std::span<Rng> rngs,
                           std::vector<Cache>* caches) const {
  return forward_range(x, 0, layers_.size(), mode, rngs, caches);
}

Tensor Sequential::forward_range(const Tensor& x, std::size_t begin, std::size_t end, const Mode& mode,
                                 std::span<Rng> rngs, std::vector<Cache>* caches) const {
  if (caches && caches->size() < layers_.size()) caches->resize(layers_.size());
  Tensor h = x;
  for (std::size_t i = begin; i < end && i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, mode, rngs, caches ? &(*caches)[i] : nullptr);
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out, const std::vector<Cache>& caches,
                            Gradients& grads) const {
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g, caches[i], grads[i]);
  }
  return g;
}

Gradients Sequential::zero_gradients() const {
  Gradients g(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) g[i].assign(layers_[i]->params().size(), 0.0);
  return g;
}

void Sequential::update_statistics(const std::vector<Cache>& caches) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->update_statistics(caches[i]);
}

std::string Sequential::descriptor() const {
  std::string out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) out += ';';
    out += layers_[i]->descriptor();
  }
  return out;
}

bool Sequential::has_dropout() const { return first_dropout() < layers_.size(); }

std::size_t Sequential::first_dropout() const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i]->is_dropout()) return i;
  return layers_.size();
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->params().size();
  return n;
}

std::uint64_t Sequential::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::span<const double> values) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
    for (std::size_t i = 0; i < values.size_bytes(); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& l : layers_) {
    const Layer& cl = *l;
    mix(cl.params());
    mix(cl.buffers());
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'D', 'A', 'D', 'N', 'E', 'T', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw DecodeError("truncated network file");
  return v;
}

void write_block(std::ostream& os, std::span<const double> values) {
  write_u64(os, values.size());
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

void read_block(std::istream& is, std::span<double> dst) {
  const auto n = read_u64(is);
  if (n != dst.size()) throw DecodeError("parameter block size does not match architecture");
  if (!is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size_bytes())))
    throw DecodeError("truncated parameter block");
}

}  // namespace

void Sequential::save(std::ostream& os) const {
  os.write(kMagic, sizeof(kMagic));
  const auto desc = descriptor();
  write_u64(os, desc.size());
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  for (const auto& l : layers_) {
    const Layer& cl = *l;
    write_block(os, cl.params());
    write_block(os, cl.buffers());
  }
  if (!os) throw IoError("failed to write network");
}

Sequential Sequential::load(std::istream& is) {
  char magic[sizeof(kMagic)] = {};
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DecodeError("not a network file (bad magic)");
  const auto len = read_u64(is);
  if (len > (1u << 20)) throw DecodeError("implausible descriptor length");
  std::string desc(len, '\0');
  if (!is.read(desc.data(), static_cast<std::streamsize>(len))) throw DecodeError("truncated descriptor");
  Sequential net = from_descriptor(desc);
  for (auto& l : net.layers_) {
    read_block(is, l->params());
    read_block(is, l->buffers());
  }
  return net;
}

// ---------------------------------------------------------------- Sgd

void Sgd::step(Sequential& net, const Gradients& grads, const std::vector<bool>& frozen) {
  if (velocity_.size() != net.size()) {
    velocity_.assign(net.size(), {});
    for (std::size_t i = 0; i < net.size(); ++i) velocity_[i].assign(net.layer(i).params().size(), 0.0);
  }
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (i < frozen.size() && frozen[i]) continue;
    auto p = net.layer(i).params();
    auto& v = velocity_[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum_ * v[k] + g[k] + weight_decay_ * p[k];
      p[k] -= lr_ * v[k];
    }
  }
}

// ---------------------------------------------------------------- losses

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto z = logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      p(r, c) = std::exp(z[c] - m);
      s += p(r, c);
    }
    for (std::size_t c = 0; c < logits.cols; ++c) p(r, c) /= s;
  }
  return p;
}

LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows) throw InputError("cross_entropy: label count mismatch");
  LossAndGrad out;
  out.grad = softmax(logits);
  const double n = static_cast<double>(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) throw InputError("cross_entropy: label out of range");
    const auto z = logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    out.loss += (std::log(s) + m - z[y]) / n;
    out.grad(r, y) -= 1.0;
    for (std::size_t c = 0; c < logits.cols; ++c) out.grad(r, c) /= n;
  }
  return out;
}

}  // namespace dad::nn
