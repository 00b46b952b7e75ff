#ifndef GRES2NET_LAYERS_HPP
#define GRES2NET_LAYERS_HPP

#include <optional>
#include <string>

#include "gres2net/ops.hpp"

namespace gres2net {

enum class Mode { train, eval };

// Fully-connected layer computing x . W (+ bias). With bias disabled the
// layer is exactly the W^T x form of the gate equations and holds
// in_dim * out_dim parameters.
template <class S>
struct Dense {
  Tensor<S> weight;  // [in, out]
  std::optional<Tensor<S>> bias;

  static Dense create(int64_t in_dim, int64_t out_dim, bool with_bias, Rng& rng) {
    Dense d;
    d.weight = Tensor<S>::kaiming_uniform({in_dim, out_dim}, in_dim, rng);
    if (with_bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
      std::vector<S> b(static_cast<size_t>(out_dim));
      for (auto& v : b) v = static_cast<S>(rng.uniform(-bound, bound));
      d.bias = Tensor<S>({out_dim}, std::move(b), true);
    }
    return d;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    auto out = linear(x, weight);
    if (bias) out = add(out, *bias);
    return out;
  }

  int64_t in_dim() const { return weight.dim(0); }
  int64_t out_dim() const { return weight.dim(1); }
  int64_t param_count() const {
    return weight.numel() + (bias ? bias->numel() : 0);
  }

  template <class F>
  void visit_params(const std::string& prefix, F&& fn) {
    fn(prefix + ".w", weight);
    if (bias) fn(prefix + ".b", *bias);
  }
};

// Per-channel batch normalization over (batch, spatial) positions. Training
// mode normalizes with batch statistics and updates the running estimates;
// eval mode is a deterministic affine map using the running estimates.
template <class S>
struct BatchNorm {
  Tensor<S> gamma, beta;              // learnable, [C]
  Tensor<S> running_mean, running_var;  // buffers, [C]
  S momentum = S(0.1);
  S eps = S(1e-5);

  static BatchNorm create(int64_t channels) {
    BatchNorm bn;
    bn.gamma = Tensor<S>::full({channels}, S(1), true);
    bn.beta = Tensor<S>::zeros({channels}, true);
    bn.running_mean = Tensor<S>::zeros({channels});
    bn.running_var = Tensor<S>::full({channels}, S(1));
    return bn;
  }

  Tensor<S> forward(const Tensor<S>& x, Mode mode) {
    GRES_CHECK_SHAPE(x.rank() == 3 || x.rank() == 4,
                     "batchnorm: input must be [C,D,T] or [N,C,D,T], got ",
                     shape_str(x.shape()));
    const bool batched = x.rank() == 4;
    const int64_t batch = batched ? x.dim(0) : 1;
    const int64_t channels = batched ? x.dim(1) : x.dim(0);
    GRES_CHECK_SHAPE(channels == gamma.dim(0), "batchnorm: ", channels,
                     " channels, state has ", gamma.dim(0));
    const int64_t spatial = x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
    const int64_t m = batch * spatial;
    GRES_CHECK(m >= 1, "batchnorm: empty normalization set");

    std::vector<S> mean(static_cast<size_t>(channels), S(0));
    std::vector<S> inv_std(static_cast<size_t>(channels), S(0));
    const auto xv = x.data();

    if (mode == Mode::train) {
      std::vector<S> var(static_cast<size_t>(channels), S(0));
      for (int64_t c = 0; c < channels; ++c) {
        S acc = S(0);
        for (int64_t n = 0; n < batch; ++n) {
          const S* p = xv.data() + (n * channels + c) * spatial;
          for (int64_t i = 0; i < spatial; ++i) acc += p[i];
        }
        const S mu = acc / static_cast<S>(m);
        S vacc = S(0);
        for (int64_t n = 0; n < batch; ++n) {
          const S* p = xv.data() + (n * channels + c) * spatial;
          for (int64_t i = 0; i < spatial; ++i) {
            const S d = p[i] - mu;
            vacc += d * d;
          }
        }
        mean[static_cast<size_t>(c)] = mu;
        var[static_cast<size_t>(c)] = vacc / static_cast<S>(m);
        inv_std[static_cast<size_t>(c)] =
            S(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);
      }
      // Running estimates use the unbiased variance, as is conventional.
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      const S unbias =
          m > 1 ? static_cast<S>(m) / static_cast<S>(m - 1) : S(1);
      for (int64_t c = 0; c < channels; ++c) {
        rm[c] = (S(1) - momentum) * rm[c] + momentum * mean[static_cast<size_t>(c)];
        rv[c] = (S(1) - momentum) * rv[c] +
                momentum * var[static_cast<size_t>(c)] * unbias;
      }
    } else {
      const auto rm = running_mean.data();
      const auto rv = running_var.data();
      for (int64_t c = 0; c < channels; ++c) {
        mean[static_cast<size_t>(c)] = rm[c];
        inv_std[static_cast<size_t>(c)] = S(1) / std::sqrt(rv[c] + eps);
      }
    }

    Tensor<S> out = Tensor<S>::zeros(x.shape());
    auto ov = out.mutable_data();
    std::vector<S> xhat(static_cast<size_t>(x.numel()));
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (int64_t n = 0; n < batch; ++n)
      for (int64_t c = 0; c < channels; ++c) {
        const int64_t base = (n * channels + c) * spatial;
        const S mu = mean[static_cast<size_t>(c)];
        const S istd = inv_std[static_cast<size_t>(c)];
        for (int64_t i = 0; i < spatial; ++i) {
          const S h = (xv[base + i] - mu) * istd;
          xhat[static_cast<size_t>(base + i)] = h;
          ov[base + i] = gv[c] * h + bv[c];
        }
      }

    auto* tape = Tape<S>::current();
    if (tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
      out.set_requires_grad(true);
      const bool train_stats = mode == Mode::train;
      tape->record([x = x, gamma = gamma, beta = beta, out, batch, channels,
                    spatial, m, train_stats, inv_std = std::move(inv_std),
                    xhat = std::move(xhat)]() mutable {
        if (!out.has_grad()) return;
        const auto g = out.grad();
        const auto gv2 = gamma.data();
        for (int64_t c = 0; c < channels; ++c) {
          S gsum = S(0), gxhat = S(0);
          for (int64_t n = 0; n < batch; ++n) {
            const int64_t base = (n * channels + c) * spatial;
            for (int64_t i = 0; i < spatial; ++i) {
              gsum += g[base + i];
              gxhat += g[base + i] * xhat[static_cast<size_t>(base + i)];
            }
          }
          if (beta.requires_grad()) beta.grad_mut()[c] += gsum;
          if (gamma.requires_grad()) gamma.grad_mut()[c] += gxhat;
          if (x.requires_grad()) {
            auto gx = x.grad_mut();
            const S scale = gv2[c] * inv_std[static_cast<size_t>(c)];
            if (train_stats) {
              const S mg = gsum / static_cast<S>(m);
              const S mgx = gxhat / static_cast<S>(m);
              for (int64_t n = 0; n < batch; ++n) {
                const int64_t base = (n * channels + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i)
                  gx[base + i] +=
                      scale * (g[base + i] - mg -
                               xhat[static_cast<size_t>(base + i)] * mgx);
              }
            } else {
              for (int64_t n = 0; n < batch; ++n) {
                const int64_t base = (n * channels + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i)
                  gx[base + i] += scale * g[base + i];
              }
            }
          }
        }
      });
    }
    return out;
  }

  int64_t param_count() const { return gamma.numel() + beta.numel(); }

  template <class F>
  void visit_params(const std::string& prefix, F&& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
  template <class F>
  void visit_buffers(const std::string& prefix, F&& fn) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
};

// Convolution layer with optional bias and optional batchnorm. The activation
// that usually follows is applied by the caller.
template <class S>
struct ConvLayer {
  Tensor<S> weight;  // [out, in, k, k]
  std::optional<Tensor<S>> bias;
  int64_t stride = 1;
  std::optional<BatchNorm<S>> norm;

  static ConvLayer create(int64_t in_ch, int64_t out_ch, int64_t ksize,
                          int64_t stride, bool with_bias, bool with_bn, Rng& rng) {
    ConvLayer layer;
    layer.weight = Tensor<S>::kaiming_uniform({out_ch, in_ch, ksize, ksize},
                                              in_ch * ksize * ksize, rng);
    if (with_bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * ksize * ksize));
      std::vector<S> b(static_cast<size_t>(out_ch));
      for (auto& v : b) v = static_cast<S>(rng.uniform(-bound, bound));
      layer.bias = Tensor<S>({out_ch}, std::move(b), true);
    }
    layer.stride = stride;
    if (with_bn) layer.norm = BatchNorm<S>::create(out_ch);
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x, Mode mode) {
    auto out = conv2d(x, weight, {.stride = stride},
                      bias ? &bias.value() : nullptr);
    if (norm) out = norm->forward(out, mode);
    return out;
  }

  int64_t param_count() const {
    return weight.numel() + (bias ? bias->numel() : 0) +
           (norm ? norm->param_count() : 0);
  }

  template <class F>
  void visit_params(const std::string& prefix, F&& fn) {
    fn(prefix + ".w", weight);
    if (bias) fn(prefix + ".b", *bias);
    if (norm) norm->visit_params(prefix + ".bn", fn);
  }
  template <class F>
  void visit_buffers(const std::string& prefix, F&& fn) {
    if (norm) norm->visit_buffers(prefix + ".bn", fn);
  }
};

// Squeeze-and-excitation: rescales channels by sigmoid(W2 relu(W1 F_ap(x))).
// Both dense layers carry biases; the channel gate lies strictly in (0,1).
template <class S>
struct SEBlock {
  Dense<S> fc1, fc2;
  int64_t reduction = 4;

  static SEBlock create(int64_t channels, int64_t reduction, Rng& rng) {
    GRES_CHECK_CONFIG(reduction >= 1 && channels % reduction == 0,
                      "se block: reduction ", reduction,
                      " must divide channel count ", channels);
    SEBlock se;
    se.reduction = reduction;
    se.fc1 = Dense<S>::create(channels, channels / reduction, /*with_bias=*/true, rng);
    se.fc2 = Dense<S>::create(channels / reduction, channels, /*with_bias=*/true, rng);
    return se;
  }

  Tensor<S> gate(const Tensor<S>& x) const {
    auto pooled = avg_pool_spatial(x);
    return sigmoid(fc2.forward(relu(fc1.forward(pooled))));
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    GRES_CHECK_SHAPE(x.rank() == 3 || x.rank() == 4,
                     "se block: input must be [C,D,T] or [N,C,D,T]");
    GRES_CHECK_SHAPE(x.dim(channel_axis(x.rank())) == fc1.in_dim(),
                     "se block: channel mismatch, got ",
                     x.dim(channel_axis(x.rank())), " expected ", fc1.in_dim());
    return channel_mul(x, gate(x));
  }

  int64_t param_count() const { return fc1.param_count() + fc2.param_count(); }

  template <class F>
  void visit_params(const std::string& prefix, F&& fn) {
    fc1.visit_params(prefix + ".fc1", fn);
    fc2.visit_params(prefix + ".fc2", fn);
  }
};

}  // namespace gres2net

#endif  // GRES2NET_LAYERS_HPP
