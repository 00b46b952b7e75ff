// Straight-line reference implementations used as independent oracles in
// tests. These deliberately share no code with the library ops.
#ifndef GRES2NET_TESTS_ORACLES_HPP
#define GRES2NET_TESTS_ORACLES_HPP

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracles {

// out[m] = sum_k W[k, m] * x[k]  (W row-major in x out)
inline std::vector<double> matvec(const std::vector<double>& w, int64_t in_dim,
                                  int64_t out_dim, const std::vector<double>& x) {
  std::vector<double> out(static_cast<size_t>(out_dim), 0.0);
  for (int64_t m = 0; m < out_dim; ++m)
    for (int64_t k = 0; k < in_dim; ++k)
      out[static_cast<size_t>(m)] +=
          w[static_cast<size_t>(k * out_dim + m)] * x[static_cast<size_t>(k)];
  return out;
}

// Six-loop cross-correlation, accumulation ordered (c, ki, kj) per output
// cell. x is [C,H,W], kernels [O,C,k,k].
inline std::vector<double> conv2d(const std::vector<double>& x, int64_t cin,
                                  int64_t h, int64_t w,
                                  const std::vector<double>& kernels, int64_t cout,
                                  int64_t ksize, int64_t stride, int64_t pad) {
  const int64_t oh = (h + 2 * pad - ksize) / stride + 1;
  const int64_t ow = (w + 2 * pad - ksize) / stride + 1;
  std::vector<double> out(static_cast<size_t>(cout * oh * ow), 0.0);
  for (int64_t o = 0; o < cout; ++o)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int64_t c = 0; c < cin; ++c)
          for (int64_t ki = 0; ki < ksize; ++ki)
            for (int64_t kj = 0; kj < ksize; ++kj) {
              const int64_t si = i * stride - pad + ki;
              const int64_t sj = j * stride - pad + kj;
              if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
              acc += kernels[static_cast<size_t>(((o * cin + c) * ksize + ki) * ksize + kj)] *
                     x[static_cast<size_t>((c * h + si) * w + sj)];
            }
        out[static_cast<size_t>((o * oh + i) * ow + j)] = acc;
      }
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Spatial mean per channel of a [C,D,T] map.
inline std::vector<double> spatial_mean(const std::vector<double>& y, int64_t c,
                                        int64_t d, int64_t t) {
  std::vector<double> out(static_cast<size_t>(c), 0.0);
  for (int64_t ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (int64_t i = 0; i < d * t; ++i) s += y[static_cast<size_t>(ci * d * t + i)];
    out[static_cast<size_t>(ci)] = s / static_cast<double>(d * t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Straight-line block forward: entry 1x1 conv, split, gated group recursion,
// concat, exit 1x1 conv, SE rescale, shortcut. All math is re-derived here
// with plain loops over raw weight vectors (no batchnorm, no activations:
// bare convolutions as in the printed recursion).

enum class GateStyle { none, scg, mcg, mlcg };

struct GateWeights {
  // scg: fc [C x C]; mcg: fc [2C x C]; mlcg: fc1 [C x C/r], fc2 [C x C/r],
  // fc3 [2C/r x C]
  std::vector<double> fc, fc1, fc2, fc3;
};

struct BlockWeights {
  int64_t in_channels = 0, width = 0, scale = 0, reduction = 1, stride = 1;
  GateStyle gate = GateStyle::none;
  std::vector<double> entry_w;              // [width, in, 1, 1]
  std::vector<std::vector<double>> k_w;     // s-1 kernels [C, C, 3, 3]
  std::vector<GateWeights> gates;           // s-2 entries
  std::vector<double> exit_w;               // [width, width, 1, 1]
  bool has_se = false;
  int64_t se_hidden = 0;
  std::vector<double> se_w1, se_b1, se_w2, se_b2;
  bool has_shortcut_conv = false;
  std::vector<double> shortcut_w;           // [width, in, 1, 1]
  bool add_shortcut = true;
  bool has_exit = true;
};

inline std::vector<double> gate_vector(const GateWeights& gw, GateStyle style,
                                       int64_t c, int64_t reduction,
                                       const std::vector<double>& carried,
                                       const std::vector<double>& next,
                                       int64_t d, int64_t t) {
  const auto pooled_y = spatial_mean(carried, c, d, t);
  std::vector<double> lin;
  if (style == GateStyle::scg) {
    lin = matvec(gw.fc, c, c, pooled_y);
  } else if (style == GateStyle::mcg) {
    auto pooled_x = spatial_mean(next, c, d, t);
    std::vector<double> joint = pooled_y;
    joint.insert(joint.end(), pooled_x.begin(), pooled_x.end());
    lin = matvec(gw.fc, 2 * c, c, joint);
  } else {
    const int64_t latent = c / reduction;
    auto pooled_x = spatial_mean(next, c, d, t);
    auto l1 = matvec(gw.fc1, c, latent, pooled_y);
    auto l2 = matvec(gw.fc2, c, latent, pooled_x);
    std::vector<double> joint;
    for (double v : l1) joint.push_back(relu(v));
    for (double v : l2) joint.push_back(relu(v));
    lin = matvec(gw.fc3, 2 * latent, c, joint);
  }
  for (auto& v : lin) v = sigmoid(v);
  return lin;
}

inline std::vector<double> block_forward(const BlockWeights& bw,
                                         const std::vector<double>& x, int64_t d,
                                         int64_t t) {
  const int64_t c = bw.width / bw.scale;
  const int64_t od = (d - 1) / bw.stride + 1;
  const int64_t ot = (t - 1) / bw.stride + 1;
  auto h = conv2d(x, bw.in_channels, d, t, bw.entry_w, bw.width, 1, bw.stride, 0);

  // split into s groups of c channels
  std::vector<std::vector<double>> groups(static_cast<size_t>(bw.scale));
  for (int64_t g = 0; g < bw.scale; ++g)
    groups[static_cast<size_t>(g)] =
        std::vector<double>(h.begin() + g * c * od * ot,
                            h.begin() + (g + 1) * c * od * ot);

  std::vector<std::vector<double>> y(static_cast<size_t>(bw.scale));
  y[0] = groups[0];
  for (int64_t g = 1; g < bw.scale; ++g) {
    std::vector<double> input = groups[static_cast<size_t>(g)];
    if (g >= 2) {
      std::vector<double> carried = y[static_cast<size_t>(g - 1)];
      if (bw.gate != GateStyle::none) {
        auto a = gate_vector(bw.gates[static_cast<size_t>(g - 2)], bw.gate, c,
                             bw.reduction, carried, groups[static_cast<size_t>(g)],
                             od, ot);
        for (int64_t ci = 0; ci < c; ++ci)
          for (int64_t i = 0; i < od * ot; ++i)
            carried[static_cast<size_t>(ci * od * ot + i)] *=
                a[static_cast<size_t>(ci)];
      }
      for (size_t i = 0; i < input.size(); ++i) input[i] += carried[i];
    }
    y[static_cast<size_t>(g)] =
        conv2d(input, c, od, ot, bw.k_w[static_cast<size_t>(g - 1)], c, 3, 1, 1);
  }

  std::vector<double> merged;
  for (const auto& part : y) merged.insert(merged.end(), part.begin(), part.end());
  if (bw.has_exit)
    merged = conv2d(merged, bw.width, od, ot, bw.exit_w, bw.width, 1, 1, 0);

  if (bw.has_se) {
    auto pooled = spatial_mean(merged, bw.width, od, ot);
    auto hid = matvec(bw.se_w1, bw.width, bw.se_hidden, pooled);
    for (int64_t i = 0; i < bw.se_hidden; ++i)
      hid[static_cast<size_t>(i)] =
          relu(hid[static_cast<size_t>(i)] + bw.se_b1[static_cast<size_t>(i)]);
    auto gate = matvec(bw.se_w2, bw.se_hidden, bw.width, hid);
    for (int64_t i = 0; i < bw.width; ++i)
      gate[static_cast<size_t>(i)] =
          sigmoid(gate[static_cast<size_t>(i)] + bw.se_b2[static_cast<size_t>(i)]);
    for (int64_t ci = 0; ci < bw.width; ++ci)
      for (int64_t i = 0; i < od * ot; ++i)
        merged[static_cast<size_t>(ci * od * ot + i)] *= gate[static_cast<size_t>(ci)];
  }

  if (bw.add_shortcut) {
    std::vector<double> sc;
    if (bw.has_shortcut_conv)
      sc = conv2d(x, bw.in_channels, d, t, bw.shortcut_w, bw.width, 1, bw.stride, 0);
    else
      sc = x;
    for (size_t i = 0; i < merged.size(); ++i) merged[i] += sc[i];
  }
  return merged;
}

}  // namespace oracles

#endif  // GRES2NET_TESTS_ORACLES_HPP
