#ifndef GRES2NET_GATES_HPP
#define GRES2NET_GATES_HPP

#include <string>

#include "gres2net/layers.hpp"

namespace gres2net {

// The three channel-wise gating mechanisms. All gate projections are
// bias-free, matching the printed sigma[W^T F_ap(.)] forms exactly.
enum class GateKind { none, scg, mcg, mlcg };

inline const char* gate_kind_name(GateKind k) {
  switch (k) {
    case GateKind::none: return "none";
    case GateKind::scg: return "scg";
    case GateKind::mcg: return "mcg";
    case GateKind::mlcg: return "mlcg";
  }
  return "?";
}

inline GateKind gate_kind_from_name(const std::string& name) {
  if (name == "none" || name == "res2net") return GateKind::none;
  if (name == "scg") return GateKind::scg;
  if (name == "mcg") return GateKind::mcg;
  if (name == "mlcg") return GateKind::mlcg;
  throw ConfigError(format_msg("unknown gate kind '", name, "'"));
}

// Learnable parameters per gate, channels C and reduction r:
//   SCG  C^2, MCG 2C^2, MLCG C^2/r + C^2/r + (2C/r)C = 4C^2/r.
inline int64_t gate_param_count(GateKind kind, int64_t channels, int64_t reduction) {
  switch (kind) {
    case GateKind::none:
      return 0;
    case GateKind::scg:
      return channels * channels;
    case GateKind::mcg:
      return 2 * channels * channels;
    case GateKind::mlcg: {
      GRES_CHECK_CONFIG(reduction >= 1 && channels % reduction == 0,
                        "mlcg: reduction ", reduction, " must divide channels ",
                        channels);
      const int64_t latent = channels / reduction;
      return channels * latent + channels * latent + 2 * latent * channels;
    }
  }
  return 0;
}

template <class S>
struct GateModule {
  GateKind kind = GateKind::none;
  int64_t channels = 0;
  int64_t reduction = 4;
  Dense<S> fc;              // scg: C x C, mcg: 2C x C
  Dense<S> fc1, fc2, fc3;   // mlcg latent projections and output

  static GateModule create(GateKind kind, int64_t channels, int64_t reduction,
                           Rng& rng) {
    GRES_CHECK_CONFIG(kind != GateKind::none, "gate module requires a gate kind");
    GateModule g;
    g.kind = kind;
    g.channels = channels;
    g.reduction = reduction;
    switch (kind) {
      case GateKind::scg:
        g.fc = Dense<S>::create(channels, channels, false, rng);
        break;
      case GateKind::mcg:
        g.fc = Dense<S>::create(2 * channels, channels, false, rng);
        break;
      case GateKind::mlcg: {
        GRES_CHECK_CONFIG(reduction >= 1 && channels % reduction == 0,
                          "mlcg: reduction ", reduction, " must divide channels ",
                          channels);
        const int64_t latent = channels / reduction;
        g.fc1 = Dense<S>::create(channels, latent, false, rng);
        g.fc2 = Dense<S>::create(channels, latent, false, rng);
        g.fc3 = Dense<S>::create(2 * latent, channels, false, rng);
        break;
      }
      case GateKind::none:
        break;
    }
    return g;
  }

  // carried = y_i (the group being rescaled), reference = x_{i+1} (the next
  // group). SCG ignores the reference. Returns the gate vector, [C] for a
  // [C,D,T] input or [N,C] for batched maps.
  Tensor<S> forward(const Tensor<S>& carried, const Tensor<S>& reference) const {
    check_map(carried, "carried group");
    auto pooled_y = avg_pool_spatial(carried);
    switch (kind) {
      case GateKind::scg:
        return sigmoid(fc.forward(pooled_y));
      case GateKind::mcg: {
        check_map(reference, "reference group");
        auto pooled_x = avg_pool_spatial(reference);
        auto joint = concat_channels<S>({pooled_y, pooled_x});
        return sigmoid(fc.forward(joint));
      }
      case GateKind::mlcg: {
        check_map(reference, "reference group");
        auto latent_y = relu(fc1.forward(pooled_y));
        auto latent_x = relu(fc2.forward(avg_pool_spatial(reference)));
        auto joint = concat_channels<S>({latent_y, latent_x});
        return sigmoid(fc3.forward(joint));
      }
      case GateKind::none:
        break;
    }
    throw Error("gate module has no kind");
  }

  int64_t param_count() const {
    switch (kind) {
      case GateKind::scg:
      case GateKind::mcg:
        return fc.param_count();
      case GateKind::mlcg:
        return fc1.param_count() + fc2.param_count() + fc3.param_count();
      case GateKind::none:
        return 0;
    }
    return 0;
  }

  template <class F>
  void visit_params(const std::string& prefix, F&& fn) {
    switch (kind) {
      case GateKind::scg:
      case GateKind::mcg:
        fc.visit_params(prefix + ".fc", fn);
        break;
      case GateKind::mlcg:
        fc1.visit_params(prefix + ".fc1", fn);
        fc2.visit_params(prefix + ".fc2", fn);
        fc3.visit_params(prefix + ".fc3", fn);
        break;
      case GateKind::none:
        break;
    }
  }

 private:
  void check_map(const Tensor<S>& x, const char* what) const {
    GRES_CHECK_SHAPE(x.rank() == 3 || x.rank() == 4, "gate: ", what,
                     " must be [C,D,T] or [N,C,D,T], got ", shape_str(x.shape()));
    GRES_CHECK_SHAPE(x.dim(channel_axis(x.rank())) == channels, "gate: ", what,
                     " has ", x.dim(channel_axis(x.rank())), " channels, expected ",
                     channels);
  }
};

// Free-function forms mirroring the per-mechanism equations.
template <class S>
Tensor<S> scg_gate(const GateModule<S>& gate, const Tensor<S>& group) {
  GRES_CHECK(gate.kind == GateKind::scg, "scg_gate: module kind mismatch");
  return gate.forward(group, Tensor<S>());
}

template <class S>
Tensor<S> mcg_gate(const GateModule<S>& gate, const Tensor<S>& group,
                   const Tensor<S>& next_group) {
  GRES_CHECK(gate.kind == GateKind::mcg, "mcg_gate: module kind mismatch");
  return gate.forward(group, next_group);
}

template <class S>
Tensor<S> mlcg_gate(const GateModule<S>& gate, const Tensor<S>& group,
                    const Tensor<S>& next_group) {
  GRES_CHECK(gate.kind == GateKind::mlcg, "mlcg_gate: module kind mismatch");
  return gate.forward(group, next_group);
}

}  // namespace gres2net

#endif  // GRES2NET_GATES_HPP
