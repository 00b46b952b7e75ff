#ifndef GRES2NET_BLOCKS_HPP
#define GRES2NET_BLOCKS_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gres2net/gates.hpp"

namespace gres2net {

struct BlockConfig {
  int64_t in_channels = 16;
  int64_t width = 16;  // output channels; must divide by scale
  int64_t stride = 1;
  int64_t scale = 4;
  GateKind gate = GateKind::none;
  int64_t reduction = 4;     // MLCG latent reduction
  bool use_se = true;
  int64_t se_reduction = 4;
  bool use_bn = true;
  bool use_relu = true;
  bool final_relu = true;
  // Structural toggles used by equation-level tests and ablations.
  bool use_exit = true;
  bool use_shortcut = true;

  void validate() const {
    GRES_CHECK_CONFIG(scale >= 2, "block: scale must be >= 2, got ", scale);
    GRES_CHECK_CONFIG(width % scale == 0, "block: width ", width,
                      " not divisible by scale ", scale);
    GRES_CHECK_CONFIG(stride >= 1, "block: stride must be >= 1");
    if (gate == GateKind::mlcg) {
      const int64_t group = width / scale;
      GRES_CHECK_CONFIG(group % reduction == 0, "block: mlcg reduction ",
                        reduction, " must divide group channels ", group);
    }
    if (use_se)
      GRES_CHECK_CONFIG(width % se_reduction == 0, "block: se reduction ",
                        se_reduction, " must divide width ", width);
  }
};

// Per-forward options. gate_override replaces every computed gate with a
// constant (1 reduces the gated block to the plain Res2Net recursion).
struct ForwardOptions {
  Mode mode = Mode::eval;
  std::optional<double> gate_override;
};

// Realized gate vectors of one block forward, in group order (a_2 .. a_{s-1}).
template <class S>
struct GateTrace {
  std::vector<std::vector<S>> per_gate;
};

// Multi-scale residual block: entry 1x1 conv, grouped 3x3 convs with
// (optionally gated) carries between groups, concat, exit 1x1 conv, SE block,
// outer shortcut.
template <class S>
struct Res2NetBlock {
  BlockConfig cfg;
  ConvLayer<S> entry;
  std::vector<ConvLayer<S>> convs;        // K_2 .. K_s
  std::vector<GateModule<S>> gates;       // for carries into groups 3 .. s
  std::optional<ConvLayer<S>> exit_conv;  // 1x1, width -> width
  std::optional<SEBlock<S>> se;
  std::optional<ConvLayer<S>> shortcut;   // 1x1 projection when shapes differ

  static Res2NetBlock create(const BlockConfig& cfg, Rng& rng) {
    cfg.validate();
    Res2NetBlock b;
    b.cfg = cfg;
    const int64_t group = cfg.width / cfg.scale;
    b.entry = ConvLayer<S>::create(cfg.in_channels, cfg.width, 1, cfg.stride,
                                   /*bias=*/false, cfg.use_bn, rng);
    for (int64_t i = 2; i <= cfg.scale; ++i)
      b.convs.push_back(
          ConvLayer<S>::create(group, group, 3, 1, false, cfg.use_bn, rng));
    if (cfg.gate != GateKind::none)
      for (int64_t i = 0; i < cfg.scale - 2; ++i)
        b.gates.push_back(GateModule<S>::create(cfg.gate, group, cfg.reduction, rng));
    if (cfg.use_exit)
      b.exit_conv =
          ConvLayer<S>::create(cfg.width, cfg.width, 1, 1, false, cfg.use_bn, rng);
    if (cfg.use_se) b.se = SEBlock<S>::create(cfg.width, cfg.se_reduction, rng);
    if (cfg.use_shortcut && (cfg.in_channels != cfg.width || cfg.stride != 1))
      b.shortcut = ConvLayer<S>::create(cfg.in_channels, cfg.width, 1, cfg.stride,
                                        false, cfg.use_bn, rng);
    return b;
  }

  Tensor<S> forward(const Tensor<S>& x, const ForwardOptions& opts = {},
                    GateTrace<S>* trace = nullptr) {
    auto h = entry.forward(x, opts.mode);
    if (cfg.use_relu) h = relu(h);
    auto groups = split_channels(h, cfg.scale);

    // y_1 = x_1; y_2 = K_2(x_2); y_i = K_i(x_i + z_{i-1}) for 2 < i <= s,
    // where z_{i-1} is the (gated) previous group.
    std::vector<Tensor<S>> y(groups.size());
    y[0] = groups[0];
    for (int64_t g = 1; g < cfg.scale; ++g) {
      Tensor<S> input = groups[static_cast<size_t>(g)];
      if (g >= 2) {
        Tensor<S> carried = y[static_cast<size_t>(g - 1)];
        if (cfg.gate != GateKind::none) {
          Tensor<S> a = gate_vector(carried, groups[static_cast<size_t>(g)],
                                    static_cast<size_t>(g - 2), opts);
          if (trace)
            trace->per_gate.emplace_back(a.data().begin(), a.data().end());
          carried = channel_mul(carried, a);
        }
        input = add(input, carried);
      }
      auto out = convs[static_cast<size_t>(g - 1)].forward(input, opts.mode);
      if (cfg.use_relu) out = relu(out);
      y[static_cast<size_t>(g)] = std::move(out);
    }

    auto merged = concat_channels(y);
    if (exit_conv) merged = exit_conv->forward(merged, opts.mode);
    if (se) merged = se->forward(merged);
    if (cfg.use_shortcut) {
      auto sc = shortcut ? shortcut->forward(x, opts.mode) : x;
      merged = add(merged, sc);
    }
    if (cfg.use_relu && cfg.final_relu) merged = relu(merged);
    return merged;
  }

  int64_t param_count() const {
    int64_t n = entry.param_count();
    for (const auto& c : convs) n += c.param_count();
    for (const auto& g : gates) n += g.param_count();
    if (exit_conv) n += exit_conv->param_count();
    if (se) n += se->param_count();
    if (shortcut) n += shortcut->param_count();
    return n;
  }

  template <class F>
  void visit_params(const std::string& prefix, F&& fn) {
    entry.visit_params(prefix + ".entry", fn);
    for (size_t i = 0; i < convs.size(); ++i)
      convs[i].visit_params(prefix + ".k" + std::to_string(i + 2), fn);
    for (size_t i = 0; i < gates.size(); ++i)
      gates[i].visit_params(prefix + ".gate" + std::to_string(i + 2), fn);
    if (exit_conv) exit_conv->visit_params(prefix + ".exit", fn);
    if (se) se->visit_params(prefix + ".se", fn);
    if (shortcut) shortcut->visit_params(prefix + ".shortcut", fn);
  }
  template <class F>
  void visit_buffers(const std::string& prefix, F&& fn) {
    entry.visit_buffers(prefix + ".entry", fn);
    for (size_t i = 0; i < convs.size(); ++i)
      convs[i].visit_buffers(prefix + ".k" + std::to_string(i + 2), fn);
    if (exit_conv) exit_conv->visit_buffers(prefix + ".exit", fn);
    if (shortcut) shortcut->visit_buffers(prefix + ".shortcut", fn);
  }

 private:
  Tensor<S> gate_vector(const Tensor<S>& carried, const Tensor<S>& next_group,
                        size_t gate_idx, const ForwardOptions& opts) {
    if (opts.gate_override) {
      const int64_t group = cfg.width / cfg.scale;
      const S v = static_cast<S>(*opts.gate_override);
      if (carried.rank() == 4)
        return Tensor<S>::full({carried.dim(0), group}, v);
      return Tensor<S>::full({group}, v);
    }
    return gates[gate_idx].forward(carried, next_group);
  }
};

struct StageConfig {
  int64_t blocks = 2;
  int64_t width = 16;
  int64_t stride = 2;
};

struct BackboneConfig {
  int64_t input_bins = 432;
  int64_t input_frames = 400;
  int64_t input_pool = 1;  // average-pool factor applied before the stem
  int64_t stem_channels = 16;
  int64_t stem_stride = 1;
  std::vector<StageConfig> stages = {{2, 16, 2}, {2, 32, 2}, {2, 64, 2}};
  int64_t scale = 4;
  GateKind gate = GateKind::none;
  int64_t reduction = 4;
  bool use_se = true;
  int64_t se_reduction = 4;
  bool use_bn = true;
  bool use_relu = true;
  bool final_relu = true;
  int64_t num_classes = 2;

  void validate() const {
    GRES_CHECK_CONFIG(!stages.empty(), "backbone: at least one stage required");
    GRES_CHECK_CONFIG(input_bins >= 1 && input_frames >= 1 && input_pool >= 1 &&
                          stem_channels >= 1 && stem_stride >= 1,
                      "backbone: invalid stem configuration");
    for (const auto& st : stages) {
      GRES_CHECK_CONFIG(st.blocks >= 1, "backbone: stage needs >= 1 block");
      BlockConfig bc = block_config(st.width, st.width, st.stride);
      bc.validate();
    }
    GRES_CHECK_CONFIG(num_classes >= 2, "backbone: num_classes must be >= 2");
  }

  BlockConfig block_config(int64_t in_ch, int64_t width, int64_t stride) const {
    BlockConfig bc;
    bc.in_channels = in_ch;
    bc.width = width;
    bc.stride = stride;
    bc.scale = scale;
    bc.gate = gate;
    bc.reduction = reduction;
    bc.use_se = use_se;
    bc.se_reduction = se_reduction;
    bc.use_bn = use_bn;
    bc.use_relu = use_relu;
    bc.final_relu = final_relu;
    return bc;
  }

  std::string to_text() const;
  static BackboneConfig from_text(const std::string& text);
};

// Stem conv, stages of (CG-)Res2Net blocks, global average pooling, and a
// dense classifier producing num_classes logits.
template <class S>
class Backbone {
 public:
  static Backbone build(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    Backbone net;
    net.cfg_ = cfg;
    Rng rng(seed);
    net.stem_ = ConvLayer<S>::create(1, cfg.stem_channels, 3, cfg.stem_stride,
                                     false, cfg.use_bn, rng);
    int64_t in_ch = cfg.stem_channels;
    for (const auto& st : cfg.stages) {
      for (int64_t b = 0; b < st.blocks; ++b) {
        const auto bc =
            cfg.block_config(in_ch, st.width, b == 0 ? st.stride : 1);
        net.blocks_.push_back(Res2NetBlock<S>::create(bc, rng));
        in_ch = st.width;
      }
    }
    net.classifier_ = Dense<S>::create(in_ch, cfg.num_classes, true, rng);
    return net;
  }

  // x: [N,1,D,T] batched or [1,D,T] single map.
  Tensor<S> forward(const Tensor<S>& x, const ForwardOptions& opts = {},
                    std::vector<GateTrace<S>>* traces = nullptr) {
    GRES_CHECK_SHAPE(x.rank() == 3 || x.rank() == 4,
                     "backbone: input must be [1,D,T] or [N,1,D,T], got ",
                     shape_str(x.shape()));
    GRES_CHECK_SHAPE(x.dim(channel_axis(x.rank())) == 1,
                     "backbone: expected a single input channel");
    Tensor<S> h = avg_pool2d(x, cfg_.input_pool);
    h = stem_.forward(h, opts.mode);
    if (cfg_.use_relu) h = relu(h);
    for (auto& block : blocks_) {
      GateTrace<S>* trace = nullptr;
      if (traces) {
        traces->emplace_back();
        trace = &traces->back();
      }
      h = block.forward(h, opts, trace);
    }
    auto pooled = avg_pool_spatial(h);
    return classifier_.forward(pooled);
  }

  const BackboneConfig& config() const { return cfg_; }
  std::vector<Res2NetBlock<S>>& blocks() { return blocks_; }
  ConvLayer<S>& stem() { return stem_; }
  Dense<S>& classifier() { return classifier_; }

  template <class F>
  void visit_params(F&& fn) {
    stem_.visit_params("stem", fn);
    visit_stage_blocks([&](const std::string& prefix, Res2NetBlock<S>& b) {
      b.visit_params(prefix, fn);
    });
    classifier_.visit_params("classifier", fn);
  }
  template <class F>
  void visit_buffers(F&& fn) {
    stem_.visit_buffers("stem", fn);
    visit_stage_blocks([&](const std::string& prefix, Res2NetBlock<S>& b) {
      b.visit_buffers(prefix, fn);
    });
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_params() {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    visit_params([&](const std::string& n, Tensor<S>& t) { out.emplace_back(n, t); });
    return out;
  }
  std::vector<std::pair<std::string, Tensor<S>>> named_buffers() {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    visit_buffers([&](const std::string& n, Tensor<S>& t) { out.emplace_back(n, t); });
    return out;
  }

  int64_t param_count() {
    int64_t n = 0;
    visit_params([&](const std::string&, Tensor<S>& t) { n += t.numel(); });
    return n;
  }

 private:
  template <class F>
  void visit_stage_blocks(F&& fn) {
    size_t idx = 0;
    for (size_t s = 0; s < cfg_.stages.size(); ++s)
      for (int64_t b = 0; b < cfg_.stages[s].blocks; ++b, ++idx)
        fn("stage" + std::to_string(s) + ".block" + std::to_string(b),
           blocks_[idx]);
  }

  BackboneConfig cfg_;
  ConvLayer<S> stem_;
  std::vector<Res2NetBlock<S>> blocks_;
  Dense<S> classifier_;
};

template <class S>
int64_t model_param_count(Backbone<S>& model) {
  return model.param_count();
}

// Runs a forward pass purely to observe the gate vectors realized on x; the
// classifier output is discarded and the model is left unchanged (eval mode).
template <class S>
std::vector<GateTrace<S>> gate_inspection(Backbone<S>& model, const Tensor<S>& x) {
  std::vector<GateTrace<S>> traces;
  (void)model.forward(x, {.mode = Mode::eval}, &traces);
  return traces;
}

}  // namespace gres2net

#endif  // GRES2NET_BLOCKS_HPP
