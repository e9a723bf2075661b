#include "bufd/models.hpp"

#include <cmath>
#include <stdexcept>

namespace bufd {

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::residual: return "residual";
    case ModelVariant::fusion: return "fusion";
    case ModelVariant::buifd: return "buifd";
  }
  throw std::logic_error("bad variant");
}

ModelVariant variant_from_string(const std::string& s) {
  if (s == "residual") return ModelVariant::residual;
  if (s == "fusion") return ModelVariant::fusion;
  if (s == "buifd") return ModelVariant::buifd;
  throw std::invalid_argument("unknown model variant: " + s);
}

void ModelConfig::validate() const {
  if (backbone_depth < 2)
    throw std::invalid_argument("model: backbone depth must be >= 2");
  if (noise_head_depth < 1)
    throw std::invalid_argument("model: noise head depth must be >= 1");
  if (width < 1 || fusion_channels < 1 || fusion_layers < 1)
    throw std::invalid_argument("model: widths and layer counts must be >= 1");
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("model: channels must be 1 or 3");
  if (!(sigma_max_train > 0.0))
    throw std::invalid_argument("model: sigma_max_train must be > 0");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("model: alpha must lie in [0,1]");
}

ModelConfig preset_full(ModelVariant v) {
  ModelConfig c;
  c.variant = v;
  c.backbone_depth = 18;
  c.noise_head_depth = 5;
  c.width = 64;
  return c;
}

ModelConfig preset_desk(ModelVariant v) {
  ModelConfig c;
  c.variant = v;
  c.backbone_depth = 4;
  c.noise_head_depth = 3;
  c.width = 16;
  c.fusion_channels = 16;
  return c;
}

namespace {

template <typename T>
void add_conv(ParameterSet<T>& ps, Rng& rng, const std::string& name,
              int out_ch, int in_ch) {
  Tensor<T> w({out_ch, in_ch, 3, 3});
  const double bound = std::sqrt(1.0 / (static_cast<double>(in_ch) * 9.0));
  for (std::int64_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<T>(rng.uniform(-bound, bound));
  ps.add(name + ".w", std::move(w));
  ps.add(name + ".b", Tensor<T>({out_ch}));
}

template <typename T>
void add_bn(ParameterSet<T>& ps, const std::string& prefix, int ch) {
  ps.add(prefix + ".gamma", Tensor<T>({ch}, T(1)));
  ps.add(prefix + ".beta", Tensor<T>({ch}));
  ps.add(prefix + ".rmean", Tensor<T>({ch}), /*trainable=*/false);
  ps.add(prefix + ".rvar", Tensor<T>({ch}, T(1)), /*trainable=*/false);
  ps.add(prefix + ".nseen", Tensor<T>({1}), /*trainable=*/false);
}

template <typename T>
void add_backbone(ParameterSet<T>& ps, Rng& rng, const std::string& prefix,
                  int depth, int width, int in_ch, int out_ch) {
  add_conv(ps, rng, prefix + ".c0", width, in_ch);
  for (int i = 1; i <= depth - 2; ++i) {
    add_conv(ps, rng, prefix + ".c" + std::to_string(i), width, width);
    add_bn(ps, prefix + ".bn" + std::to_string(i), width);
  }
  add_conv(ps, rng, prefix + ".c" + std::to_string(depth - 1), out_ch, width);
}

/// conv+relu, (depth-2) x conv+bn+relu, conv. Final conv carries no bn.
template <typename T>
NodeId backbone(Tape<T>& tape, ParamBinder<T>& bind, const std::string& prefix,
                int depth, NodeId x, BnMode mode) {
  NodeId h = tape.relu(tape.conv2d(x, bind(prefix + ".c0.w"),
                                   bind(prefix + ".c0.b")));
  for (int i = 1; i <= depth - 2; ++i) {
    const std::string c = prefix + ".c" + std::to_string(i);
    const std::string bn = prefix + ".bn" + std::to_string(i);
    h = tape.conv2d(h, bind(c + ".w"), bind(c + ".b"));
    h = tape.batch_norm(h, bind(bn + ".gamma"), bind(bn + ".beta"),
                        bind.bn_buffers(bn), mode);
    h = tape.relu(h);
  }
  const std::string last = prefix + ".c" + std::to_string(depth - 1);
  return tape.conv2d(h, bind(last + ".w"), bind(last + ".b"));
}

}  // namespace

template <typename T>
ParameterSet<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParameterSet<T> ps;
  Rng rng(seed);
  const int ch = config.channels;
  switch (config.variant) {
    case ModelVariant::residual:
      add_backbone(ps, rng, "net", config.backbone_depth, config.width, ch, ch);
      break;
    case ModelVariant::fusion:
      add_backbone(ps, rng, "prior", config.backbone_depth, config.width, ch,
                   ch);
      add_backbone(ps, rng, "snr", config.backbone_depth, config.width, ch, ch);
      break;
    case ModelVariant::buifd: {
      add_backbone(ps, rng, "prior", config.backbone_depth, config.width, ch,
                   ch);
      // noise head: conv+bn+relu blocks, then a conv capped by sigmoid
      for (int i = 0; i < config.noise_head_depth; ++i) {
        add_conv(ps, rng, "noise.c" + std::to_string(i), config.width,
                 i == 0 ? ch : config.width);
        add_bn(ps, "noise.bn" + std::to_string(i), config.width);
      }
      add_conv(ps, rng, "noise.out", ch, config.width);
      // linear fusion stage over the 5-group product stack
      for (int i = 0; i < config.fusion_layers; ++i) {
        const int in_ch = i == 0 ? 5 * ch : config.fusion_channels;
        const int out_ch =
            i == config.fusion_layers - 1 ? ch : config.fusion_channels;
        add_conv(ps, rng, "fuse.c" + std::to_string(i), out_ch, in_ch);
      }
      break;
    }
  }
  return ps;
}

template <typename T>
NodeId fusion_combine(Tape<T>& tape, NodeId a, NodeId b, NodeId y) {
  return tape.add(tape.mul(a, b), tape.mul(y, tape.affine(b, T(-1), T(1))));
}

template <typename T>
NodeId product_fusion_stack(Tape<T>& tape, NodeId y, NodeId prior_pred,
                            NodeId noise_pred) {
  const NodeId pn = tape.mul(prior_pred, noise_pred);
  const NodeId y_keep = tape.mul(y, tape.affine(noise_pred, T(-1), T(1)));
  const std::vector<NodeId> parts{y, prior_pred, noise_pred, pn, y_keep};
  return tape.concat_channels(parts);
}

template <typename T>
ModelOutputs<T> forward_model(Tape<T>& tape, ParamBinder<T>& bind,
                              const ModelConfig& config, NodeId y,
                              BnMode mode) {
  config.validate();
  if (tape.value(y).rank() != 4 || tape.value(y).dim(1) != config.channels)
    throw std::invalid_argument(
        "forward: input must be Bx" + std::to_string(config.channels) +
        "xHxW, got " + shape_str(tape.value(y).shape()));
  ModelOutputs<T> out;
  switch (config.variant) {
    case ModelVariant::residual: {
      const NodeId noise =
          backbone(tape, bind, "net", config.backbone_depth, y, mode);
      out.denoised = tape.sub(y, noise);
      break;
    }
    case ModelVariant::fusion: {
      out.prior_pred =
          backbone(tape, bind, "prior", config.backbone_depth, y, mode);
      out.weight_pred =
          backbone(tape, bind, "snr", config.backbone_depth, y, mode);
      out.denoised = fusion_combine(tape, out.prior_pred, out.weight_pred, y);
      break;
    }
    case ModelVariant::buifd: {
      out.prior_pred =
          backbone(tape, bind, "prior", config.backbone_depth, y, mode);
      NodeId h = y;
      for (int i = 0; i < config.noise_head_depth; ++i) {
        const std::string c = "noise.c" + std::to_string(i);
        const std::string bn = "noise.bn" + std::to_string(i);
        h = tape.conv2d(h, bind(c + ".w"), bind(c + ".b"));
        h = tape.batch_norm(h, bind(bn + ".gamma"), bind(bn + ".beta"),
                            bind.bn_buffers(bn), mode);
        h = tape.relu(h);
      }
      out.weight_pred =
          tape.sigmoid(tape.conv2d(h, bind("noise.out.w"), bind("noise.out.b")));
      NodeId f = product_fusion_stack(tape, y, out.prior_pred, out.weight_pred);
      for (int i = 0; i < config.fusion_layers; ++i) {
        const std::string c = "fuse.c" + std::to_string(i);
        f = tape.conv2d(f, bind(c + ".w"), bind(c + ".b"));
      }
      out.denoised = f;
      break;
    }
  }
  return out;
}

template <typename T>
NodeId fusion_loss(Tape<T>& tape, const ModelOutputs<T>& out, NodeId clean,
                   NodeId true_f, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("fusion_loss: alpha must lie in [0,1]");
  const NodeId recon = tape.mse(out.denoised, clean);
  const NodeId aux = tape.mse(out.weight_pred, true_f);
  return tape.add(tape.affine(recon, static_cast<T>(alpha), T(0)),
                  tape.affine(aux, static_cast<T>(1.0 - alpha), T(0)));
}

template <typename T>
NodeId buifd_loss(Tape<T>& tape, const ModelOutputs<T>& out, NodeId clean,
                  NodeId true_level) {
  return tape.add(tape.mse(out.denoised, clean),
                  tape.mse(out.weight_pred, true_level));
}

template <typename T>
InferenceResult<T> run_inference(const ModelConfig& config,
                                 ParameterSet<T>& params,
                                 const Tensor<T>& noisy) {
  Tape<T> tape;
  ParamBinder<T> bind(tape, params);
  const NodeId y = tape.leaf(noisy);
  const ModelOutputs<T> out =
      forward_model(tape, bind, config, y, BnMode::infer);
  InferenceResult<T> r;
  r.denoised = tape.value(out.denoised);
  if (out.prior_pred.valid()) r.prior_pred = tape.value(out.prior_pred);
  if (out.weight_pred.valid()) r.weight_pred = tape.value(out.weight_pred);
  return r;
}

template ParameterSet<float> init_params(const ModelConfig&, std::uint64_t);
template ParameterSet<double> init_params(const ModelConfig&, std::uint64_t);
template NodeId fusion_combine(Tape<float>&, NodeId, NodeId, NodeId);
template NodeId fusion_combine(Tape<double>&, NodeId, NodeId, NodeId);
template NodeId product_fusion_stack(Tape<float>&, NodeId, NodeId, NodeId);
template NodeId product_fusion_stack(Tape<double>&, NodeId, NodeId, NodeId);
template ModelOutputs<float> forward_model(Tape<float>&, ParamBinder<float>&,
                                           const ModelConfig&, NodeId, BnMode);
template ModelOutputs<double> forward_model(Tape<double>&,
                                            ParamBinder<double>&,
                                            const ModelConfig&, NodeId, BnMode);
template NodeId fusion_loss(Tape<float>&, const ModelOutputs<float>&, NodeId,
                            NodeId, double);
template NodeId fusion_loss(Tape<double>&, const ModelOutputs<double>&, NodeId,
                            NodeId, double);
template NodeId buifd_loss(Tape<float>&, const ModelOutputs<float>&, NodeId,
                           NodeId);
template NodeId buifd_loss(Tape<double>&, const ModelOutputs<double>&, NodeId,
                           NodeId);
template InferenceResult<float> run_inference(const ModelConfig&,
                                              ParameterSet<float>&,
                                              const Tensor<float>&);
template InferenceResult<double> run_inference(const ModelConfig&,
                                               ParameterSet<double>&,
                                               const Tensor<double>&);

}  // namespace bufd
