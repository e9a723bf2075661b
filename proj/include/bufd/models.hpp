#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "bufd/autodiff.hpp"
#include "bufd/params.hpp"
#include "bufd/rng.hpp"

namespace bufd {

enum class ModelVariant { residual, fusion, buifd };

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& s);

/// Architecture hyperparameters for the three variants:
///  - residual: one backbone CNN predicting the noise, subtracted from the
///    input;
///  - fusion: two parallel backbones predicting the prior image a and the
///    per-pixel weight b, combined as a*b + y*(1-b);
///  - buifd: a prior backbone, a shallower sigmoid-capped noise-level head,
///    and a learned linear fusion over the product stack.
///
/// A backbone of depth D is conv+relu, (D-2) x (conv+bn+relu), conv.
struct ModelConfig {
  ModelVariant variant = ModelVariant::residual;
  int backbone_depth = 18;
  int noise_head_depth = 5;  // conv+bn+relu blocks before the sigmoid conv
  int width = 64;
  int fusion_channels = 16;
  int fusion_layers = 3;  // linear conv layers after the product stack
  int channels = 1;
  double sigma_max_train = 25.0;  // 0-255 units; normalizes noise targets
  double alpha = 0.1;             // reconstruction weight in the fusion loss

  void validate() const;
};

/// Reference scale (the full-size networks).
ModelConfig preset_full(ModelVariant v);
/// Small scale for fast experiments: depth 4, width 16.
ModelConfig preset_desk(ModelVariant v);

template <typename T>
struct ModelOutputs {
  NodeId denoised;
  NodeId prior_pred;   // fusion: a; buifd: f_P; invalid for residual
  NodeId weight_pred;  // fusion: b; buifd: f_N in [0,1]; invalid for residual
};

/// Binds ParameterSet entries to tape leaves on demand and pulls gradients
/// back after a backward pass.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, ParameterSet<T>& params)
      : tape_(&tape), params_(&params) {}

  NodeId operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const NodeId id = tape_->leaf(params_->get(name).value);
    bound_.emplace(name, id);
    return id;
  }

  BnBuffers<T> bn_buffers(const std::string& prefix) {
    return {&params_->get(prefix + ".rmean").value,
            &params_->get(prefix + ".rvar").value,
            &params_->get(prefix + ".nseen").value};
  }

  /// Accumulate tape gradients into the parameter set (trainable only).
  void harvest_grads() {
    for (const auto& [name, id] : bound_) {
      Param<T>& p = params_->get(name);
      if (!p.trainable) continue;
      const Tensor<T>& g = tape_->grad(id);
      for (std::int64_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    }
  }

 private:
  Tape<T>* tape_;
  ParameterSet<T>* params_;
  std::unordered_map<std::string, NodeId> bound_;
};

/// Fresh parameter set for the given architecture: kernels uniform in
/// +-sqrt(1/fan_in), biases zero, bn gamma 1 / beta 0, running stats 0/1.
template <typename T>
ParameterSet<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// a*b + y*(1-b), computed exactly in that form.
template <typename T>
NodeId fusion_combine(Tape<T>& tape, NodeId a, NodeId b, NodeId y);

/// Channel stack {y, f_P, f_N, f_P*f_N, y*(1-f_N)} feeding the learned
/// fusion. Expects f_N in [0,1].
template <typename T>
NodeId product_fusion_stack(Tape<T>& tape, NodeId y, NodeId prior_pred,
                            NodeId noise_pred);

/// Forward pass of the configured variant. y is a leaf {B,C,H,W} in [0,1].
template <typename T>
ModelOutputs<T> forward_model(Tape<T>& tape, ParamBinder<T>& bind,
                              const ModelConfig& config, NodeId y, BnMode mode);

/// alpha * mse(denoised, clean) + (1-alpha) * mse(b, true_f).
template <typename T>
NodeId fusion_loss(Tape<T>& tape, const ModelOutputs<T>& out, NodeId clean,
                   NodeId true_f, double alpha);

/// mse(denoised, clean) + mse(f_N, true_level), equal weighting.
template <typename T>
NodeId buifd_loss(Tape<T>& tape, const ModelOutputs<T>& out, NodeId clean,
                  NodeId true_level);

/// Inference results as plain tensors (batch norm in infer mode).
template <typename T>
struct InferenceResult {
  Tensor<T> denoised;
  Tensor<T> prior_pred;   // empty for residual
  Tensor<T> weight_pred;  // empty for residual
};

template <typename T>
InferenceResult<T> run_inference(const ModelConfig& config,
                                 ParameterSet<T>& params,
                                 const Tensor<T>& noisy);

extern template ParameterSet<float> init_params(const ModelConfig&,
                                                std::uint64_t);
extern template ParameterSet<double> init_params(const ModelConfig&,
                                                 std::uint64_t);
extern template NodeId fusion_combine(Tape<float>&, NodeId, NodeId, NodeId);
extern template NodeId fusion_combine(Tape<double>&, NodeId, NodeId, NodeId);
extern template NodeId product_fusion_stack(Tape<float>&, NodeId, NodeId,
                                            NodeId);
extern template NodeId product_fusion_stack(Tape<double>&, NodeId, NodeId,
                                            NodeId);
extern template ModelOutputs<float> forward_model(Tape<float>&,
                                                  ParamBinder<float>&,
                                                  const ModelConfig&, NodeId,
                                                  BnMode);
extern template ModelOutputs<double> forward_model(Tape<double>&,
                                                   ParamBinder<double>&,
                                                   const ModelConfig&, NodeId,
                                                   BnMode);
extern template NodeId fusion_loss(Tape<float>&, const ModelOutputs<float>&,
                                   NodeId, NodeId, double);
extern template NodeId fusion_loss(Tape<double>&, const ModelOutputs<double>&,
                                   NodeId, NodeId, double);
extern template NodeId buifd_loss(Tape<float>&, const ModelOutputs<float>&,
                                  NodeId, NodeId);
extern template NodeId buifd_loss(Tape<double>&, const ModelOutputs<double>&,
                                  NodeId, NodeId);
extern template InferenceResult<float> run_inference(const ModelConfig&,
                                                     ParameterSet<float>&,
                                                     const Tensor<float>&);
extern template InferenceResult<double> run_inference(const ModelConfig&,
                                                      ParameterSet<double>&,
                                                      const Tensor<double>&);

}  // namespace bufd
