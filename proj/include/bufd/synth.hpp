#pragma once

#include <cstdint>
#include <vector>

#include "bufd/bayes.hpp"
#include "bufd/rng.hpp"
#include "bufd/tensor.hpp"

namespace bufd {

/// Synthetic Gaussian-prior data protocol. Intensity parameters are quoted
/// in 0-255 units and normalized on generation.
struct SynthConfig {
  double prior_mean255 = 127.0;
  double prior_std255 = 25.0;
  int train_patch = 40;
  int train_count = 5000;
  int test_size = 256;
  int test_count = 256;
  double sigma_lo = 5.0;
  double sigma_hi = 25.0;
  std::uint64_t seed = 0;

  void validate() const;
  GaussianPrior prior() const {
    return {prior_mean255 / 255.0, prior_std255 / 255.0};
  }
};

/// Per-pixel noise-level map in 0-255 units, shape {H,W}.
using NoiseField = Tensor<double>;

/// I.i.d. pixels from the normalized prior N(mean,std^2)/255, clipped to
/// [0,1]. Deterministic for a given rng state.
Tensor<float> gen_clean(const Shape& shape, const SynthConfig& config,
                        Rng& rng);

/// clean + gaussian noise at the spec's level(s) (per-pixel when the spec
/// carries a field), then clipped to [0,1]. clip=false is the pure-theory
/// mode used for analytic cross-checks.
Tensor<float> add_noise(const Tensor<float>& clean, const NoiseSpec& spec,
                        Rng& rng, bool clip = true);

/// Noise level rising linearly down the rows over [sigma_c-10, sigma_c+10],
/// constant within a row. Rejects sigma_c < 10 (negative level otherwise).
NoiseField row_linear_field(int h, int w, double sigma_c);

/// Seeded collection of clean patches plus the per-epoch noise policy.
/// Clean tensors are fixed at construction; noisy views exist only for the
/// current epoch and are regenerated, never accumulated.
struct Dataset {
  std::vector<Tensor<float>> clean;  // each {1,C,H,W}
  std::vector<Tensor<float>> noisy;  // current epoch's views
  std::vector<double> sigma255;      // current per-item noise level
  int epoch = -1;                    // -1 until the first resample
  std::uint64_t seed = 0;
  double sigma_lo = 5.0;
  double sigma_hi = 25.0;

  std::size_t size() const { return clean.size(); }
};

/// train_count patches of train_patch^2 pixels from the config's prior.
Dataset make_train_dataset(const SynthConfig& config);

/// Dataset over caller-provided clean patches (e.g. texture patches),
/// with the same noise policy.
Dataset make_dataset_from_clean(std::vector<Tensor<float>> clean,
                                std::uint64_t seed, double sigma_lo,
                                double sigma_hi);

/// Advance to the next epoch: draw a fresh sigma per item uniformly from
/// [sigma_lo, sigma_hi] and regenerate every noisy view. Clean tensors are
/// untouched. (seed, epoch, item) fully determines the result.
void resample_epoch(Dataset& dataset);

}  // namespace bufd
