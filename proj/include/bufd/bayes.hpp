#pragma once

#include <optional>

#include "bufd/tensor.hpp"

namespace bufd {

/// Gaussian pixel-intensity prior N(mean, stddev^2), in normalized [0,1]
/// intensity units.
struct GaussianPrior {
  double mean = 0.5;
  double stddev = 25.0 / 255.0;
};

/// Noise description: a scalar standard deviation, or a per-pixel field of
/// image shape {H,W}. Values are quoted in 0-255 intensity units (the unit
/// every external surface uses); the math below divides by 255 internally.
struct NoiseSpec {
  double sigma255 = 0.0;
  std::optional<Tensor<double>> field255;

  static NoiseSpec scalar(double sigma255) { return {sigma255, std::nullopt}; }
  static NoiseSpec field(Tensor<double> field255, double center255);

  bool is_field() const { return field255.has_value(); }
  double sigma_norm() const { return sigma255 / 255.0; }
};

/// S = sigma_x^2 / sigma_n^2; infinity when sigma_n = 0.
double snr(double sigma_x, double sigma_n);

/// f(S) = 1 / (1 + S), the weight of the prior mean in the optimal fusion.
double snr_weight(double S);

/// Gaussian density N(x, sigma_n^2) evaluated at y. Rejects sigma_n = 0.
double likelihood_pdf(double y, double x, double sigma_n);

/// Marginal density of the noisy value: N(prior.mean, sigma_x^2 + sigma_n^2).
double evidence_pdf(double y, const GaussianPrior& prior, double sigma_n);

struct PosteriorParams {
  double mean;      // (sigma_n^2 * xbar + sigma_x^2 * y) / (sigma_x^2 + sigma_n^2)
  double variance;  // sigma_x^2 * sigma_n^2 / (sigma_x^2 + sigma_n^2)
};

PosteriorParams posterior_params(const GaussianPrior& prior, double y,
                                 double sigma_n);

/// Density of the clean value given the observation: N(mean, variance) from
/// posterior_params. Rejects sigma_n = 0 (degenerate).
double posterior_pdf(double x, const GaussianPrior& prior, double y,
                     double sigma_n);

/// Optimal fusion of prior mean and observation:
///   xhat = xbar / (1 + S) + y / (1 + 1/S).
/// S = 0 gives xbar, S = infinity gives y exactly.
double fuse(double prior_mean, double y, double S);

/// fuse() applied per pixel, with S derived from the prior and the noise
/// spec (per-pixel when the spec carries a field).
Tensor<float> fuse_image(const GaussianPrior& prior, const Tensor<float>& y,
                         const NoiseSpec& noise);

/// Brute-force posterior argmax over a grid spanning mean +- 10 stddev
/// (widened to cover [0,1]). Test oracle for fuse().
double map_grid_oracle(const GaussianPrior& prior, double y, double sigma_n,
                       double grid_step);

/// Expected PSNR of the optimal fusion estimator:
///   10*log10(peak^2 * (sigma_x^2 + sigma_n^2) / (sigma_x^2 * sigma_n^2)),
/// saturated at the 99 dB sentinel (reached only as sigma_n -> 0).
double analytic_optimal_psnr(double sigma_x, double sigma_n, double peak);

}  // namespace bufd
