#pragma once

#include <span>

#include "bufd/tensor.hpp"

namespace bufd {

/// Mean squared error, accumulated in double.
double mse_value(const Tensor<float>& a, const Tensor<float>& b);

/// 10*log10(peak^2 / mse). Zero mse saturates at the 99 dB sentinel.
double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak);
constexpr double kPsnrSentinelDb = 99.0;

/// Single-scale structural similarity on luminance: 11x11 gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1.0, mean over the valid
/// window region. Color tensors are reduced to Rec.601 luma first. Both
/// images must be at least 11x11.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-tailed
};

/// Independent two-sample Student t-test with pooled variance; requires
/// equal sample sizes >= 2. Zero pooled variance: p = 1 when the means are
/// equal (by convention), p = 0 otherwise.
TTestResult t_test_two_sample(std::span<const double> xs,
                              std::span<const double> ys);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double x, double a, double b);

/// CDF of the Student t distribution with df degrees of freedom.
double student_t_cdf(double t, double df);

}  // namespace bufd
