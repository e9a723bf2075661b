#include "bufd/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bufd {

namespace {
constexpr double kTwoPi = 6.28318530717958647692;
constexpr double kPsnrSentinelDb = 99.0;

double gaussian_pdf(double x, double mean, double variance) {
  const double d = x - mean;
  return std::exp(-d * d / (2.0 * variance)) / std::sqrt(kTwoPi * variance);
}

void check_prior(const GaussianPrior& prior) {
  if (!(prior.stddev > 0.0))
    throw std::invalid_argument("gaussian prior requires stddev > 0");
}
}  // namespace

NoiseSpec NoiseSpec::field(Tensor<double> field255, double center255) {
  for (std::int64_t i = 0; i < field255.size(); ++i)
    if (!(field255[i] >= 0.0))
      throw std::invalid_argument("noise field entries must be >= 0");
  NoiseSpec spec;
  spec.sigma255 = center255;
  spec.field255 = std::move(field255);
  return spec;
}

double snr(double sigma_x, double sigma_n) {
  if (!(sigma_x > 0.0)) throw std::invalid_argument("snr requires sigma_x > 0");
  if (sigma_n < 0.0) throw std::invalid_argument("snr requires sigma_n >= 0");
  if (sigma_n == 0.0) return std::numeric_limits<double>::infinity();
  return (sigma_x * sigma_x) / (sigma_n * sigma_n);
}

double snr_weight(double S) {
  if (S < 0.0) throw std::invalid_argument("snr_weight requires S >= 0");
  return 1.0 / (1.0 + S);
}

double likelihood_pdf(double y, double x, double sigma_n) {
  if (!(sigma_n > 0.0))
    throw std::invalid_argument("likelihood_pdf: degenerate density, sigma_n must be > 0");
  return gaussian_pdf(y, x, sigma_n * sigma_n);
}

double evidence_pdf(double y, const GaussianPrior& prior, double sigma_n) {
  check_prior(prior);
  if (sigma_n < 0.0)
    throw std::invalid_argument("evidence_pdf requires sigma_n >= 0");
  const double var = prior.stddev * prior.stddev + sigma_n * sigma_n;
  return gaussian_pdf(y, prior.mean, var);
}

PosteriorParams posterior_params(const GaussianPrior& prior, double y,
                                 double sigma_n) {
  check_prior(prior);
  if (sigma_n < 0.0)
    throw std::invalid_argument("posterior_params requires sigma_n >= 0");
  const double vx = prior.stddev * prior.stddev;
  const double vn = sigma_n * sigma_n;
  return {(vn * prior.mean + vx * y) / (vx + vn), vx * vn / (vx + vn)};
}

double posterior_pdf(double x, const GaussianPrior& prior, double y,
                     double sigma_n) {
  if (!(sigma_n > 0.0))
    throw std::invalid_argument("posterior_pdf: degenerate density, sigma_n must be > 0");
  const PosteriorParams p = posterior_params(prior, y, sigma_n);
  return gaussian_pdf(x, p.mean, p.variance);
}

double fuse(double prior_mean, double y, double S) {
  if (S < 0.0) throw std::invalid_argument("fuse requires S >= 0");
  if (std::isinf(S)) return y;  // noiseless observation
  if (S == 0.0) return prior_mean;
  return prior_mean / (1.0 + S) + y / (1.0 + 1.0 / S);
}

Tensor<float> fuse_image(const GaussianPrior& prior, const Tensor<float>& y,
                         const NoiseSpec& noise) {
  check_prior(prior);
  Tensor<float> out(y.shape());
  if (!noise.is_field()) {
    const double S = snr(prior.stddev, noise.sigma_norm());
    for (std::int64_t i = 0; i < y.size(); ++i)
      out[i] = static_cast<float>(fuse(prior.mean, y[i], S));
    return out;
  }
  const Tensor<double>& field = *noise.field255;
  if (y.rank() != 4 || field.rank() != 2 || y.dim(2) != field.dim(0) ||
      y.dim(3) != field.dim(1))
    throw std::invalid_argument("fuse_image: noise field " +
                                shape_str(field.shape()) +
                                " does not match image " + shape_str(y.shape()));
  const std::int64_t hw = field.size();
  std::vector<double> s_map(static_cast<std::size_t>(hw));
  for (std::int64_t i = 0; i < hw; ++i)
    s_map[static_cast<std::size_t>(i)] = snr(prior.stddev, field[i] / 255.0);
  for (std::int64_t b = 0; b < y.dim(0); ++b)
    for (std::int64_t c = 0; c < y.dim(1); ++c) {
      const std::int64_t base = (b * y.dim(1) + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i)
        out[base + i] = static_cast<float>(
            fuse(prior.mean, y[base + i], s_map[static_cast<std::size_t>(i)]));
    }
  return out;
}

double map_grid_oracle(const GaussianPrior& prior, double y, double sigma_n,
                       double grid_step) {
  if (!(grid_step > 0.0))
    throw std::invalid_argument("map_grid_oracle requires grid_step > 0");
  const PosteriorParams p = posterior_params(prior, y, sigma_n);
  const double sd = std::sqrt(p.variance);
  const double lo = std::min(0.0, p.mean - 10.0 * sd);
  const double hi = std::max(1.0, p.mean + 10.0 * sd);
  double best_x = lo;
  double best_density = -1.0;
  const std::int64_t steps = static_cast<std::int64_t>((hi - lo) / grid_step);
  for (std::int64_t k = 0; k <= steps; ++k) {
    const double x = lo + static_cast<double>(k) * grid_step;
    const double d = posterior_pdf(x, prior, y, sigma_n);
    if (d > best_density) {
      best_density = d;
      best_x = x;
    }
  }
  return best_x;
}

double analytic_optimal_psnr(double sigma_x, double sigma_n, double peak) {
  if (!(sigma_x > 0.0))
    throw std::invalid_argument("analytic_optimal_psnr requires sigma_x > 0");
  if (sigma_n < 0.0)
    throw std::invalid_argument("analytic_optimal_psnr requires sigma_n >= 0");
  if (sigma_n == 0.0) return kPsnrSentinelDb;
  const double vx = sigma_x * sigma_x;
  const double vn = sigma_n * sigma_n;
  const double db = 10.0 * std::log10(peak * peak * (vx + vn) / (vx * vn));
  return std::min(db, kPsnrSentinelDb);
}

}  // namespace bufd
