#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bufd/bayes.hpp"
#include "bufd/rng.hpp"
#include "oracles.hpp"

using namespace bufd;

namespace {
constexpr double kSigmaX = 25.0 / 255.0;
}

TEST_CASE("likelihood density peak, shift invariance, normalization") {
  const double sn = 10.0 / 255.0;
  CHECK(likelihood_pdf(0.4, 0.4, sn) ==
        doctest::Approx(1.0 / (std::sqrt(2.0 * M_PI) * sn)).epsilon(1e-12));

  // depends only on y - x
  CHECK(likelihood_pdf(0.41, 0.4, sn) ==
        doctest::Approx(likelihood_pdf(0.71, 0.7, sn)).epsilon(1e-12));

  const double integral = oracle::simpson(
      [sn](double y) { return likelihood_pdf(y, 0.4, sn); }, 0.4 - 8 * sn,
      0.4 + 8 * sn);
  CHECK(std::abs(integral - 1.0) < 1e-6);

  CHECK_THROWS_AS(likelihood_pdf(0.4, 0.4, 0.0), std::invalid_argument);
}

TEST_CASE("evidence density: peak, noiseless reduction, second moment") {
  const GaussianPrior prior{0.5, kSigmaX};
  const double sn = 15.0 / 255.0;
  const double var = kSigmaX * kSigmaX + sn * sn;
  CHECK(evidence_pdf(0.5, prior, sn) ==
        doctest::Approx(1.0 / std::sqrt(2.0 * M_PI * var)).epsilon(1e-12));

  // sigma_n = 0 reduces to the prior density
  CHECK(evidence_pdf(0.47, prior, 0.0) ==
        doctest::Approx(oracle::gaussian_density(0.47, 0.5, kSigmaX * kSigmaX))
            .epsilon(1e-12));

  const double second_moment = oracle::simpson(
      [&](double y) {
        return (y - 0.5) * (y - 0.5) * evidence_pdf(y, prior, sn);
      },
      0.5 - 8 * std::sqrt(var), 0.5 + 8 * std::sqrt(var));
  CHECK(std::abs(second_moment - var) < 1e-6);
}

TEST_CASE("posterior parameters: symmetric case, noiseless limit") {
  const GaussianPrior prior{0.3, kSigmaX};
  SUBCASE("sigma_n == sigma_x averages prior mean and observation") {
    const auto p = posterior_params(prior, 0.7, kSigmaX);
    CHECK(p.mean == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p.variance == doctest::Approx(kSigmaX * kSigmaX / 2).epsilon(1e-12));
  }
  SUBCASE("sigma_n == 0 returns the observation with zero variance") {
    const auto p = posterior_params(prior, 0.7, 0.0);
    CHECK(p.mean == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(p.variance == 0.0);
  }
}

TEST_CASE("posterior mean matches brute-force argmax of the density ratio") {
  // independent oracle: maximize likelihood * prior / evidence on a 1e-6 grid,
  // with each factor written out directly
  const GaussianPrior prior{0.5, kSigmaX};
  const double sn = 5.0 / 255.0;
  const double y = 0.6;
  auto ratio = [&](double x) {
    const double lik = oracle::gaussian_density(y, x, sn * sn);
    const double pri = oracle::gaussian_density(x, 0.5, kSigmaX * kSigmaX);
    const double ev =
        oracle::gaussian_density(y, 0.5, kSigmaX * kSigmaX + sn * sn);
    return lik * pri / ev;
  };
  double best_x = 0.0, best = -1.0;
  for (double x = 0.0; x <= 1.0; x += 1e-6) {
    const double r = ratio(x);
    if (r > best) {
      best = r;
      best_x = x;
    }
  }
  const auto p = posterior_params(prior, y, sn);
  CHECK(std::abs(p.mean - best_x) < 2e-6);
  CHECK(p.mean == doctest::Approx(0.596154).epsilon(1e-6));
}

TEST_CASE("posterior density: mode, ratio identity, normalization") {
  const GaussianPrior prior{0.45, kSigmaX};
  const double sn = 20.0 / 255.0;
  const double y = 0.62;
  const auto p = posterior_params(prior, y, sn);

  // mode at the posterior mean
  CHECK(posterior_pdf(p.mean, prior, y, sn) >
        posterior_pdf(p.mean + 1e-4, prior, y, sn));
  CHECK(posterior_pdf(p.mean, prior, y, sn) >
        posterior_pdf(p.mean - 1e-4, prior, y, sn));

  // pointwise equal to likelihood * prior / evidence
  for (double x : {0.2, 0.45, 0.61, 0.9}) {
    const double lhs = posterior_pdf(x, prior, y, sn);
    const double rhs = likelihood_pdf(y, x, sn) *
                       oracle::gaussian_density(x, 0.45, kSigmaX * kSigmaX) /
                       evidence_pdf(y, prior, sn);
    CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(rhs)));
  }

  const double sd = std::sqrt(p.variance);
  const double integral = oracle::simpson(
      [&](double x) { return posterior_pdf(x, prior, y, sn); },
      p.mean - 8 * sd, p.mean + 8 * sd);
  CHECK(std::abs(integral - 1.0) < 1e-6);

  CHECK_THROWS_AS(posterior_pdf(0.5, prior, y, 0.0), std::invalid_argument);
}

TEST_CASE("snr weight values and monotonicity") {
  CHECK(snr_weight(0.0) == 1.0);
  CHECK(snr_weight(1.0) == 0.5);
  CHECK(snr_weight(3.0) == 0.25);
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(0.0, 100.0);
    const double b = a + rng.uniform(1e-6, 10.0);
    CHECK(snr_weight(b) < snr_weight(a));
  }
}

TEST_CASE("fusion: special cases and identity with the posterior mean") {
  CHECK(fuse(0.3, 0.7, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(fuse(0.3, 0.7, std::numeric_limits<double>::infinity()) == 0.7);
  CHECK(fuse(0.3, 0.7, snr(kSigmaX, 0.0)) == 0.7);  // noiseless spec

  Rng rng(7);
  double worst = 0.0, worst_convex = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const GaussianPrior prior{rng.uniform(0.0, 1.0), rng.uniform(0.02, 0.2)};
    const double sn = rng.uniform(1.0, 100.0) / 255.0;
    const double y = rng.uniform(0.0, 1.0);
    const double S = snr(prior.stddev, sn);
    const double fused = fuse(prior.mean, y, S);
    worst = std::max(worst,
                     std::abs(fused - posterior_params(prior, y, sn).mean));
    const double f = snr_weight(S);
    worst_convex =
        std::max(worst_convex, std::abs(fused - (f * prior.mean + (1 - f) * y)));
    // fused value lies between the prior mean and the observation
    CHECK(fused >= std::min(prior.mean, y) - 1e-12);
    CHECK(fused <= std::max(prior.mean, y) + 1e-12);
  }
  CHECK(worst < 1e-12);
  CHECK(worst_convex < 1e-12);
}

TEST_CASE("grid-search argmax agrees with the closed form") {
  Rng rng(13);
  const double step = 1e-5;
  for (int i = 0; i < 30; ++i) {
    const GaussianPrior prior{rng.uniform(0.1, 0.9), rng.uniform(0.03, 0.15)};
    const double sn = rng.uniform(2.0, 80.0) / 255.0;
    const double y = rng.uniform(0.0, 1.0);
    const double S = snr(prior.stddev, sn);
    const double by_grid = map_grid_oracle(prior, y, sn, step);
    CHECK(std::abs(by_grid - fuse(prior.mean, y, S)) <= step * 1.01);

    // posterior mean by quadrature
    const auto p = posterior_params(prior, y, sn);
    const double sd = std::sqrt(p.variance);
    const double mean_quad = oracle::simpson(
        [&](double x) { return x * posterior_pdf(x, prior, y, sn); },
        p.mean - 8 * sd, p.mean + 8 * sd);
    CHECK(std::abs(by_grid - mean_quad) <= step * 1.01);
  }

  SUBCASE("symmetric case lands on the prior mean") {
    const GaussianPrior prior{0.4, kSigmaX};
    CHECK(std::abs(map_grid_oracle(prior, 0.4, kSigmaX, 1e-5) - 0.4) <= 1e-5);
  }
}

TEST_CASE("expected optimal psnr: frozen values and monotonicity") {
  CHECK(analytic_optimal_psnr(kSigmaX, 25.0 / 255.0, 1.0) ==
        doctest::Approx(23.182).epsilon(5e-5));
  CHECK(analytic_optimal_psnr(kSigmaX, 5.0 / 255.0, 1.0) ==
        doctest::Approx(34.322).epsilon(5e-5));
  CHECK(analytic_optimal_psnr(kSigmaX, 70.0 / 255.0, 1.0) ==
        doctest::Approx(20.694).epsilon(1e-4));

  double prev = 1e9;
  for (double s = 1.0; s <= 100.0; s += 0.5) {
    const double v = analytic_optimal_psnr(kSigmaX, s / 255.0, 1.0);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(analytic_optimal_psnr(kSigmaX, 0.0, 1.0) == 99.0);
}

TEST_CASE("per-pixel fusion over an image with a noise field") {
  const GaussianPrior prior{0.5, kSigmaX};
  Tensor<float> y({1, 1, 2, 3});
  for (std::int64_t i = 0; i < y.size(); ++i)
    y[i] = 0.1f * static_cast<float>(i);
  Tensor<double> field({2, 3});
  const double sigmas[6] = {0.0, 5.0, 10.0, 25.0, 50.0, 80.0};
  for (int i = 0; i < 6; ++i) field[i] = sigmas[i];

  const Tensor<float> fused =
      fuse_image(prior, y, NoiseSpec::field(field, 25.0));
  for (int i = 0; i < 6; ++i) {
    const double S = snr(kSigmaX, sigmas[i] / 255.0);
    CHECK(fused[i] == doctest::Approx(fuse(0.5, y[i], S)).epsilon(1e-6));
  }
  // sigma = 0 passes the observation through untouched
  CHECK(fused[0] == y[0]);
}
