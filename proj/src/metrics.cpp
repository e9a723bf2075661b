#include "bufd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace bufd {

double mse_value(const Tensor<float>& a, const Tensor<float>& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak) {
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be > 0");
  const double m = mse_value(a, b);
  if (m == 0.0) return kPsnrSentinelDb;
  return std::min(10.0 * std::log10(peak * peak / m), kPsnrSentinelDb);
}

namespace {

constexpr int kWin = 11;
constexpr double kWinSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWin);
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    w[static_cast<std::size_t>(i)] =
        std::exp(-d * d / (2.0 * kWinSigma * kWinSigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

/// Rec.601 luma plane of a {B,C,H,W} tensor's first batch entry.
std::vector<double> luminance(const Tensor<float>& img, std::int64_t& h,
                              std::int64_t& w) {
  if (img.rank() != 4)
    throw std::invalid_argument("ssim: expected BxCxHxW, got " +
                                shape_str(img.shape()));
  const std::int64_t c = img.dim(1);
  h = img.dim(2);
  w = img.dim(3);
  std::vector<double> out(static_cast<std::size_t>(h * w));
  if (c == 3) {
    for (std::int64_t i = 0; i < h * w; ++i)
      out[static_cast<std::size_t>(i)] = 0.299 * img[i] +
                                         0.587 * img[h * w + i] +
                                         0.114 * img[2 * h * w + i];
  } else {
    for (std::int64_t i = 0; i < h * w; ++i)
      out[static_cast<std::size_t>(i)] = img[i];
  }
  return out;
}

/// Separable gaussian filter, valid region only: output (h-10) x (w-10).
std::vector<double> filter_valid(const std::vector<double>& img,
                                 std::int64_t h, std::int64_t w,
                                 const std::vector<double>& win) {
  const std::int64_t oh = h - kWin + 1, ow = w - kWin + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (int k = 0; k < kWin; ++k)
        acc += win[static_cast<std::size_t>(k)] *
               img[static_cast<std::size_t>(i * w + j + k)];
      rows[static_cast<std::size_t>(i * ow + j)] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t i = 0; i < oh; ++i)
    for (std::int64_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (int k = 0; k < kWin; ++k)
        acc += win[static_cast<std::size_t>(k)] *
               rows[static_cast<std::size_t>((i + k) * ow + j)];
      out[static_cast<std::size_t>(i * ow + j)] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
  require_same_shape(a, b, "ssim");
  std::int64_t h = 0, w = 0;
  const std::vector<double> x = luminance(a, h, w);
  const std::vector<double> y = luminance(b, h, w);
  if (h < kWin || w < kWin)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  const std::vector<double> win = gaussian_window();
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const std::vector<double> mu_x = filter_valid(x, h, w, win);
  const std::vector<double> mu_y = filter_valid(y, h, w, win);
  const std::vector<double> m_xx = filter_valid(xx, h, w, win);
  const std::vector<double> m_yy = filter_valid(yy, h, w, win);
  const std::vector<double> m_xy = filter_valid(xy, h, w, win);

  double acc = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double var_x = m_xx[i] - mu_x[i] * mu_x[i];
    const double var_y = m_yy[i] - mu_y[i] * mu_y[i];
    const double cov = m_xy[i] - mu_x[i] * mu_y[i];
    acc += ((2.0 * mu_x[i] * mu_y[i] + kC1) * (2.0 * cov + kC2)) /
           ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1) *
            (var_x + var_y + kC2));
  }
  return acc / static_cast<double>(mu_x.size());
}

namespace {

/// Continued fraction for the incomplete beta (modified Lentz).
double incbeta_cf(double x, double a, double b) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double result = d;
  for (int m = 1; m <= 300; ++m) {
    const double dm = m;
    // even step
    double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    result *= d * c;
    // odd step
    num = -(a + dm) * (a + b + dm) * x /
          ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double mult = d * c;
    result *= mult;
    if (std::abs(mult - 1.0) < kEps) break;
  }
  return result;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(x >= 0.0 && x <= 1.0 && a > 0.0 && b > 0.0))
    throw std::invalid_argument("regularized_incomplete_beta: bad arguments");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_beta =
      std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta);
  if (x < (a + 1.0) / (a + b + 2.0)) return front / a * incbeta_cf(x, a, b);
  return 1.0 - front / b * incbeta_cf(1.0 - x, b, a);
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("student_t_cdf: df must be > 0");
  const double tail =
      0.5 * regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5);
  return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult t_test_two_sample(std::span<const double> xs,
                              std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw std::invalid_argument("t_test: equal sample sizes required");
  const std::size_t n = xs.size();
  if (n < 2) throw std::invalid_argument("t_test: need at least 2 samples");

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    vx += (xs[i] - mx) * (xs[i] - mx);
    vy += (ys[i] - my) * (ys[i] - my);
  }
  const double dn = static_cast<double>(n);
  const double pooled = (vx + vy) / (2.0 * dn - 2.0);

  TTestResult r;
  r.df = 2.0 * dn - 2.0;
  if (pooled == 0.0) {
    if (mx == my) {
      r.t = 0.0;
      r.p = 1.0;  // identical constant samples, by convention
    } else {
      r.t = mx < my ? -std::numeric_limits<double>::infinity()
                    : std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = (mx - my) / std::sqrt(pooled * 2.0 / dn);
  // two-tailed: P(|T| > |t|) via the incomplete beta
  r.p = regularized_incomplete_beta(r.df / (r.df + r.t * r.t), r.df / 2.0, 0.5);
  return r;
}

}  // namespace bufd
