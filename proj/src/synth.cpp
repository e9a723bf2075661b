#include "bufd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bufd {

namespace {
constexpr std::uint64_t kTagClean = 0x636c65616eull;  // stream tags
constexpr std::uint64_t kTagNoise = 0x6e6f697365ull;

float clip01(double v) {
  return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}
}  // namespace

void SynthConfig::validate() const {
  if (!(prior_std255 > 0.0))
    throw std::invalid_argument("synth: prior std must be > 0");
  if (train_patch <= 0 || train_count <= 0 || test_size <= 0 ||
      test_count <= 0)
    throw std::invalid_argument("synth: dimensions must be positive");
  if (!(sigma_lo <= sigma_hi) || sigma_lo < 0.0)
    throw std::invalid_argument("synth: need 0 <= sigma_lo <= sigma_hi");
}

Tensor<float> gen_clean(const Shape& shape, const SynthConfig& config,
                        Rng& rng) {
  config.validate();
  Tensor<float> out(shape);
  const double mean = config.prior_mean255;
  const double sd = config.prior_std255;
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = clip01((mean + sd * rng.normal()) / 255.0);
  return out;
}

Tensor<float> add_noise(const Tensor<float>& clean, const NoiseSpec& spec,
                        Rng& rng, bool clip) {
  Tensor<float> out(clean.shape());
  if (!spec.is_field()) {
    const double sn = spec.sigma_norm();
    if (sn < 0.0) throw std::invalid_argument("add_noise: sigma must be >= 0");
    for (std::int64_t i = 0; i < clean.size(); ++i) {
      const double v = clean[i] + sn * rng.normal();
      out[i] = clip ? clip01(v) : static_cast<float>(v);
    }
    return out;
  }
  const Tensor<double>& field = *spec.field255;
  if (clean.rank() != 4 || field.rank() != 2 || clean.dim(2) != field.dim(0) ||
      clean.dim(3) != field.dim(1))
    throw std::invalid_argument("add_noise: noise field " +
                                shape_str(field.shape()) +
                                " does not match image " +
                                shape_str(clean.shape()));
  const std::int64_t hw = field.size();
  for (std::int64_t b = 0; b < clean.dim(0); ++b)
    for (std::int64_t c = 0; c < clean.dim(1); ++c) {
      const std::int64_t base = (b * clean.dim(1) + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double v = clean[base + i] + field[i] / 255.0 * rng.normal();
        out[base + i] = clip ? clip01(v) : static_cast<float>(v);
      }
    }
  return out;
}

NoiseField row_linear_field(int h, int w, double sigma_c) {
  if (h < 2) throw std::invalid_argument("row_linear_field: need h >= 2");
  if (w < 1) throw std::invalid_argument("row_linear_field: need w >= 1");
  if (sigma_c < 10.0)
    throw std::invalid_argument(
        "row_linear_field: sigma_c < 10 would make the field negative");
  NoiseField field({h, w});
  for (int r = 0; r < h; ++r) {
    const double s =
        sigma_c - 10.0 + 20.0 * static_cast<double>(r) / (h - 1);
    for (int c = 0; c < w; ++c) field[static_cast<std::int64_t>(r) * w + c] = s;
  }
  return field;
}

Dataset make_train_dataset(const SynthConfig& config) {
  config.validate();
  Dataset d;
  d.seed = config.seed;
  d.sigma_lo = config.sigma_lo;
  d.sigma_hi = config.sigma_hi;
  const std::uint64_t clean_base = derive_seed(config.seed, kTagClean);
  d.clean.reserve(static_cast<std::size_t>(config.train_count));
  for (int i = 0; i < config.train_count; ++i) {
    Rng rng(derive_seed(clean_base, static_cast<std::uint64_t>(i)));
    d.clean.push_back(
        gen_clean({1, 1, config.train_patch, config.train_patch}, config, rng));
  }
  d.sigma255.assign(d.clean.size(), 0.0);
  return d;
}

Dataset make_dataset_from_clean(std::vector<Tensor<float>> clean,
                                std::uint64_t seed, double sigma_lo,
                                double sigma_hi) {
  Dataset d;
  d.clean = std::move(clean);
  d.seed = seed;
  d.sigma_lo = sigma_lo;
  d.sigma_hi = sigma_hi;
  d.sigma255.assign(d.clean.size(), 0.0);
  return d;
}

void resample_epoch(Dataset& dataset) {
  dataset.epoch += 1;
  const std::uint64_t epoch_base =
      derive_seed(derive_seed(dataset.seed, kTagNoise),
                  static_cast<std::uint64_t>(dataset.epoch));
  dataset.noisy.resize(dataset.clean.size());
  for (std::size_t i = 0; i < dataset.clean.size(); ++i) {
    Rng rng(derive_seed(epoch_base, static_cast<std::uint64_t>(i)));
    const double sigma =
        rng.uniform(dataset.sigma_lo, dataset.sigma_hi);
    dataset.sigma255[i] = sigma;
    dataset.noisy[i] =
        add_noise(dataset.clean[i], NoiseSpec::scalar(sigma), rng);
  }
}

}  // namespace bufd
