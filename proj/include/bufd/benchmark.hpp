#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "bufd/bayes.hpp"
#include "bufd/models.hpp"
#include "bufd/synth.hpp"

namespace bufd {

/// A denoising method under evaluation. The runner hands every method the
/// same noisy image together with the true noise description; blind methods
/// must ignore the description.
struct Method {
  std::string name;
  std::function<Tensor<float>(const Tensor<float>& noisy,
                              const NoiseSpec& noise)>
      run;
};

/// Closed-form fusion given the exact noise description (per-pixel when a
/// field is present).
Method optimal_method(const GaussianPrior& prior);

/// Closed-form fusion given only the scalar center level of a varying field.
Method optimal_central_method(const GaussianPrior& prior);

/// Identity: returns the noisy input (reference floor).
Method noisy_method();

/// Trained network, blind: the noise description is ignored.
Method model_method(std::string name, ModelConfig config,
                    ParameterSet<float> params);

struct EvalConfig {
  SynthConfig synth;  // prior, test_count, test_size, seed
  bool clip_inputs = true;
  bool clip_outputs = true;
  bool compute_ssim = true;
};

struct MethodCell {
  std::string method;
  double sigma = 0.0;  // label in 0-255 units (center level for fields)
  double mean_psnr = 0.0;
  double std_psnr = 0.0;
  double mean_ssim = 0.0;
  int n = 0;
  std::vector<double> per_image_psnr;
};

struct PairPValue {
  std::string method_a;
  std::string method_b;
  double t = 0.0;
  double p = 1.0;
};

struct MethodFailure {
  std::string method;
  double sigma = 0.0;
  std::string message;
};

struct EvalReport {
  std::string protocol;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<MethodCell> cells;  // sigma-major, then method order
  std::vector<std::pair<double, std::vector<PairPValue>>> p_values;
  std::vector<MethodFailure> failures;

  const MethodCell* find(const std::string& method, double sigma) const;
};

/// Constant-level protocol: one shared clean test set, fresh noise per
/// level, every method on identical inputs, outputs clipped before metrics.
EvalReport benchmark_table1(const std::vector<Method>& methods,
                            const std::vector<double>& sigmas255,
                            const EvalConfig& config);

/// Spatially-varying protocol: noise injected through a row-linear field
/// spanning [sigma_c - 10, sigma_c + 10] around each center level.
EvalReport benchmark_spatial(const std::vector<Method>& methods,
                             const std::vector<double>& sigma_c_list,
                             const EvalConfig& config);

/// CSV: reproducibility stanza, then a fixed header row
/// method,sigma,meanPSNR,stdPSNR,meanSSIM,n.
void write_report_csv(const EvalReport& report, std::ostream& os);

/// JSON document with the same cells plus the pairwise p-value matrix.
void write_report_json(const EvalReport& report, std::ostream& os);

/// Aligned text rendering of a report JSON document.
std::string render_report_text(const std::string& report_json);

}  // namespace bufd
