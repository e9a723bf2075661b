#include "bufd/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "bufd/metrics.hpp"
#include "bufd/version.hpp"

namespace bufd {

namespace {

constexpr std::uint64_t kTagEvalClean = 0x6576636cull;
constexpr std::uint64_t kTagEvalNoise = 0x65766e6full;

float clip01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string describe_config(const std::string& protocol,
                            const std::vector<Method>& methods,
                            const std::vector<double>& sigmas,
                            const EvalConfig& config) {
  std::ostringstream os;
  os << protocol << ";count=" << config.synth.test_count
     << ";size=" << config.synth.test_size
     << ";prior=" << config.synth.prior_mean255 << "/"
     << config.synth.prior_std255 << ";clip=" << config.clip_inputs
     << config.clip_outputs << ";sigmas=";
  for (double s : sigmas) os << s << ",";
  os << ";methods=";
  for (const Method& m : methods) os << m.name << ",";
  return os.str();
}

EvalReport run_benchmark(const std::string& protocol,
                         const std::vector<Method>& methods,
                         const std::vector<double>& sigmas,
                         const EvalConfig& config) {
  config.synth.validate();
  if (methods.empty())
    throw std::invalid_argument("benchmark: no methods given");

  EvalReport report;
  report.protocol = protocol;
  report.seed = config.synth.seed;
  report.config_hash =
      fnv1a_hex(describe_config(protocol, methods, sigmas, config));

  const int n_img = config.synth.test_count;
  const int size = config.synth.test_size;
  const std::uint64_t clean_base =
      derive_seed(config.synth.seed, kTagEvalClean);
  std::vector<Tensor<float>> clean;
  clean.reserve(static_cast<std::size_t>(n_img));
  for (int i = 0; i < n_img; ++i) {
    Rng rng(derive_seed(clean_base, static_cast<std::uint64_t>(i)));
    clean.push_back(gen_clean({1, 1, size, size}, config.synth, rng));
  }

  const std::uint64_t noise_base =
      derive_seed(config.synth.seed, kTagEvalNoise);
  for (std::size_t si = 0; si < sigmas.size(); ++si) {
    const double sigma = sigmas[si];
    NoiseSpec spec = protocol == "spatial"
                         ? NoiseSpec::field(
                               row_linear_field(size, size, sigma), sigma)
                         : NoiseSpec::scalar(sigma);

    std::vector<MethodCell> cells(methods.size());
    std::vector<bool> failed(methods.size(), false);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      cells[mi].method = methods[mi].name;
      cells[mi].sigma = sigma;
    }

    for (int i = 0; i < n_img; ++i) {
      Rng rng(derive_seed(derive_seed(noise_base, si),
                          static_cast<std::uint64_t>(i)));
      const Tensor<float> noisy =
          add_noise(clean[static_cast<std::size_t>(i)], spec, rng,
                    config.clip_inputs);
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        if (failed[mi]) continue;
        try {
          Tensor<float> denoised = methods[mi].run(noisy, spec);
          require_same_shape(denoised, noisy, "benchmark output");
          if (config.clip_outputs)
            for (std::int64_t k = 0; k < denoised.size(); ++k)
              denoised[k] = clip01(denoised[k]);
          cells[mi].per_image_psnr.push_back(
              psnr(denoised, clean[static_cast<std::size_t>(i)], 1.0));
          if (config.compute_ssim)
            cells[mi].mean_ssim +=
                ssim(denoised, clean[static_cast<std::size_t>(i)]);
        } catch (const std::exception& e) {
          failed[mi] = true;
          report.failures.push_back({methods[mi].name, sigma, e.what()});
        }
      }
    }

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      if (failed[mi]) continue;
      MethodCell& c = cells[mi];
      c.n = static_cast<int>(c.per_image_psnr.size());
      double mean = 0.0;
      for (double v : c.per_image_psnr) mean += v;
      mean /= c.n;
      double var = 0.0;
      for (double v : c.per_image_psnr) var += (v - mean) * (v - mean);
      c.mean_psnr = mean;
      c.std_psnr = c.n > 1 ? std::sqrt(var / (c.n - 1)) : 0.0;
      c.mean_ssim = config.compute_ssim ? c.mean_ssim / c.n : 0.0;
      report.cells.push_back(std::move(c));
    }

    std::vector<PairPValue> pairs;
    for (std::size_t a = 0; a < methods.size(); ++a) {
      if (failed[a]) continue;
      const MethodCell* ca = report.find(methods[a].name, sigma);
      for (std::size_t b = a; b < methods.size(); ++b) {
        if (failed[b]) continue;
        const MethodCell* cb = report.find(methods[b].name, sigma);
        const TTestResult t =
            t_test_two_sample(ca->per_image_psnr, cb->per_image_psnr);
        pairs.push_back({methods[a].name, methods[b].name, t.t, t.p});
      }
    }
    report.p_values.emplace_back(sigma, std::move(pairs));
  }
  return report;
}

}  // namespace

const MethodCell* EvalReport::find(const std::string& method,
                                   double sigma) const {
  for (const MethodCell& c : cells)
    if (c.method == method && c.sigma == sigma) return &c;
  return nullptr;
}

Method optimal_method(const GaussianPrior& prior) {
  return {"optimal", [prior](const Tensor<float>& noisy, const NoiseSpec& n) {
            return fuse_image(prior, noisy, n);
          }};
}

Method optimal_central_method(const GaussianPrior& prior) {
  return {"optimal-central",
          [prior](const Tensor<float>& noisy, const NoiseSpec& n) {
            return fuse_image(prior, noisy, NoiseSpec::scalar(n.sigma255));
          }};
}

Method noisy_method() {
  return {"noisy",
          [](const Tensor<float>& noisy, const NoiseSpec&) { return noisy; }};
}

Method model_method(std::string name, ModelConfig config,
                    ParameterSet<float> params) {
  auto shared = std::make_shared<ParameterSet<float>>(std::move(params));
  return {std::move(name),
          [config, shared](const Tensor<float>& noisy, const NoiseSpec&) {
            return run_inference(config, *shared, noisy).denoised;
          }};
}

EvalReport benchmark_table1(const std::vector<Method>& methods,
                            const std::vector<double>& sigmas255,
                            const EvalConfig& config) {
  return run_benchmark("table1", methods, sigmas255, config);
}

EvalReport benchmark_spatial(const std::vector<Method>& methods,
                             const std::vector<double>& sigma_c_list,
                             const EvalConfig& config) {
  for (double s : sigma_c_list)
    if (s < 10.0)
      throw std::invalid_argument(
          "benchmark_spatial: center level must be >= 10");
  return run_benchmark("spatial", methods, sigma_c_list, config);
}

void write_report_csv(const EvalReport& report, std::ostream& os) {
  os << "# bufd " << kVersion << " protocol=" << report.protocol
     << " seed=" << report.seed << " config=" << report.config_hash << "\n";
  os << "method,sigma,meanPSNR,stdPSNR,meanSSIM,n\n";
  char buf[256];
  for (const MethodCell& c : report.cells) {
    std::snprintf(buf, sizeof(buf), "%s,%g,%.4f,%.4f,%.6f,%d\n",
                  c.method.c_str(), c.sigma, c.mean_psnr, c.std_psnr,
                  c.mean_ssim, c.n);
    os << buf;
  }
}

void write_report_json(const EvalReport& report, std::ostream& os) {
  using nlohmann::json;
  json results = json::array();
  for (const MethodCell& c : report.cells)
    results.push_back(json{{"method", c.method},
                           {"sigma", c.sigma},
                           {"mean_psnr", c.mean_psnr},
                           {"std_psnr", c.std_psnr},
                           {"mean_ssim", c.mean_ssim},
                           {"n", c.n}});
  json pvals = json::array();
  for (const auto& [sigma, pairs] : report.p_values) {
    json row = json::array();
    for (const PairPValue& p : pairs)
      row.push_back(
          json{{"a", p.method_a}, {"b", p.method_b}, {"t", p.t}, {"p", p.p}});
    pvals.push_back(json{{"sigma", sigma}, {"pairs", row}});
  }
  json failures = json::array();
  for (const MethodFailure& f : report.failures)
    failures.push_back(
        json{{"method", f.method}, {"sigma", f.sigma}, {"message", f.message}});
  const json doc{{"repro",
                  json{{"version", kVersion},
                       {"seed", report.seed},
                       {"config_hash", report.config_hash}}},
                 {"protocol", report.protocol},
                 {"results", results},
                 {"p_values", pvals},
                 {"failures", failures}};
  os << doc.dump(2) << "\n";
}

std::string render_report_text(const std::string& report_json) {
  using nlohmann::json;
  const json doc = json::parse(report_json);
  std::ostringstream os;
  os << "protocol: " << doc.at("protocol").get<std::string>()
     << "   seed: " << doc.at("repro").at("seed")
     << "   config: " << doc.at("repro").at("config_hash").get<std::string>()
     << "\n\n";

  // methods in first-appearance order, sigmas sorted
  std::vector<std::string> methods;
  std::vector<double> sigmas;
  for (const auto& r : doc.at("results")) {
    const std::string m = r.at("method").get<std::string>();
    const double s = r.at("sigma").get<double>();
    if (std::find(methods.begin(), methods.end(), m) == methods.end())
      methods.push_back(m);
    if (std::find(sigmas.begin(), sigmas.end(), s) == sigmas.end())
      sigmas.push_back(s);
  }
  std::sort(sigmas.begin(), sigmas.end());

  auto cell = [&](const std::string& m, double s) -> std::string {
    for (const auto& r : doc.at("results"))
      if (r.at("method").get<std::string>() == m &&
          r.at("sigma").get<double>() == s) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3f/%.3f",
                      r.at("mean_psnr").get<double>(),
                      r.at("mean_ssim").get<double>());
        return buf;
      }
    return "-";
  };

  std::size_t name_w = 8;
  for (const auto& m : methods) name_w = std::max(name_w, m.size());
  os << std::string(name_w, ' ');
  char buf[64];
  for (double s : sigmas) {
    std::snprintf(buf, sizeof(buf), " %14g", s);
    os << buf;
  }
  os << "\n";
  for (const auto& m : methods) {
    os << m << std::string(name_w - m.size(), ' ');
    for (double s : sigmas) {
      std::snprintf(buf, sizeof(buf), " %14s", cell(m, s).c_str());
      os << buf;
    }
    os << "\n";
  }
  os << "\ncells are meanPSNR(dB)/meanSSIM\n";
  return os.str();
}

}  // namespace bufd
