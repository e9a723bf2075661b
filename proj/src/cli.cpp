#include "bufd/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "bufd/benchmark.hpp"
#include "bufd/checkpoint.hpp"
#include "bufd/image_io.hpp"
#include "bufd/metrics.hpp"
#include "bufd/version.hpp"

namespace bufd {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end())
      throw std::invalid_argument("config: unknown key '" + key + "' in " +
                                  where);
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

std::string slurp(const std::string& path) { return read_file(path); }

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_sigma_list(const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : split_csv(s)) out.push_back(std::stod(item));
  return out;
}

float clip01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

std::string repro_comment(std::uint64_t seed) {
  return std::string("bufd ") + kVersion + " seed=" + std::to_string(seed);
}

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed, int count,
                 int size, double sigma) {
  SynthConfig cfg;
  cfg.seed = seed;
  std::filesystem::create_directories(out_dir);
  json files = json::array();
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(derive_seed(seed, 0x67656eull),
                        static_cast<std::uint64_t>(i)));
    const Tensor<float> clean = gen_clean({1, 1, size, size}, cfg, rng);
    const Tensor<float> noisy =
        add_noise(clean, NoiseSpec::scalar(sigma), rng);
    char name[64];
    std::snprintf(name, sizeof(name), "clean_%03d.pgm", i);
    write_image(out_dir + "/" + name, clean, repro_comment(seed));
    files.push_back(name);
    std::snprintf(name, sizeof(name), "noisy_%03d_sigma%g.pgm", i, sigma);
    write_image(out_dir + "/" + name, noisy, repro_comment(seed));
    files.push_back(name);
  }
  const json manifest{{"version", kVersion},
                      {"seed", seed},
                      {"count", count},
                      {"size", size},
                      {"sigma", sigma},
                      {"prior_mean", cfg.prior_mean255},
                      {"prior_std", cfg.prior_std255},
                      {"files", files}};
  atomic_write(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << count << " sample pairs to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& variant,
              const std::string& out_path, const std::string& log_path,
              const std::string& best_path) {
  RunConfig rc = parse_run_config(slurp(config_path));
  if (!variant.empty()) rc.model.variant = variant_from_string(variant);
  rc.model.sigma_max_train = rc.train.sigma_max_train;
  rc.model.alpha = rc.train.alpha;
  rc.train.prior_std255 = rc.synth.prior_std255;

  Dataset dataset = make_train_dataset(rc.synth);
  std::ofstream log_stream;
  if (!log_path.empty()) {
    log_stream.open(log_path + ".tmp", std::ios::trunc);
    if (!log_stream)
      throw std::runtime_error("cannot open log file: " + log_path);
  }

  // keep-latest cadence: refresh a sibling checkpoint as epochs complete
  const std::string latest_path = out_path + ".latest";
  const EpochCallback keep_latest =
      [&](int epoch, const ParameterSet<float>& params, const TrainLog&) {
        save_checkpoint(latest_path, params,
                        {rc.model, rc.train.seed, epoch});
      };

  const TrainOutcome outcome =
      train(rc.model, dataset, rc.train,
            log_path.empty() ? nullptr : &log_stream, keep_latest);

  if (!log_path.empty()) {
    log_stream.close();
    if (std::rename((log_path + ".tmp").c_str(), log_path.c_str()) != 0)
      throw std::runtime_error("rename failed for " + log_path);
  }

  CheckpointMeta meta{rc.model, rc.train.seed, rc.train.epochs - 1};
  save_checkpoint(out_path, outcome.params, meta);
  if (!best_path.empty()) {
    CheckpointMeta best_meta{rc.model, rc.train.seed, outcome.best_epoch};
    save_checkpoint(best_path, outcome.best_params, best_meta);
  }
  std::cout << "trained " << to_string(rc.model.variant) << " for "
            << rc.train.epochs << " epochs; final loss "
            << outcome.log.epochs.back().total_loss << "; saved to "
            << out_path << "\n";
  return 0;
}

int cmd_denoise(const std::string& in_path, const std::string& out_path,
                const std::string& model_path, const std::string& method,
                double sigma, double prior_mean, double prior_std,
                const std::string& sigma_report) {
  const Tensor<float> noisy = read_image(in_path);
  Tensor<float> denoised;
  Tensor<float> level_map;
  std::uint64_t seed = 0;
  double level_scale = 0.0;

  if (!model_path.empty()) {
    Checkpoint ck = load_checkpoint(model_path);
    seed = ck.meta.train_seed;
    InferenceResult<float> r = run_inference(ck.meta.model, ck.params, noisy);
    denoised = std::move(r.denoised);
    if (ck.meta.model.variant != ModelVariant::residual) {
      level_map = std::move(r.weight_pred);
      level_scale = ck.meta.model.variant == ModelVariant::buifd
                        ? ck.meta.model.sigma_max_train
                        : 0.0;
    }
  } else if (method == "optimal") {
    const GaussianPrior prior{prior_mean / 255.0, prior_std / 255.0};
    denoised = fuse_image(prior, noisy, NoiseSpec::scalar(sigma));
  } else {
    throw std::invalid_argument("denoise: need --model or --method optimal");
  }

  for (std::int64_t i = 0; i < denoised.size(); ++i)
    denoised[i] = clip01(denoised[i]);
  write_image(out_path, denoised, repro_comment(seed));

  if (!sigma_report.empty()) {
    if (level_map.empty())
      throw std::invalid_argument(
          "denoise: this method has no noise-level output for --sigma-report");
    for (std::int64_t i = 0; i < level_map.size(); ++i)
      level_map[i] = clip01(level_map[i]);
    std::string note = repro_comment(seed);
    if (level_scale > 0.0)
      note += " full-scale=sigma" + std::to_string(level_scale);
    write_image(sigma_report, level_map, note);
  }
  std::cout << "denoised " << in_path << " -> " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& protocol, const std::string& methods_arg,
             std::uint64_t seed, const std::string& sigmas_arg, int count,
             int size, double prior_mean, double prior_std, bool no_clip,
             const std::string& out_csv, const std::string& out_json) {
  EvalConfig cfg;
  cfg.synth.seed = seed;
  cfg.synth.test_count = count;
  cfg.synth.test_size = size;
  cfg.synth.prior_mean255 = prior_mean;
  cfg.synth.prior_std255 = prior_std;
  cfg.clip_inputs = !no_clip;
  cfg.clip_outputs = !no_clip;
  const GaussianPrior prior = cfg.synth.prior();

  std::vector<Method> methods;
  for (const std::string& m : split_csv(methods_arg)) {
    if (m == "optimal") {
      methods.push_back(optimal_method(prior));
    } else if (m == "optimal-central") {
      methods.push_back(optimal_central_method(prior));
    } else if (m == "noisy") {
      methods.push_back(noisy_method());
    } else {
      Checkpoint ck = load_checkpoint(m);
      methods.push_back(model_method(
          std::filesystem::path(m).stem().string(), ck.meta.model,
          std::move(ck.params)));
    }
  }
  if (methods.empty())
    throw std::invalid_argument("eval: --methods must name at least one method");

  std::vector<double> sigmas;
  if (!sigmas_arg.empty()) {
    sigmas = parse_sigma_list(sigmas_arg);
  } else if (protocol == "table1") {
    sigmas = {5, 10, 15, 20, 25, 30, 40, 50, 60, 70};
  } else {
    sigmas = {15, 25, 40, 55, 65};
  }

  EvalReport report;
  if (protocol == "table1") {
    report = benchmark_table1(methods, sigmas, cfg);
  } else if (protocol == "spatial") {
    report = benchmark_spatial(methods, sigmas, cfg);
  } else {
    throw std::invalid_argument("eval: protocol must be table1 or spatial");
  }

  for (const MethodFailure& f : report.failures)
    std::cerr << "warning: method " << f.method << " failed at sigma "
              << f.sigma << ": " << f.message << "\n";

  if (!out_csv.empty()) {
    std::ostringstream os;
    write_report_csv(report, os);
    atomic_write(out_csv, os.str());
  }
  if (!out_json.empty()) {
    std::ostringstream os;
    write_report_json(report, os);
    atomic_write(out_json, os.str());
  }
  if (out_csv.empty() && out_json.empty()) {
    std::ostringstream os;
    write_report_csv(report, os);
    std::cout << os.str();
  }
  return report.failures.empty() ? 0 : 3;
}

int cmd_report(const std::string& in_path, const std::string& out_path) {
  const std::string rendered = render_report_text(slurp(in_path));
  if (out_path.empty())
    std::cout << rendered;
  else
    atomic_write(out_path, rendered);
  return 0;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: JSON parse: ") + e.what());
  }
  check_keys(j, {"synth", "model", "train"}, "top level");
  RunConfig rc;

  if (j.contains("synth")) {
    const json& s = j["synth"];
    check_keys(s,
               {"prior_mean", "prior_std", "train_patch", "train_count",
                "test_size", "test_count", "sigma_lo", "sigma_hi", "seed"},
               "synth");
    read_key(s, "prior_mean", rc.synth.prior_mean255);
    read_key(s, "prior_std", rc.synth.prior_std255);
    read_key(s, "train_patch", rc.synth.train_patch);
    read_key(s, "train_count", rc.synth.train_count);
    read_key(s, "test_size", rc.synth.test_size);
    read_key(s, "test_count", rc.synth.test_count);
    read_key(s, "sigma_lo", rc.synth.sigma_lo);
    read_key(s, "sigma_hi", rc.synth.sigma_hi);
    read_key(s, "seed", rc.synth.seed);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m,
               {"variant", "backbone_depth", "noise_head_depth", "width",
                "fusion_channels", "fusion_layers", "channels"},
               "model");
    if (m.contains("variant"))
      rc.model.variant = variant_from_string(m["variant"].get<std::string>());
    read_key(m, "backbone_depth", rc.model.backbone_depth);
    read_key(m, "noise_head_depth", rc.model.noise_head_depth);
    read_key(m, "width", rc.model.width);
    read_key(m, "fusion_channels", rc.model.fusion_channels);
    read_key(m, "fusion_layers", rc.model.fusion_layers);
    read_key(m, "channels", rc.model.channels);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t,
               {"epochs", "batch_size", "lr0", "lr_decay_every",
                "lr_decay_factor", "alpha", "sigma_max_train", "seed",
                "checkpoint_every", "val_fraction"},
               "train");
    read_key(t, "epochs", rc.train.epochs);
    read_key(t, "batch_size", rc.train.batch_size);
    read_key(t, "lr0", rc.train.lr0);
    read_key(t, "lr_decay_every", rc.train.lr_decay_every);
    read_key(t, "lr_decay_factor", rc.train.lr_decay_factor);
    read_key(t, "alpha", rc.train.alpha);
    read_key(t, "sigma_max_train", rc.train.sigma_max_train);
    read_key(t, "seed", rc.train.seed);
    read_key(t, "checkpoint_every", rc.train.checkpoint_every);
    read_key(t, "val_fraction", rc.train.val_fraction);
  }
  rc.synth.validate();
  rc.model.validate();
  rc.train.validate();
  return rc;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Bayesian fusion denoising lab"};
  app.set_version_flag("--version", std::string("bufd ") + kVersion);
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "emit sample images + manifest");
  std::string gen_out = "data";
  std::uint64_t gen_seed = 0;
  int gen_count = 4, gen_size = 256;
  double gen_sigma = 25.0;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--count", gen_count, "image pairs to emit");
  gen->add_option("--size", gen_size, "image side length");
  gen->add_option("--sigma", gen_sigma, "noise level (0-255 units)");

  // train
  auto* tr = app.add_subcommand("train", "train a model from a config");
  std::string tr_config, tr_variant, tr_out = "model.bufd", tr_log, tr_best;
  tr->add_option("--config", tr_config, "run config JSON")->required();
  tr->add_option("--variant", tr_variant,
                 "residual|fusion|buifd (overrides config)");
  tr->add_option("--out", tr_out, "checkpoint path");
  tr->add_option("--log", tr_log, "per-epoch CSV log path");
  tr->add_option("--best-out", tr_best, "best-validation checkpoint path");

  // denoise
  auto* dn = app.add_subcommand("denoise", "denoise one image file");
  std::string dn_in, dn_out, dn_model, dn_method, dn_sigma_report;
  double dn_sigma = 25.0, dn_prior_mean = 127.0, dn_prior_std = 25.0;
  dn->add_option("--in", dn_in, "input PGM/PPM")->required();
  dn->add_option("--out", dn_out, "output image path")->required();
  dn->add_option("--model", dn_model, "checkpoint path");
  dn->add_option("--method", dn_method, "'optimal' for the closed form");
  dn->add_option("--sigma", dn_sigma, "noise level for --method optimal");
  dn->add_option("--prior-mean", dn_prior_mean, "prior mean (0-255)");
  dn->add_option("--prior-std", dn_prior_std, "prior std (0-255)");
  dn->add_option("--sigma-report", dn_sigma_report,
                 "write the predicted noise-level map here");

  // eval
  auto* ev = app.add_subcommand("eval", "run a benchmark protocol");
  std::string ev_protocol = "table1", ev_methods = "optimal", ev_sigmas;
  std::string ev_csv, ev_json;
  std::uint64_t ev_seed = 0;
  int ev_count = 256, ev_size = 256;
  double ev_prior_mean = 127.0, ev_prior_std = 25.0;
  bool ev_no_clip = false;
  ev->add_option("--protocol", ev_protocol, "table1|spatial");
  ev->add_option("--methods", ev_methods,
                 "comma list: optimal, optimal-central, noisy, or checkpoint "
                 "paths");
  ev->add_option("--seed", ev_seed, "rng seed");
  ev->add_option("--sigmas", ev_sigmas, "comma list overriding the protocol");
  ev->add_option("--count", ev_count, "test image count");
  ev->add_option("--size", ev_size, "test image side");
  ev->add_option("--prior-mean", ev_prior_mean, "prior mean (0-255)");
  ev->add_option("--prior-std", ev_prior_std, "prior std (0-255)");
  ev->add_flag("--no-clip", ev_no_clip, "pure-theory mode: no clipping");
  ev->add_option("--out-csv", ev_csv, "CSV report path");
  ev->add_option("--out-json", ev_json, "JSON report path");

  // report
  auto* rp = app.add_subcommand("report", "render a JSON report as text");
  std::string rp_in, rp_out;
  rp->add_option("--in", rp_in, "report JSON path")->required();
  rp->add_option("--out", rp_out, "output path (default stdout)");

  std::vector<const char*> argv;
  argv.push_back("bufd");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_seed, gen_count, gen_size, gen_sigma);
    if (tr->parsed())
      return cmd_train(tr_config, tr_variant, tr_out, tr_log, tr_best);
    if (dn->parsed())
      return cmd_denoise(dn_in, dn_out, dn_model, dn_method, dn_sigma,
                         dn_prior_mean, dn_prior_std, dn_sigma_report);
    if (ev->parsed())
      return cmd_eval(ev_protocol, ev_methods, ev_seed, ev_sigmas, ev_count,
                      ev_size, ev_prior_mean, ev_prior_std, ev_no_clip, ev_csv,
                      ev_json);
    if (rp->parsed()) return cmd_report(rp_in, rp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace bufd
