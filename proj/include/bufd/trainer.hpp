#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "bufd/models.hpp"
#include "bufd/synth.hpp"

namespace bufd {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 128;
  double lr0 = 1e-3;
  int lr_decay_every = 30;      // epochs between learning-rate drops
  double lr_decay_factor = 10.0;
  double alpha = 0.1;           // fusion-loss reconstruction weight
  double sigma_max_train = 25.0;  // normalizer for noise-level targets
  double prior_std255 = 25.0;   // generating prior std, for fusion targets
  std::uint64_t seed = 0;
  int checkpoint_every = 1;     // epochs between checkpoint callbacks
  double val_fraction = 0.05;   // held-out slice for best-model tracking

  void validate() const;
};

/// lr0 / decay_factor^floor(epoch / decay_every).
double lr_at(int epoch, const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  double recon_loss = 0.0;
  double aux_loss = 0.0;  // noise-level / weight-prediction term; 0 for residual
  double total_loss = 0.0;
  double lr = 0.0;
  double val_psnr = 0.0;  // 0 when no validation split
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

void write_train_log_header(std::ostream& os);
void write_train_log_row(std::ostream& os, const EpochLog& row);

struct TrainOutcome {
  ParameterSet<float> params;       // after the final epoch
  ParameterSet<float> best_params;  // best validation psnr (== params when
                                    // there is no validation split)
  int best_epoch = -1;
  double best_val_psnr = 0.0;
  TrainLog log;
};

/// Thrown when a loss goes non-finite; message carries epoch, batch and the
/// loss components.
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shuffled batch plan covering every index exactly once. A trailing
/// singleton batch is merged into the previous one (batch norm needs >= 2).
std::vector<std::vector<int>> plan_batches(int n_items, int batch_size,
                                           Rng& rng);

using EpochCallback =
    std::function<void(int epoch, const ParameterSet<float>& params,
                       const TrainLog& log)>;

/// Full training loop: per-epoch noise resampling, shuffled mini-batches,
/// forward/backward/adam, loss selection by variant, per-epoch validation.
/// Deterministic for a fixed seed within one build (wall time aside).
TrainOutcome train(const ModelConfig& model_config, Dataset& dataset,
                   const TrainConfig& config,
                   std::ostream* log_stream = nullptr,
                   const EpochCallback& on_checkpoint = {});

}  // namespace bufd
