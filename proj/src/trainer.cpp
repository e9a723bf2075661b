#include "bufd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bufd/metrics.hpp"

namespace bufd {

namespace {
constexpr std::uint64_t kTagShuffle = 0x73687566ull;

Tensor<float> gather_batch(const std::vector<Tensor<float>>& items,
                           const std::vector<int>& idx) {
  const Shape& s = items[0].shape();
  Tensor<float> out({static_cast<std::int64_t>(idx.size()), s[1], s[2], s[3]});
  const std::int64_t plane = s[1] * s[2] * s[3];
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(items[static_cast<std::size_t>(idx[k])].data(),
              items[static_cast<std::size_t>(idx[k])].data() + plane,
              out.data() + static_cast<std::int64_t>(k) * plane);
  return out;
}

Tensor<float> per_item_constant(const std::vector<double>& values,
                                const Shape& item_shape) {
  Tensor<float> out({static_cast<std::int64_t>(values.size()), item_shape[1],
                     item_shape[2], item_shape[3]});
  const std::int64_t plane = item_shape[1] * item_shape[2] * item_shape[3];
  for (std::size_t k = 0; k < values.size(); ++k)
    std::fill(out.data() + static_cast<std::int64_t>(k) * plane,
              out.data() + static_cast<std::int64_t>(k + 1) * plane,
              static_cast<float>(values[k]));
  return out;
}

float clip01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1)
    throw std::invalid_argument("train: batch size must be >= 1");
  if (!(lr0 > 0.0)) throw std::invalid_argument("train: lr0 must be > 0");
  if (lr_decay_every < 1 || !(lr_decay_factor > 0.0))
    throw std::invalid_argument("train: bad learning-rate schedule");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("train: alpha must lie in [0,1]");
  if (!(sigma_max_train > 0.0))
    throw std::invalid_argument("train: sigma_max_train must be > 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("train: val_fraction must lie in [0,1)");
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
  return config.lr0 /
         std::pow(config.lr_decay_factor, epoch / config.lr_decay_every);
}

std::vector<std::vector<int>> plan_batches(int n_items, int batch_size,
                                           Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n_items));
  std::iota(order.begin(), order.end(), 0);
  for (int i = n_items - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<int>> batches;
  for (int at = 0; at < n_items; at += batch_size) {
    const int end = std::min(n_items, at + batch_size);
    batches.emplace_back(order.begin() + at, order.begin() + end);
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

void write_train_log_header(std::ostream& os) {
  os << "epoch,recon_loss,aux_loss,total_loss,lr,val_psnr,seconds\n";
}

void write_train_log_row(std::ostream& os, const EpochLog& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g,%.8g,%.8g,%.5f,%.3f\n",
                row.epoch, row.recon_loss, row.aux_loss, row.total_loss,
                row.lr, row.val_psnr, row.seconds);
  os << buf;
}

TrainOutcome train(const ModelConfig& model_config, Dataset& dataset,
                   const TrainConfig& config, std::ostream* log_stream,
                   const EpochCallback& on_checkpoint) {
  model_config.validate();
  config.validate();
  if (dataset.size() < 2)
    throw std::invalid_argument("train: dataset too small");

  const int n_total = static_cast<int>(dataset.size());
  const int n_val = static_cast<int>(std::floor(config.val_fraction * n_total));
  const int n_train = n_total - n_val;
  if (n_train < 2) throw std::invalid_argument("train: no training items left");

  TrainOutcome outcome;
  outcome.params = init_params<float>(model_config, config.seed);
  if (log_stream) write_train_log_header(*log_stream);

  const double sigma_x = config.prior_std255 / 255.0;
  const double vx = sigma_x * sigma_x;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    resample_epoch(dataset);
    const double lr = lr_at(epoch, config);

    Rng shuffle_rng(derive_seed(derive_seed(config.seed, kTagShuffle),
                                static_cast<std::uint64_t>(epoch)));
    const auto batches =
        plan_batches(n_train, config.batch_size, shuffle_rng);

    double recon_acc = 0.0, aux_acc = 0.0, total_acc = 0.0;
    std::int64_t items_seen = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const std::vector<int>& idx = batches[bi];
      const Tensor<float> y = gather_batch(dataset.noisy, idx);
      const Tensor<float> x = gather_batch(dataset.clean, idx);

      Tape<float> tape;
      ParamBinder<float> bind(tape, outcome.params);
      const NodeId y_id = tape.leaf(y);
      const ModelOutputs<float> out =
          forward_model(tape, bind, model_config, y_id, BnMode::train);
      const NodeId x_id = tape.leaf(x);

      NodeId loss;
      double recon = 0.0, aux = 0.0;
      switch (model_config.variant) {
        case ModelVariant::residual: {
          loss = tape.mse(out.denoised, x_id);
          recon = tape.value(loss)[0];
          break;
        }
        case ModelVariant::fusion: {
          std::vector<double> f(idx.size());
          for (std::size_t k = 0; k < idx.size(); ++k) {
            const double sn =
                dataset.sigma255[static_cast<std::size_t>(idx[k])] / 255.0;
            f[k] = sn * sn / (vx + sn * sn);
          }
          const NodeId f_id = tape.leaf(per_item_constant(f, x.shape()));
          loss = fusion_loss(tape, out, x_id, f_id, config.alpha);
          recon = tape.value(tape.mse(out.denoised, x_id))[0];
          aux = tape.value(tape.mse(out.weight_pred, f_id))[0];
          break;
        }
        case ModelVariant::buifd: {
          std::vector<double> lvl(idx.size());
          for (std::size_t k = 0; k < idx.size(); ++k)
            lvl[k] = std::min(
                1.0, dataset.sigma255[static_cast<std::size_t>(idx[k])] /
                         config.sigma_max_train);
          const NodeId n_id = tape.leaf(per_item_constant(lvl, x.shape()));
          loss = buifd_loss(tape, out, x_id, n_id);
          recon = tape.value(tape.mse(out.denoised, x_id))[0];
          aux = tape.value(tape.mse(out.weight_pred, n_id))[0];
          break;
        }
      }

      const double total = tape.value(loss)[0];
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << " batch " << bi
            << " (recon=" << recon << " aux=" << aux << " total=" << total
            << ")";
        throw TrainError(msg.str());
      }

      outcome.params.zero_grads();
      tape.backward(loss);
      bind.harvest_grads();
      adam_step(outcome.params, {.lr = lr});

      const double w = static_cast<double>(idx.size());
      recon_acc += recon * w;
      aux_acc += aux * w;
      total_acc += total * w;
      items_seen += static_cast<std::int64_t>(idx.size());
    }

    EpochLog row;
    row.epoch = epoch;
    row.recon_loss = recon_acc / static_cast<double>(items_seen);
    row.aux_loss = aux_acc / static_cast<double>(items_seen);
    row.total_loss = total_acc / static_cast<double>(items_seen);
    row.lr = lr;

    if (n_val > 0) {
      // batched inference over the held-out slice, outputs clipped
      double psnr_acc = 0.0;
      for (int at = n_train; at < n_total; at += config.batch_size) {
        const int end = std::min(n_total, at + config.batch_size);
        std::vector<int> idx(static_cast<std::size_t>(end - at));
        std::iota(idx.begin(), idx.end(), at);
        const Tensor<float> noisy = gather_batch(dataset.noisy, idx);
        const Tensor<float> clean = gather_batch(dataset.clean, idx);
        Tensor<float> denoised =
            run_inference(model_config, outcome.params, noisy).denoised;
        for (std::int64_t i = 0; i < denoised.size(); ++i)
          denoised[i] = clip01(denoised[i]);
        const std::int64_t plane =
            clean.dim(1) * clean.dim(2) * clean.dim(3);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          Tensor<float> d({1, clean.dim(1), clean.dim(2), clean.dim(3)});
          Tensor<float> c({1, clean.dim(1), clean.dim(2), clean.dim(3)});
          std::copy(denoised.data() + static_cast<std::int64_t>(k) * plane,
                    denoised.data() + static_cast<std::int64_t>(k + 1) * plane,
                    d.data());
          std::copy(clean.data() + static_cast<std::int64_t>(k) * plane,
                    clean.data() + static_cast<std::int64_t>(k + 1) * plane,
                    c.data());
          psnr_acc += psnr(d, c, 1.0);
        }
      }
      row.val_psnr = psnr_acc / static_cast<double>(n_val);
      if (outcome.best_epoch < 0 || row.val_psnr > outcome.best_val_psnr) {
        outcome.best_epoch = epoch;
        outcome.best_val_psnr = row.val_psnr;
        outcome.best_params = outcome.params;
      }
    }

    row.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    outcome.log.epochs.push_back(row);
    if (log_stream) {
      write_train_log_row(*log_stream, row);
      log_stream->flush();
    }
    if (on_checkpoint && (epoch + 1) % config.checkpoint_every == 0)
      on_checkpoint(epoch, outcome.params, outcome.log);
  }

  if (outcome.best_epoch < 0) {
    outcome.best_params = outcome.params;
    outcome.best_epoch = config.epochs - 1;
  }
  return outcome;
}

}  // namespace bufd
