#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msaec/datagen.hpp"
#include "msaec/model.hpp"
#include "msaec/tensor.hpp"

namespace msaec {

enum class LossReduction { kMean, kSum };

// Squared error between two [1 x n] waveforms, summed or averaged over n.
Tensor mse_loss(const Tensor& estimate, const Tensor& target, LossReduction reduction = LossReduction::kMean);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
  AdamConfig config;
};

using Gradients = std::vector<std::vector<double>>;

OptimizerState adam_init(const std::vector<Tensor>& params, const AdamConfig& config = {});

// Bias-corrected Adam update, in place on the parameter storage.
void adam_step(const std::vector<Tensor>& params, const Gradients& grads, OptimizerState& state, double lr);

// Rescales grads so their global L2 norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 leaves them unchanged.
double clip_global_norm(Gradients& grads, double max_norm);

struct TrainConfig {
  std::size_t epochs_max = 200;
  double lr_start = 1e-4;
  double lr_end = 1e-8;
  std::size_t early_stop_patience = 10;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1;  // epochs between resumable state files
  LossReduction loss = LossReduction::kMean;
  double grad_clip = 5.0;  // global norm; 0 disables
  std::size_t jobs = 1;

  void validate() const;
};

// Exact set of keys accepted in a training config file.
std::vector<std::string> train_config_keys();
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);

// Geometric interpolation from lr_start (epoch 0) to lr_end (last epoch).
double lr_schedule(std::size_t epoch, const TrainConfig& config);

// True iff the last `patience` entries each failed to strictly improve on
// the best loss seen before them.
bool early_stop_check(const std::vector<double>& val_losses, std::size_t patience);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
  bool best = false;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;

  std::vector<double> val_losses() const;
  // One JSON object per line.
  std::string to_lines() const;
};

struct TrainItem {
  std::string id;
  Tensor far;      // [1 x n]
  Tensor mixture;  // [1 x n]
  Tensor near;     // [1 x n]
};

std::vector<TrainItem> make_train_items(const std::vector<Utterance>& utterances);

struct StepResult {
  double loss = 0.0;  // mean over the batch
  Gradients grads;    // mean over the batch, before clipping
};

// Loss and gradients for a batch; items are processed on up to `jobs`
// threads and reduced in batch order.
StepResult batch_gradients(const ModelParams& params, const std::vector<const TrainItem*>& batch,
                           LossReduction reduction, std::size_t jobs);

// Mean loss over items without recording a tape.
double evaluate_loss(const ModelParams& params, const std::vector<TrainItem>& items, LossReduction reduction,
                     std::size_t jobs);

struct TrainOptions {
  std::string out_dir;  // best.ckpt, train_state.bin, train_log.jsonl; empty: nothing written
  bool resume = false;  // continue from out_dir/train_state.bin
  // Called after every epoch; returning false stops training (the state of
  // the finished epoch is saved first).
  std::function<bool(const EpochRecord&)> on_epoch_end;
};

struct TrainResult {
  ModelParams params;  // best-validation parameters
  TrainLog log;
  bool stopped_early = false;
};

TrainResult train(const ModelConfig& model_config, const std::vector<TrainItem>& train_items,
                  const std::vector<TrainItem>& val_items, const TrainConfig& config, const TrainOptions& options = {});

inline constexpr const char* kBestCheckpointName = "best.ckpt";
inline constexpr const char* kTrainStateName = "train_state.bin";
inline constexpr const char* kTrainLogName = "train_log.jsonl";

}  // namespace msaec
