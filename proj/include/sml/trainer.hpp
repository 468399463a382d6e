#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "sml/data.hpp"
#include "sml/encoders.hpp"
#include "sml/losses.hpp"
#include "sml/sampling.hpp"

namespace sml {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 150;
  double lr = 0.001;
  double lr_decay_factor = 0.1;
  // Relative REC@k gain below which the learning rate is lowered.
  double improvement_threshold = 0.005;
  double validation_fraction = 0.05;
  std::size_t max_lr_reductions = 3;
  std::size_t validation_cutoff = 20;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean over batches
  double val_rec = 0;     // NaN without validation sessions
  double lr = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0: the initial model was never beaten
  std::size_t validation_sessions = 0;
};

/// REC@cutoff of `model` on `sessions`.
double validate(const Model& model, std::span<const Session> sessions, std::size_t cutoff = 20);

/// Mean session objective over one mini-batch, on one tape. Items of the
/// batch are encoded once.
ad::Tensor batch_loss(ad::Tape& tape, const Model& model, std::span<const TrainingExample> batch,
                      const LossConfig& loss);

/// Trains a copy of `initial`. The last validation_fraction of sessions by
/// start time are held out for the learning-rate schedule and never
/// produce gradients. Returns the checkpoint with the best validation
/// REC@k. Throws DivergenceError on a non-finite loss.
TrainResult train(std::span<const Session> sessions, const Model& initial, const LossConfig& loss,
                  const SamplerConfig& sampler, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_history_csv(std::span<const EpochRecord> history, std::ostream& out);

}  // namespace sml
