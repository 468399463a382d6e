#include "sml/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "sml/error.hpp"
#include "sml/eval.hpp"
#include "sml/index.hpp"

namespace sml {

void TrainConfig::validate() const {
  if (batch_size == 0) throw UsageError("batch_size must be at least 1");
  if (!(lr > 0)) throw UsageError("learning rate must be positive");
  if (!(lr_decay_factor > 0 && lr_decay_factor < 1)) throw UsageError("lr_decay_factor must be in (0, 1)");
  if (!(validation_fraction >= 0 && validation_fraction < 1)) throw UsageError("validation_fraction must be in [0, 1)");
  if (validation_cutoff == 0) throw UsageError("validation cutoff must be positive");
}

double validate(const Model& model, std::span<const Session> sessions, std::size_t cutoff) {
  SmlRecommender rec(model);
  EvalConfig cfg;
  cfg.cutoff = cutoff;
  return evaluate(rec, sessions, model.config().vocab_size, cfg).rec;
}

ad::Tensor batch_loss(ad::Tape& tape, const Model& model, std::span<const TrainingExample> batch,
                      const LossConfig& loss) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  std::vector<ItemIndex> unique;
  std::unordered_map<ItemIndex, std::int32_t> row;
  auto rows_of = [&](const std::vector<ItemIndex>& items) {
    std::vector<std::int32_t> out;
    for (auto i : items) {
      auto [it, fresh] = row.emplace(i, static_cast<std::int32_t>(unique.size()));
      if (fresh) unique.push_back(i);
      out.push_back(it->second);
    }
    return out;
  };
  std::vector<std::vector<std::int32_t>> pos_rows, neg_rows;
  for (const auto& ex : batch) {
    pos_rows.push_back(rows_of(ex.positives));
    neg_rows.push_back(rows_of(ex.negatives));
  }
  auto items = model.encode_items(tape, unique);
  const auto max_len = model.config().max_session_length;
  ad::Tensor total;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::span<const ItemIndex> prefix = batch[b].prefix;
    if (prefix.size() > max_len) prefix = prefix.subspan(prefix.size() - max_len);
    auto session = model.encode_session(tape, prefix);
    auto l = session_objective(tape, session, items, pos_rows[b], neg_rows[b], loss);
    total = total.defined() ? ad::add(tape, total, l) : l;
  }
  return ad::scale(tape, total, 1.0f / static_cast<float>(batch.size()));
}

TrainResult train(std::span<const Session> sessions, const Model& initial, const LossConfig& loss,
                  const SamplerConfig& sampler, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  loss.validate();
  sampler.validate();
  if (sessions.empty()) throw DataError("training needs at least one session");

  // Hold out the most recent sessions.
  std::vector<Session> fit, held_out;
  {
    Dataset tmp;
    tmp.sessions.assign(sessions.begin(), sessions.end());
    if (config.validation_fraction > 0) {
      auto parts = partition_by_start_time(tmp, config.validation_fraction);
      fit = std::move(parts.first);
      for (auto& s : parts.second)
        if (s.items.size() >= 2) held_out.push_back(std::move(s));
    } else {
      fit = std::move(tmp.sessions);
    }
  }
  if (fit.empty()) throw DataError("no training sessions left after holding out validation sessions");

  TrainResult result{initial.clone(), {}, 0, held_out.size()};
  if (config.max_epochs == 0) return result;

  Model model = initial.clone();
  const auto vocab_size = model.config().vocab_size;
  const bool have_val = !held_out.empty();
  double best = have_val ? validate(model, held_out, config.validation_cutoff) : -1.0;
  double reference = best;  // score the next epoch has to improve on
  ad::AdamConfig adam;
  adam.lr = config.lr;
  std::size_t reductions = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto examples = build_epoch(fit, vocab_size, sampler, epoch, sampler.knn_augment ? &model : nullptr);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < examples.size(); start += config.batch_size) {
      const auto end = std::min(examples.size(), start + config.batch_size);
      ad::Tape tape;
      auto l = batch_loss(tape, model, std::span<const TrainingExample>(examples).subspan(start, end - start), loss);
      const double value = l.item();
      if (!std::isfinite(value))
        throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches + 1));
      if (l.requires_grad()) tape.backward(l);
      ad::adam_step(model.params(), adam);
      loss_sum += value;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.lr = adam.lr;
    rec.val_rec = std::numeric_limits<double>::quiet_NaN();
    bool stop = false;
    if (have_val) {
      rec.val_rec = validate(model, held_out, config.validation_cutoff);
      if (rec.val_rec > best) {
        best = rec.val_rec;
        result.model = model.clone();
        result.best_epoch = epoch;
      }
      const double gain = reference > 0 ? (rec.val_rec - reference) / reference : (rec.val_rec > 0 ? 1.0 : 0.0);
      if (gain < config.improvement_threshold) {
        adam.lr *= config.lr_decay_factor;
        stop = ++reductions >= config.max_lr_reductions;
      }
      reference = std::max(reference, rec.val_rec);
    } else {
      result.model = model.clone();
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stop) break;
  }
  return result;
}

void write_history_csv(std::span<const EpochRecord> history, std::ostream& out) {
  out << "epoch,train_loss,val_rec20,lr\n";
  char line[128];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_rec, r.lr);
    out << line;
  }
}

}  // namespace sml
