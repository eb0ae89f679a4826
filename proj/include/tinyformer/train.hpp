#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tinyformer/config.hpp"
#include "tinyformer/data.hpp"
#include "tinyformer/eval.hpp"
#include "tinyformer/model.hpp"

namespace tinyformer {

struct TrainOptions {
  double lr = 5e-4;
  double weight_decay = 1.25e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t warmup = 100;
  double grad_clip = 0.1;
  std::size_t max_steps = 0;   // 0 = no cap
  std::size_t eval_every = 1;  // 0 = only after the last epoch
  std::uint64_t seed = 1;      // drives the per-epoch shuffles

  static TrainOptions from(const RunConfig& cfg);
};

/// One line of the training log. Grammar, one record per line:
///   epoch=<int> steps=<int> loss=<f> loss_cls=<f> loss_l1=<f> loss_giou=<f> ap=<f> ap50=<f> ap_s=<f>
/// Losses are means over the epoch's steps; AP fields are "nan" on epochs
/// that were not evaluated.
struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;  // cumulative
  double loss = 0, loss_cls = 0, loss_l1 = 0, loss_giou = 0;
  bool evaluated = false;
  EvalResult eval;
};
std::string format_record(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
};

/// Settings matching the dataset's extent and area thresholds.
EvalSettings eval_settings(const Dataset& ds);

/// Inference-mode predictions (top-100 per image, no suppression).
template <typename T>
std::vector<std::vector<Detection>> predict(const Detector<T>& model, const Dataset& ds, std::size_t batch_size);

template <typename T>
EvalResult evaluate(const Detector<T>& model, const Dataset& ds, std::size_t batch_size);

/// AdamW with linear warmup and global-norm clipping. `eval_set` may be
/// null. `on_epoch` sees every record as soon as it is complete.
template <typename T>
TrainResult train_detector(Detector<T>& model, const Dataset& train_set, const Dataset* eval_set,
                           const TrainOptions& opt, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Training data from the config: loaded when a path is set, synthesized
/// from the seed otherwise.
Dataset train_dataset(const RunConfig& cfg);
Dataset eval_dataset(const RunConfig& cfg);

struct AblationRow {
  AblationArm arm;
  std::vector<EvalResult> per_seed;
  EvalResult mean;
};

/// The four-arm component grid. Every arm of seed k is initialized from the
/// same model seed, so identically named parameters start equal.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Dataset& train_set, const Dataset& eval_set,
                                      const std::function<void(const std::string&)>& progress = {});
std::string format_ablation(const std::vector<AblationRow>& rows);

/// Model seed of ablation repetition k.
std::uint64_t ablation_seed(std::uint64_t base, std::size_t k);

}  // namespace tinyformer
