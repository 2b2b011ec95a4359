#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "essm/ingest.hpp"
#include "essm/model.hpp"
#include "essm/rng.hpp"
#include "essm/tensor.hpp"

namespace essm::train {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
  double lr = 1e-3;
  double lambda_spectral = 1.0;
  double mask_channels_prob = 0.0;  // per-channel drop probability (augmentation)
  bool freeze_encoder = false;
  bool from_scratch = false;
  std::size_t eval_every = 50;
  std::size_t patience = 10;       // early stop after this many non-improving evals
  double val_fraction = 0.1;       // of training patients, for checkpoint selection
  std::size_t lr_decay_every = 0;  // step-decay hook; 0 = constant lr (the default)
  double lr_decay_factor = 0.5;

  void validate() const;
};

template <typename Config, typename F>
void visit_train_fields(Config& c, F&& f) {
  f("seed", c.seed);
  f("batch_size", c.batch_size);
  f("steps", c.steps);
  f("lr", c.lr);
  f("lambda_spectral", c.lambda_spectral);
  f("mask_channels_prob", c.mask_channels_prob);
  f("freeze_encoder", c.freeze_encoder);
  f("from_scratch", c.from_scratch);
  f("eval_every", c.eval_every);
  f("patience", c.patience);
  f("val_fraction", c.val_fraction);
  f("lr_decay_every", c.lr_decay_every);
  f("lr_decay_factor", c.lr_decay_factor);
}

struct RunReport {
  double final_loss_mse = 0.0;
  double final_loss_spec = 0.0;
  double final_loss_total = 0.0;
  std::optional<double> auroc;   // held-out AUROC; empty for reconstruction runs
  bool auroc_undefined = false;  // true when the eval split had one class
  std::string metrics_path;
  std::string checkpoint_path;
  std::string report_path;
};

/// Self-supervised reconstruction pretraining over the manifest's train
/// split. Shuffled batches from a seeded PRNG; best-by-validation-loss
/// checkpointing; JSONL metric log ({step, loss_mse, loss_spec, loss_total}).
/// The reported final losses are an evaluation pass over the train split.
RunReport pretrain(const ingest::WindowsManifest& manifest, const model::ModelConfig& mcfg,
                   const TrainConfig& tcfg, const std::string& out_dir);

/// Seizure-detection fine-tuning (BCE on balanced batches). Starts from
/// `checkpoint` unless tcfg.from_scratch; the checkpoint file is never
/// mutated. Reports AUROC on the held-out test split (undefined marker if
/// that split is single-class).
RunReport finetune(const ingest::WindowsManifest& manifest, const std::string& checkpoint,
                   const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                   const std::string& out_dir);

/// No parameter updates: reconstruction losses and (when both classes are
/// present) AUROC over one split.
RunReport evaluate(const ingest::WindowsManifest& manifest, const std::string& checkpoint,
                   const std::string& split, const std::string& out_dir);

/// Each channel of each sample is zeroed independently with probability
/// `prob`; a sample that would lose every channel is redrawn, so at least
/// one channel always survives.
TensorF mask_channels(const TensorF& x, double prob, Rng& rng);

struct AblationReport {
  RunReport with_spectral;
  RunReport without_spectral;
  std::string report_path;
};

/// Runs pretraining twice (lambda as configured, then lambda = 0) and emits
/// one comparative report.
AblationReport spectral_ablation(const ingest::WindowsManifest& manifest,
                                 const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                                 const std::string& out_dir);

struct ComparisonReport {
  RunReport pretrained;
  RunReport from_scratch;
  std::string report_path;
};

/// Runs fine-tuning twice (from the checkpoint, then from scratch) and emits
/// one comparative report with both AUROCs.
ComparisonReport scratch_comparison(const ingest::WindowsManifest& manifest,
                                    const std::string& checkpoint,
                                    const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                                    const std::string& out_dir);

}  // namespace essm::train
