#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajcl/causalhead.hpp"
#include "trajcl/checkpoint.hpp"
#include "trajcl/model.hpp"
#include "trajcl/trajdata.hpp"

namespace trajcl {

enum class Precision { kFloat32, kFloat64 };

Precision precision_from_string(const std::string& s);
std::string to_string(Precision p);

struct TrainConfig {
  // optimizer schedule
  double lr0 = 0.001;
  double lr_decay = 0.1;
  int decay_every = 30;
  int patience = 20;
  int batch_size = 256;
  int max_epochs = 150;
  uint64_t seed = 1;
  LossWeights weights;

  // model hyperparameters
  RunMode mode = RunMode::kTrajCL;
  Variant variant = Variant::kFull;
  int d = 64;
  int k = 50;
  double tau = 1.0;
  bool share_heads = true;
  bool detach_intervention = false;
  FeatureMode feature_mode = FeatureMode::kCoords;
  Precision precision = Precision::kFloat32;
  int n_classes = 0;  // 0: inferred from the training labels

  void validate() const;
};

/// Closed-form step schedule: lr0 * decay^floor(epoch / decay_every).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct EpochRecord {
  int epoch = 0;
  double l_cau = 0, l_con = 0, l_int = 0, total = 0;
  double val_acc = 0;
  double lr = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_acc = 0;        // live-model validation accuracy at best_epoch
  double checkpoint_val_acc = 0;  // the saved checkpoint re-evaluated on val
  std::string stop_reason;        // "early_stop" or "max_epochs"

  std::string to_csv() const;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainReport report;
};

/// Seeded mini-batch training with per-epoch validation, patience-based
/// early stopping, and a best-validation checkpoint. Splits must carry raw
/// (unnormalized) instances with context; normalization statistics are
/// fitted on the training split and stored in the checkpoint.
TrainResult train(const DatasetSplits& data, const TrainConfig& cfg);

/// Eval-mode accuracy of a saved checkpoint on raw instances.
double evaluate(const Checkpoint& ck, const std::vector<TrajInstance>& split);

/// Per-instance predictions of a saved checkpoint (same path as evaluate).
std::vector<int> predict_with_checkpoint(const Checkpoint& ck,
                                         const std::vector<TrajInstance>& split);

/// Eval-mode per-point export info for visualization: prototype id and
/// confounding-mask value per trajectory point.
struct PointAlignment {
  std::vector<int> proto_ids;       // flattened per instance, length = n_i
  std::vector<double> mask_values;  // same layout
};
std::vector<PointAlignment> alignment_with_checkpoint(const Checkpoint& ck,
                                                      const std::vector<TrajInstance>& split);

/// Trains the requested ablation variant under the same schedule and seed,
/// returning the test-split accuracy.
double run_ablation(Variant variant, const DatasetSplits& data, TrainConfig cfg);

/// Trains one comparison mode (base / env / trajcl) and returns the
/// test-split accuracy.
double run_mode(RunMode mode, const DatasetSplits& data, TrainConfig cfg);

std::string checkpoint_metadata_json(const TrainConfig& cfg, const NormStats& stats,
                                     int n_classes, int best_epoch, double best_val_acc);

}  // namespace trajcl
