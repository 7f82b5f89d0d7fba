#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "msrgcn/metrics.hpp"
#include "msrgcn/model.hpp"
#include "msrgcn/synth.hpp"

namespace msrgcn {

struct SchedulerConfig {
  double factor = 0.3;
  int patience = 10;
  double min_lr = 1e-6;
  double rel_threshold = 1e-4;
};

// Reduce-on-plateau over a minimized quantity: an epoch counts as an
// improvement when metric < best*(1 - rel_threshold); after more than
// `patience` consecutive non-improving epochs the learning rate is multiplied
// by `factor` (floored at min_lr) and the counter resets.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, const SchedulerConfig& cfg) : lr_(lr), cfg_(cfg) {}

  double lr() const { return lr_; }
  // Feeds one epoch's monitored value; returns the rate for the next epoch.
  double observe(double metric);

 private:
  double lr_;
  SchedulerConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

struct TrainConfig {
  int batch_size = 32;  // images per optimization step
  int max_epochs = 100;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  SchedulerConfig scheduler;
  std::uint64_t seed = 1;
  int k_folds = 5;
  int threads = 1;  // fold-level parallelism; results are order-independent
  ModelConfig model;

  void validate() const;  // throws std::invalid_argument
};

// Topologies depend only on geometry, so compiled graphs are shared across
// images via this cache. Not thread-safe; use one per worker.
class GraphCache {
 public:
  const CompiledGraph& get(int grid_rows, int grid_cols, const GraphVariant& v);

 private:
  std::map<std::tuple<int, int, GraphVariant>, CompiledGraph> cache_;
};

struct FoldResult {
  int fold_index = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::vector<double> val_loss_history;  // one entry per epoch
  std::vector<double> lr_history;        // rate used during each epoch
  MetricsReport validation;              // best-epoch parameters on validation
  MetricsReport test;                    // best-epoch parameters on test
  ModelParams params;                    // best-epoch parameters
};

struct RunReport {
  std::string variant;
  std::vector<FoldResult> folds;
  // Mean and sample standard deviation of the fold test metrics.
  double mean_macro_auc = 0.0;
  double std_macro_auc = 0.0;
  double mean_qw_kappa = 0.0;
  double std_qw_kappa = 0.0;
};

// Inverse-frequency class weights over the listed images:
// w_c = N_total / (num_classes * N_c), zero for absent classes.
Vector class_weights(const Dataset& ds, const std::vector<std::string>& ids,
                     int num_classes);

// Class-probability records for the listed images under the given parameters.
std::vector<ScoreRecord> score_images(const Dataset& ds,
                                      const std::vector<std::string>& ids,
                                      const ModelParams& params,
                                      const ModelConfig& cfg, GraphCache& cache);

// Weight-normalized mean cross-entropy over the listed images.
double split_loss(const Dataset& ds, const std::vector<std::string>& ids,
                  const ModelParams& params, const ModelConfig& cfg,
                  const Vector& weights, GraphCache& cache);

// Trains one fold: shuffled mini-batches, weighted cross-entropy, Adam, the
// plateau scheduler on validation loss, and best-validation-epoch parameter
// selection. Throws std::runtime_error with a diagnostic when the loss turns
// non-finite.
FoldResult train_fold(const Dataset& ds, const Fold& fold, int fold_index,
                      const TrainConfig& cfg);

// Trains every fold in `folds` (optionally in parallel) and aggregates the
// test metrics. Fold results are deterministic and aggregated in fold order,
// so the report does not depend on the thread count.
RunReport run_experiment(const Dataset& ds, const FoldSpec& folds,
                         const TrainConfig& cfg);

// One run per variant over the same fold spec and seeds.
std::vector<RunReport> ablate(const Dataset& ds, const FoldSpec& folds,
                              const TrainConfig& base,
                              const std::vector<ModelVariant>& variants);

nlohmann::ordered_json run_report_json(const RunReport& r);
// The ablation table: one row per variant, keyed by variant id.
std::string ablation_to_json(const std::vector<RunReport>& rows);

// Model file: 8-byte magic, u32 version, u32 header length, JSON header
// echoing the model config (plus caller extras such as the training seed and
// fold), then every tensor in declaration order as u32 rows, u32 cols and
// row-major little-endian f64 values.
void save_model(const std::string& path, const ModelParams& params,
                const ModelConfig& cfg, const nlohmann::ordered_json& extra = {});

struct SavedModel {
  ModelParams params;
  ModelConfig config;
  nlohmann::json header;  // full config echo
};

SavedModel load_model(const std::string& path);

// Config (de)serialization with defaulted keys.
nlohmann::ordered_json model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
GenConfig gen_config_from_json(const nlohmann::json& j);

}  // namespace msrgcn
