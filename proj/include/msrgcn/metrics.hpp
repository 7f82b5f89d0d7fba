#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "msrgcn/nn.hpp"

namespace msrgcn {

// Row = ground truth, column = prediction.
using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ScoreRecord {
  int label = 0;
  Vector scores;  // K class probabilities
};

struct MetricsReport {
  double macro_auc = 0.0;
  // One-vs-rest AUC per class; NaN for classes without both positives and
  // negatives (excluded from the macro mean).
  std::vector<double> per_class_auc;
  double qw_kappa = 0.0;
  CountMatrix confusion;
  double accuracy = 0.0;
};

// Quadratic-weighted Cohen's kappa: w_ij = (i-j)^2/(K-1)^2,
// kappa = 1 - sum(w*O)/sum(w*E) with E_ij = row_i*col_j/N. When the expected
// disagreement is zero (all mass in one cell) returns 1 for perfect observed
// agreement, else 0. Throws std::invalid_argument on an empty or non-square
// matrix.
double qw_kappa(const CountMatrix& cm);

// Index of the largest score; ties break toward the lowest class index.
int argmax_lowest(const Vector& scores);

// Counts by (truth, prediction). Throws on length mismatch or out-of-range
// entries.
CountMatrix confusion(const std::vector<int>& labels,
                      const std::vector<int>& preds, int num_classes);

// Macro-averaged one-vs-rest ROC AUC via the midrank statistic:
// AUC_c = (sum of positive ranks - n_pos(n_pos+1)/2) / (n_pos*n_neg).
// Classes missing positives or negatives are skipped (NaN in *per_class).
// Throws std::invalid_argument when no class has both.
double macro_auc(const std::vector<ScoreRecord>& records,
                 std::vector<double>* per_class = nullptr);

// Full report over a score set: argmax predictions, confusion, accuracy,
// kappa, AUCs.
MetricsReport compute_metrics(const std::vector<ScoreRecord>& records,
                              int num_classes);

// Report with keys macro_auc, per_class_auc, qw_kappa, confusion, accuracy.
// Byte-stable for identical inputs; excluded AUCs serialize as null.
nlohmann::ordered_json report_json(const MetricsReport& report);
std::string report_to_json(const MetricsReport& report);

}  // namespace msrgcn
