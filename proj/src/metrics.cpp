#include "msrgcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace msrgcn {

double qw_kappa(const CountMatrix& cm) {
  const int k = static_cast<int>(cm.rows());
  if (k == 0 || cm.cols() != k)
    throw std::invalid_argument("qw_kappa: confusion matrix must be square and non-empty");
  const double n = static_cast<double>(cm.sum());
  if (n <= 0.0) throw std::invalid_argument("qw_kappa: empty confusion matrix");
  if (k == 1) return 1.0;  // single class, necessarily perfect agreement

  const double denom = static_cast<double>(k - 1) * (k - 1);
  std::vector<double> row(static_cast<std::size_t>(k), 0.0);
  std::vector<double> col(static_cast<std::size_t>(k), 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      row[static_cast<std::size_t>(i)] += static_cast<double>(cm(i, j));
      col[static_cast<std::size_t>(j)] += static_cast<double>(cm(i, j));
    }

  double observed = 0.0;
  double expected = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double w = static_cast<double>(i - j) * (i - j) / denom;
      observed += w * static_cast<double>(cm(i, j));
      expected += w * row[static_cast<std::size_t>(i)] *
                  col[static_cast<std::size_t>(j)] / n;
    }
  if (expected == 0.0)
    return static_cast<double>(cm.diagonal().sum()) == n ? 1.0 : 0.0;
  return 1.0 - observed / expected;
}

int argmax_lowest(const Vector& scores) {
  if (scores.size() == 0)
    throw std::invalid_argument("argmax_lowest: empty score vector");
  int best = 0;
  for (int i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

CountMatrix confusion(const std::vector<int>& labels,
                      const std::vector<int>& preds, int num_classes) {
  if (labels.size() != preds.size())
    throw std::invalid_argument("confusion: labels/preds length mismatch");
  if (num_classes < 1)
    throw std::invalid_argument("confusion: num_classes must be >= 1");
  CountMatrix cm = CountMatrix::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i];
    const int p = preds[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw std::invalid_argument("confusion: entry out of range at sample " +
                                  std::to_string(i));
    cm(t, p) += 1;
  }
  return cm;
}

namespace {

// One-vs-rest AUC for one class from (score, is_positive) pairs, midranks for
// ties. Returns NaN when the class lacks positives or negatives.
double binary_auc(std::vector<std::pair<double, bool>>& samples) {
  std::size_t n_pos = 0;
  for (const auto& [score, pos] : samples) n_pos += pos ? 1u : 0u;
  const std::size_t n_neg = samples.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    return std::numeric_limits<double>::quiet_NaN();

  std::sort(samples.begin(), samples.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < samples.size()) {
    std::size_t j = i;
    while (j < samples.size() && samples[j].first == samples[i].first) ++j;
    // Items i..j-1 share the midrank ((i+1) + j) / 2 (1-based average).
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (samples[t].second) rank_sum += midrank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

}  // namespace

double macro_auc(const std::vector<ScoreRecord>& records,
                 std::vector<double>* per_class) {
  if (records.size() < 2)
    throw std::invalid_argument("macro_auc: need at least 2 samples");
  const int k = static_cast<int>(records.front().scores.size());
  for (const ScoreRecord& r : records) {
    if (r.scores.size() != k)
      throw std::invalid_argument("macro_auc: inconsistent score lengths");
    if (r.label < 0 || r.label >= k)
      throw std::invalid_argument("macro_auc: label out of range");
    if (!r.scores.allFinite())
      throw std::invalid_argument("macro_auc: non-finite score");
  }

  std::vector<double> aucs(static_cast<std::size_t>(k),
                           std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  int valid = 0;
  for (int c = 0; c < k; ++c) {
    std::vector<std::pair<double, bool>> samples;
    samples.reserve(records.size());
    for (const ScoreRecord& r : records)
      samples.emplace_back(r.scores[c], r.label == c);
    const double auc = binary_auc(samples);
    aucs[static_cast<std::size_t>(c)] = auc;
    if (!std::isnan(auc)) {
      total += auc;
      ++valid;
    }
  }
  if (valid == 0)
    throw std::invalid_argument("macro_auc: no class has both positives and negatives");
  if (per_class != nullptr) *per_class = aucs;
  return total / valid;
}

MetricsReport compute_metrics(const std::vector<ScoreRecord>& records,
                              int num_classes) {
  if (records.empty())
    throw std::invalid_argument("compute_metrics: no records");
  std::vector<int> labels;
  std::vector<int> preds;
  labels.reserve(records.size());
  preds.reserve(records.size());
  for (const ScoreRecord& r : records) {
    labels.push_back(r.label);
    preds.push_back(argmax_lowest(r.scores));
  }
  MetricsReport rep;
  rep.confusion = confusion(labels, preds, num_classes);
  rep.accuracy = static_cast<double>(rep.confusion.diagonal().sum()) /
                 static_cast<double>(records.size());
  rep.qw_kappa = qw_kappa(rep.confusion);
  try {
    rep.macro_auc = macro_auc(records, &rep.per_class_auc);
  } catch (const std::invalid_argument&) {
    // Degenerate split (no class with both positives and negatives): report
    // the rest of the metrics and mark every AUC as undefined.
    rep.macro_auc = std::numeric_limits<double>::quiet_NaN();
    rep.per_class_auc.assign(static_cast<std::size_t>(num_classes),
                             std::numeric_limits<double>::quiet_NaN());
  }
  return rep;
}

nlohmann::ordered_json report_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["macro_auc"] = report.macro_auc;
  j["per_class_auc"] = nlohmann::ordered_json::array();
  for (const double auc : report.per_class_auc) {
    if (std::isnan(auc))
      j["per_class_auc"].push_back(nullptr);
    else
      j["per_class_auc"].push_back(auc);
  }
  j["qw_kappa"] = report.qw_kappa;
  j["confusion"] = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < report.confusion.rows(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < report.confusion.cols(); ++c)
      row.push_back(report.confusion(i, c));
    j["confusion"].push_back(row);
  }
  j["accuracy"] = report.accuracy;
  return j;
}

std::string report_to_json(const MetricsReport& report) {
  return report_json(report).dump(2);
}

}  // namespace msrgcn
