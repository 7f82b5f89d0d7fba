#include "msrgcn/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace msrgcn {

namespace {

constexpr char kModelMagic[8] = {'M', 'S', 'R', 'G', 'M', 'D', 'L', '1'};
constexpr std::uint32_t kModelVersion = 1;

void check_known_keys(const nlohmann::json& j,
                      const std::vector<std::string>& allowed,
                      const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

}  // namespace

double PlateauScheduler::observe(double metric) {
  if (metric < best_ * (1.0 - cfg_.rel_threshold)) {
    best_ = metric;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ > cfg_.patience) {
    lr_ = std::max(cfg_.min_lr, lr_ * cfg_.factor);
    bad_epochs_ = 0;
  }
  return lr_;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train config: betas must lie in [0,1)");
  if (!(scheduler.factor > 0.0 && scheduler.factor < 1.0))
    throw std::invalid_argument("train config: scheduler factor must lie in (0,1)");
  if (scheduler.patience < 0)
    throw std::invalid_argument("train config: scheduler patience must be >= 0");
  if (!(scheduler.min_lr >= 0.0) || !(scheduler.rel_threshold >= 0.0))
    throw std::invalid_argument("train config: scheduler bounds must be >= 0");
  if (k_folds < 1) throw std::invalid_argument("train config: k_folds must be >= 1");
  if (threads < 0) throw std::invalid_argument("train config: threads must be >= 0");
  model.validate();
}

const CompiledGraph& GraphCache::get(int grid_rows, int grid_cols,
                                     const GraphVariant& v) {
  const auto key = std::make_tuple(grid_rows, grid_cols, v);
  auto it = cache_.find(key);
  if (it == cache_.end())
    it = cache_.emplace(key, CompiledGraph(build_graph(grid_rows, grid_cols, v)))
             .first;
  return it->second;
}

Vector class_weights(const Dataset& ds, const std::vector<std::string>& ids,
                     int num_classes) {
  Vector counts = Vector::Zero(num_classes);
  for (const std::string& id : ids) {
    const int label = ds.at(id).record.label;
    if (label < 0 || label >= num_classes)
      throw std::invalid_argument("class_weights: label out of range for " + id);
    counts[label] += 1.0;
  }
  const double total = counts.sum();
  Vector w = Vector::Zero(num_classes);
  for (int c = 0; c < num_classes; ++c)
    if (counts[c] > 0.0) w[c] = total / (num_classes * counts[c]);
  return w;
}

namespace {

// Forward pass of one image under the variant's graph.
ForwardTrace forward_image(const Dataset& ds, const std::string& id,
                           const ModelParams& params, const ModelConfig& cfg,
                           GraphCache& cache, const CompiledGraph** graph_out) {
  const LoadedImage& img = ds.at(id);
  const GraphVariant gv = expected_graph_variant(cfg.variant);
  const CompiledGraph& g =
      cache.get(img.record.grid_rows, img.record.grid_cols, gv);
  const Matrix feats = slice_features(img.features, img.record.grid_rows,
                                      img.record.grid_cols, gv);
  if (graph_out != nullptr) *graph_out = &g;
  return forward(g, feats, params, cfg);
}

void zero_grads(std::vector<ParamRef>& refs) {
  for (ParamRef& r : refs) Eigen::Map<Vector>(r.grad, r.size()).setZero();
}

void scale_grads(std::vector<ParamRef>& refs, double factor) {
  for (ParamRef& r : refs) Eigen::Map<Vector>(r.grad, r.size()) *= factor;
}

}  // namespace

std::vector<ScoreRecord> score_images(const Dataset& ds,
                                      const std::vector<std::string>& ids,
                                      const ModelParams& params,
                                      const ModelConfig& cfg, GraphCache& cache) {
  std::vector<ScoreRecord> records;
  records.reserve(ids.size());
  for (const std::string& id : ids) {
    const ForwardTrace trace = forward_image(ds, id, params, cfg, cache, nullptr);
    records.push_back({ds.at(id).record.label, softmax(trace.logits)});
  }
  return records;
}

double split_loss(const Dataset& ds, const std::vector<std::string>& ids,
                  const ModelParams& params, const ModelConfig& cfg,
                  const Vector& weights, GraphCache& cache) {
  double loss_sum = 0.0;
  double weight_sum = 0.0;
  for (const std::string& id : ids) {
    const ForwardTrace trace = forward_image(ds, id, params, cfg, cache, nullptr);
    const int label = ds.at(id).record.label;
    loss_sum += weighted_cross_entropy(trace.logits, label, weights);
    weight_sum += weights[label];
  }
  return weight_sum > 0.0 ? loss_sum / weight_sum : 0.0;
}

FoldResult train_fold(const Dataset& ds, const Fold& fold, int fold_index,
                      const TrainConfig& cfg) {
  cfg.validate();
  if (fold.train.empty() || fold.validation.empty() || fold.test.empty())
    throw std::invalid_argument("train_fold: fold " + std::to_string(fold_index) +
                                " has an empty split");
  if (ds.feature_dim != cfg.model.in_dim)
    throw std::invalid_argument(
        "train_fold: dataset feature dim " + std::to_string(ds.feature_dim) +
        " != model in_dim " + std::to_string(cfg.model.in_dim));

  GraphCache cache;
  const Vector weights = class_weights(ds, fold.train, cfg.model.num_classes);

  CounterRng init_rng(cfg.seed, stream::kInit,
                      static_cast<std::uint64_t>(fold_index));
  ModelParams params = init_params(cfg.model, init_rng);
  ModelParams grads = zeros_like(params);
  std::vector<ParamRef> refs = param_refs(params, grads);

  AdamState adam;
  PlateauScheduler sched(cfg.lr, cfg.scheduler);

  FoldResult result;
  result.fold_index = fold_index;
  double best_val = std::numeric_limits<double>::infinity();
  ModelParams best_params = params;

  const std::uint64_t epoch_key =
      CounterRng::derive_key(cfg.seed, stream::kEpoch,
                             static_cast<std::uint64_t>(fold_index));
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    result.lr_history.push_back(sched.lr());

    std::vector<std::string> order = fold.train;
    CounterRng shuffle_rng(epoch_key, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      zero_grads(refs);
      double loss_sum = 0.0;
      double weight_sum = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        const CompiledGraph* g = nullptr;
        const ForwardTrace trace =
            forward_image(ds, order[i], params, cfg.model, cache, &g);
        const int label = ds.at(order[i]).record.label;
        Vector dlogits;
        loss_sum += weighted_cross_entropy(trace.logits, label, weights, &dlogits);
        weight_sum += weights[label];
        backward(*g, trace, params, cfg.model, dlogits, grads);
      }
      if (!std::isfinite(loss_sum))
        throw std::runtime_error(
            "train_fold: non-finite loss in fold " + std::to_string(fold_index) +
            ", epoch " + std::to_string(epoch) + ", batch starting at image " +
            std::to_string(start));
      if (weight_sum > 0.0) scale_grads(refs, 1.0 / weight_sum);
      AdamConfig step{sched.lr(), cfg.beta1, cfg.beta2, cfg.adam_eps};
      adam_step(refs, adam, step);
    }

    const double val_loss =
        split_loss(ds, fold.validation, params, cfg.model, weights, cache);
    if (!std::isfinite(val_loss))
      throw std::runtime_error("train_fold: non-finite validation loss in fold " +
                               std::to_string(fold_index) + ", epoch " +
                               std::to_string(epoch));
    result.val_loss_history.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      result.best_epoch = epoch;
      best_params = params;
    }
    sched.observe(val_loss);
  }

  result.best_val_loss = best_val;
  result.params = std::move(best_params);
  result.validation = compute_metrics(
      score_images(ds, fold.validation, result.params, cfg.model, cache),
      cfg.model.num_classes);
  result.test = compute_metrics(
      score_images(ds, fold.test, result.params, cfg.model, cache),
      cfg.model.num_classes);
  return result;
}

namespace {

void aggregate(RunReport& report) {
  const std::size_t n = report.folds.size();
  double auc = 0.0;
  double kappa = 0.0;
  for (const FoldResult& f : report.folds) {
    auc += f.test.macro_auc;
    kappa += f.test.qw_kappa;
  }
  report.mean_macro_auc = auc / static_cast<double>(n);
  report.mean_qw_kappa = kappa / static_cast<double>(n);
  double var_auc = 0.0;
  double var_kappa = 0.0;
  for (const FoldResult& f : report.folds) {
    var_auc += std::pow(f.test.macro_auc - report.mean_macro_auc, 2);
    var_kappa += std::pow(f.test.qw_kappa - report.mean_qw_kappa, 2);
  }
  if (n > 1) {
    report.std_macro_auc = std::sqrt(var_auc / static_cast<double>(n - 1));
    report.std_qw_kappa = std::sqrt(var_kappa / static_cast<double>(n - 1));
  }
}

}  // namespace

RunReport run_experiment(const Dataset& ds, const FoldSpec& folds,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (folds.folds.empty())
    throw std::invalid_argument("run_experiment: fold spec is empty");

  const int k = static_cast<int>(folds.folds.size());
  RunReport report;
  report.variant = variant_id(cfg.model.variant);
  report.folds.resize(static_cast<std::size_t>(k));

  unsigned workers = cfg.threads > 0
                         ? static_cast<unsigned>(cfg.threads)
                         : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, static_cast<unsigned>(k));

  if (workers <= 1) {
    for (int f = 0; f < k; ++f)
      report.folds[static_cast<std::size_t>(f)] =
          train_fold(ds, folds.folds[static_cast<std::size_t>(f)], f, cfg);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    const auto worker = [&] {
      for (;;) {
        const int f = next.fetch_add(1);
        if (f >= k) return;
        try {
          report.folds[static_cast<std::size_t>(f)] =
              train_fold(ds, folds.folds[static_cast<std::size_t>(f)], f, cfg);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  aggregate(report);
  return report;
}

std::vector<RunReport> ablate(const Dataset& ds, const FoldSpec& folds,
                              const TrainConfig& base,
                              const std::vector<ModelVariant>& variants) {
  if (variants.empty())
    throw std::invalid_argument("ablate: no variants requested");
  std::vector<RunReport> rows;
  rows.reserve(variants.size());
  for (const ModelVariant v : variants) {
    TrainConfig cfg = base;
    cfg.model.variant = v;
    rows.push_back(run_experiment(ds, folds, cfg));
  }
  return rows;
}

nlohmann::ordered_json run_report_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = r.variant;
  j["aggregate"] = {
      {"macro_auc", {{"mean", r.mean_macro_auc}, {"std", r.std_macro_auc}}},
      {"qw_kappa", {{"mean", r.mean_qw_kappa}, {"std", r.std_qw_kappa}}},
  };
  j["folds"] = nlohmann::ordered_json::array();
  for (const FoldResult& f : r.folds) {
    nlohmann::ordered_json fold;
    fold["fold"] = f.fold_index;
    fold["best_epoch"] = f.best_epoch;
    fold["best_val_loss"] = f.best_val_loss;
    fold["val_loss"] = f.val_loss_history;
    fold["lr"] = f.lr_history;
    fold["validation"] = report_json(f.validation);
    fold["test"] = report_json(f.test);
    j["folds"].push_back(std::move(fold));
  }
  return j;
}

std::string ablation_to_json(const std::vector<RunReport>& rows) {
  nlohmann::ordered_json j;
  j["variants"] = nlohmann::ordered_json::array();
  for (const RunReport& r : rows) j["variants"].push_back(run_report_json(r));
  return j.dump(2) + "\n";
}

namespace {

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t take_u32(const std::string& body, std::size_t& at,
                       const std::string& path) {
  if (at + 4 > body.size())
    throw std::runtime_error(path + ": truncated model file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(body[at + i]))
         << (8 * i);
  at += 4;
  return v;
}

double take_f64(const std::string& body, std::size_t& at,
                const std::string& path) {
  if (at + 8 > body.size())
    throw std::runtime_error(path + ": truncated model file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(body[at + i]))
            << (8 * i);
  at += 8;
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_model(const std::string& path, const ModelParams& params,
                const ModelConfig& cfg, const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json header;
  header["model"] = model_config_json(cfg);
  if (extra.is_object())
    for (const auto& [key, value] : extra.items()) header[key] = value;
  const std::string head = header.dump();

  std::string out(kModelMagic, sizeof kModelMagic);
  append_u32(out, kModelVersion);
  append_u32(out, static_cast<std::uint32_t>(head.size()));
  out += head;

  ModelParams copy = params;
  ModelParams dummy = zeros_like(copy);
  for (const ParamRef& r : param_refs(copy, dummy)) {
    append_u32(out, static_cast<std::uint32_t>(r.rows));
    append_u32(out, static_cast<std::uint32_t>(r.cols));
    const Eigen::Map<const Matrix> m(r.value, r.rows, r.cols);
    for (Eigen::Index row = 0; row < r.rows; ++row)
      for (Eigen::Index col = 0; col < r.cols; ++col)
        append_f64(out, m(row, col));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error(path + ": write failed");
}

SavedModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open");
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string body = buf.str();

  if (body.size() < sizeof kModelMagic ||
      std::memcmp(body.data(), kModelMagic, sizeof kModelMagic) != 0)
    throw std::runtime_error(path + ": bad magic, not a model file");
  std::size_t at = sizeof kModelMagic;
  const std::uint32_t version = take_u32(body, at, path);
  if (version != kModelVersion)
    throw std::runtime_error(path + ": unsupported model version " +
                             std::to_string(version));
  const std::uint32_t head_len = take_u32(body, at, path);
  if (at + head_len > body.size())
    throw std::runtime_error(path + ": truncated model file");

  SavedModel out;
  try {
    out.header = nlohmann::json::parse(body.substr(at, head_len));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": bad model header: " + e.what());
  }
  at += head_len;
  if (!out.header.contains("model"))
    throw std::runtime_error(path + ": model header lacks the config echo");
  out.config = model_config_from_json(out.header["model"]);
  out.params = zero_params(out.config);

  ModelParams dummy = zeros_like(out.params);
  for (const ParamRef& r : param_refs(out.params, dummy)) {
    const std::uint32_t rows = take_u32(body, at, path);
    const std::uint32_t cols = take_u32(body, at, path);
    if (rows != static_cast<std::uint32_t>(r.rows) ||
        cols != static_cast<std::uint32_t>(r.cols))
      throw std::runtime_error(path + ": tensor shape mismatch at " + r.name);
    Eigen::Map<Matrix> m(r.value, r.rows, r.cols);
    for (Eigen::Index row = 0; row < r.rows; ++row)
      for (Eigen::Index col = 0; col < r.cols; ++col)
        m(row, col) = take_f64(body, at, path);
  }
  if (at != body.size())
    throw std::runtime_error(path + ": trailing bytes after tensors");
  return out;
}

nlohmann::ordered_json model_config_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["in_dim"] = cfg.in_dim;
  j["d1"] = cfg.d1;
  j["d2"] = cfg.d2;
  j["attention_dim"] = cfg.attention_dim;
  j["classifier_hidden"] = cfg.classifier_hidden;
  j["num_classes"] = cfg.num_classes;
  j["variant"] = variant_id(cfg.variant);
  j["divide_by_incident"] = cfg.divide_by_incident;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  check_known_keys(j,
                   {"in_dim", "d1", "d2", "attention_dim", "classifier_hidden",
                    "num_classes", "variant", "divide_by_incident"},
                   "model config");
  ModelConfig cfg;
  cfg.in_dim = j.value("in_dim", cfg.in_dim);
  cfg.d1 = j.value("d1", cfg.d1);
  cfg.d2 = j.value("d2", cfg.d2);
  cfg.attention_dim = j.value("attention_dim", cfg.attention_dim);
  cfg.classifier_hidden = j.value("classifier_hidden", cfg.classifier_hidden);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  if (j.contains("variant"))
    cfg.variant = variant_from_id(j["variant"].get<std::string>());
  cfg.divide_by_incident = j.value("divide_by_incident", cfg.divide_by_incident);
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  check_known_keys(j,
                   {"batch_size", "max_epochs", "lr", "beta1", "beta2",
                    "adam_eps", "scheduler", "seed", "k_folds", "threads",
                    "model"},
                   "train config");
  TrainConfig cfg;
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  if (j.contains("scheduler")) {
    const nlohmann::json& s = j["scheduler"];
    check_known_keys(s, {"factor", "patience", "min_lr", "rel_threshold"},
                     "scheduler config");
    cfg.scheduler.factor = s.value("factor", cfg.scheduler.factor);
    cfg.scheduler.patience = s.value("patience", cfg.scheduler.patience);
    cfg.scheduler.min_lr = s.value("min_lr", cfg.scheduler.min_lr);
    cfg.scheduler.rel_threshold =
        s.value("rel_threshold", cfg.scheduler.rel_threshold);
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.k_folds = j.value("k_folds", cfg.k_folds);
  cfg.threads = j.value("threads", cfg.threads);
  if (j.contains("model")) cfg.model = model_config_from_json(j["model"]);
  cfg.validate();
  return cfg;
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  check_known_keys(j,
                   {"n_images", "grid_min", "grid_max", "feature_dim", "sigma",
                    "seed", "format"},
                   "gen config");
  GenConfig cfg;
  cfg.n_images = j.value("n_images", cfg.n_images);
  cfg.grid_min = j.value("grid_min", cfg.grid_min);
  cfg.grid_max = j.value("grid_max", cfg.grid_max);
  cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
  cfg.sigma = j.value("sigma", cfg.sigma);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.format = j.value("format", cfg.format);
  cfg.validate();
  return cfg;
}

}  // namespace msrgcn
