#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msrgcn/metrics.hpp"
#include "msrgcn/model.hpp"
#include "msrgcn/rng.hpp"
#include "msrgcn/synth.hpp"
#include "msrgcn/train.hpp"

namespace fs = std::filesystem;
using namespace msrgcn;

namespace {

std::string one_line(std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ';');
  return msg;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path + ": cannot open");
  try {
    return nlohmann::json::parse(f);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f << body;
  if (!f) throw std::runtime_error(path + ": write failed");
}

std::vector<ModelVariant> parse_variant_list(const std::string& csv) {
  std::vector<ModelVariant> out;
  std::stringstream in(csv);
  std::string token;
  while (std::getline(in, token, ',')) {
    const auto begin = token.find_first_not_of(" \t");
    const auto end = token.find_last_not_of(" \t");
    if (begin == std::string::npos)
      throw std::invalid_argument("empty variant name in list: " + csv);
    out.push_back(variant_from_id(token.substr(begin, end - begin + 1)));
  }
  if (out.empty()) throw std::invalid_argument("no variants given");
  return out;
}

// The train config, with in_dim defaulted from the dataset when the file does
// not pin it.
TrainConfig load_train_config(const std::string& path, const Dataset& ds) {
  const nlohmann::json j = read_json_file(path);
  TrainConfig cfg = train_config_from_json(j);
  if (!j.contains("model") || !j["model"].contains("in_dim"))
    cfg.model.in_dim = ds.feature_dim;
  return cfg;
}

void print_row(const RunReport& r) {
  std::printf("%-18s macro_auc %.4f +/- %.4f   qw_kappa %.4f +/- %.4f\n",
              r.variant.c_str(), r.mean_macro_auc, r.std_macro_auc,
              r.mean_qw_kappa, r.std_qw_kappa);
}

void save_fold_models(const std::string& out_dir, const RunReport& report,
                      const TrainConfig& cfg, int k_folds) {
  for (const FoldResult& f : report.folds) {
    nlohmann::ordered_json extra;
    extra["train"] = {{"seed", cfg.seed},
                      {"k_folds", k_folds},
                      {"fold_index", f.fold_index}};
    save_model((fs::path(out_dir) /
                ("model_fold" + std::to_string(f.fold_index) + ".bin"))
                   .string(),
               f.params, cfg.model, extra);
  }
}

int run_gen(const std::string& config_path, const std::string& out_dir) {
  const GenConfig cfg = gen_config_from_json(read_json_file(config_path));
  const DatasetManifest manifest = generate(cfg, out_dir);
  std::printf("generated %zu images in %s\n", manifest.images.size(),
              out_dir.c_str());
  return 0;
}

int run_train(const std::string& data_dir, const std::string& config_path,
              const std::string& variant, const std::string& out_dir) {
  const std::string manifest_path = (fs::path(data_dir) / "manifest.json").string();
  const Dataset ds = load_dataset(manifest_path);
  const DatasetManifest manifest = read_manifest(manifest_path);
  TrainConfig cfg = load_train_config(config_path, ds);
  cfg.model.variant = variant_from_id(variant);

  const FoldSpec folds = group_kfold(manifest, cfg.k_folds, cfg.seed);
  const RunReport report = run_experiment(ds, folds, cfg);

  fs::create_directories(out_dir);
  write_foldspec(folds, (fs::path(out_dir) / "foldspec.json").string());
  write_text((fs::path(out_dir) / "report.json").string(),
             run_report_json(report).dump(2) + "\n");
  save_fold_models(out_dir, report, cfg, cfg.k_folds);
  print_row(report);
  return 0;
}

int run_ablate(const std::string& data_dir, const std::string& config_path,
               const std::string& variants_csv, const std::string& out_dir) {
  const std::string manifest_path = (fs::path(data_dir) / "manifest.json").string();
  const Dataset ds = load_dataset(manifest_path);
  const DatasetManifest manifest = read_manifest(manifest_path);
  const TrainConfig cfg = load_train_config(config_path, ds);
  const std::vector<ModelVariant> variants = parse_variant_list(variants_csv);

  const FoldSpec folds = group_kfold(manifest, cfg.k_folds, cfg.seed);
  const std::vector<RunReport> rows = ablate(ds, folds, cfg, variants);

  fs::create_directories(out_dir);
  write_foldspec(folds, (fs::path(out_dir) / "foldspec.json").string());
  write_text((fs::path(out_dir) / "ablation.json").string(),
             ablation_to_json(rows));
  for (const RunReport& r : rows) print_row(r);
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_dir,
             const std::string& split) {
  if (split != "train" && split != "validation" && split != "test")
    throw std::invalid_argument("split must be train, validation or test: " + split);
  const SavedModel saved = load_model(model_path);
  const std::string manifest_path = (fs::path(data_dir) / "manifest.json").string();
  const Dataset ds = load_dataset(manifest_path);
  const DatasetManifest manifest = read_manifest(manifest_path);

  if (!saved.header.contains("train"))
    throw std::runtime_error(model_path + ": header lacks the train echo needed to rebuild folds");
  const nlohmann::json& tr = saved.header["train"];
  const auto seed = tr.at("seed").get<std::uint64_t>();
  const int k = tr.at("k_folds").get<int>();
  const int fold_index = tr.at("fold_index").get<int>();
  const FoldSpec folds = group_kfold(manifest, k, seed);
  if (fold_index < 0 || fold_index >= static_cast<int>(folds.folds.size()))
    throw std::runtime_error(model_path + ": fold index out of range");
  const Fold& fold = folds.folds[static_cast<std::size_t>(fold_index)];
  const std::vector<std::string>& ids = split == "train" ? fold.train
                                        : split == "validation" ? fold.validation
                                                                : fold.test;

  GraphCache cache;
  const MetricsReport report = compute_metrics(
      score_images(ds, ids, saved.params, saved.config, cache),
      saved.config.num_classes);
  std::printf("%s\n", report_to_json(report).c_str());
  return 0;
}

int run_heatmap(const std::string& model_path, const std::string& data_dir,
                const std::string& image_id, const std::string& out_path) {
  const SavedModel saved = load_model(model_path);
  const Dataset ds =
      load_dataset((fs::path(data_dir) / "manifest.json").string());
  const LoadedImage& img = ds.at(image_id);

  const GraphVariant gv = expected_graph_variant(saved.config.variant);
  const CompiledGraph graph(
      build_graph(img.record.grid_rows, img.record.grid_cols, gv));
  const Matrix feats = slice_features(img.features, img.record.grid_rows,
                                      img.record.grid_cols, gv);
  const ForwardTrace trace = forward(graph, feats, saved.params, saved.config);
  write_heatmap(heatmap(trace, graph), out_path);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int run_gradcheck(bool full_model) {
  ModelConfig cfg;
  cfg.variant = ModelVariant::Full;
  cfg.attention_dim = 16;
  cfg.classifier_hidden = 16;
  int grid = 2;
  if (full_model) {
    cfg.in_dim = 8;
    cfg.d1 = 4;
    cfg.d2 = 4;
    grid = 3;
  } else {
    cfg.in_dim = 6;
    cfg.d1 = 3;
    cfg.d2 = 3;
  }

  const CompiledGraph graph(build_graph(grid, grid, GraphVariant::full()));
  CounterRng rng(7, stream::kTest);
  Matrix features(graph.num_nodes(), cfg.in_dim);
  for (int i = 0; i < features.rows(); ++i)
    for (int j = 0; j < features.cols(); ++j)
      features(i, j) = rng.next_gaussian();
  const int label = 3;
  Vector weights(cfg.num_classes);
  for (int c = 0; c < cfg.num_classes; ++c) weights[c] = 0.5 + 0.25 * c;

  ModelParams params = init_params(cfg, rng);
  ModelParams grads = zeros_like(params);
  std::vector<ParamRef> refs = param_refs(params, grads);

  const ForwardTrace trace = forward(graph, features, params, cfg);
  Vector dlogits;
  weighted_cross_entropy(trace.logits, label, weights, &dlogits);
  backward(graph, trace, params, cfg, dlogits, grads);

  const auto loss = [&]() {
    const ForwardTrace t = forward(graph, features, params, cfg);
    return weighted_cross_entropy(t.logits, label, weights);
  };
  const GradReport report = grad_check(refs, loss, 1e-5, 1 << 20);

  for (const GradReport::Entry& e : report.entries)
    std::printf("%-24s max rel err %.3e\n", e.name.c_str(), e.max_rel_err);
  const bool pass = report.pass(1e-4);
  std::printf("gradcheck %s: max rel err %.3e (tol 1e-4) on a %dx%d %s graph\n",
              pass ? "PASS" : "FAIL", report.max_rel_err, grid, grid,
              full_model ? "full-model" : "reduced");
  if (!pass) {
    std::fprintf(stderr, "error: gradient check failed with max rel err %.3e\n",
                 report.max_rel_err);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale relational graph network for image-bag grading"};
  app.require_subcommand(1);
  int exit_code = 0;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string gen_config;
  std::string gen_out;
  gen->add_option("--config", gen_config, "Generator config JSON")->required();
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->callback([&] { exit_code = run_gen(gen_config, gen_out); });

  auto* train = app.add_subcommand("train", "Train one variant across folds");
  std::string train_data;
  std::string train_config;
  std::string train_variant;
  std::string train_out;
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--config", train_config, "Train config JSON")->required();
  train->add_option("--variant", train_variant, "Model variant id")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->callback(
      [&] { exit_code = run_train(train_data, train_config, train_variant, train_out); });

  auto* ab = app.add_subcommand("ablate", "Train several variants on shared folds");
  std::string ab_data;
  std::string ab_config;
  std::string ab_variants;
  std::string ab_out;
  ab->add_option("--data", ab_data, "Dataset directory")->required();
  ab->add_option("--config", ab_config, "Train config JSON")->required();
  ab->add_option("--variants", ab_variants, "Comma-separated variant ids")->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->callback([&] { exit_code = run_ablate(ab_data, ab_config, ab_variants, ab_out); });

  auto* ev = app.add_subcommand("eval", "Evaluate a saved model on a split");
  std::string ev_model;
  std::string ev_data;
  std::string ev_split;
  ev->add_option("--model", ev_model, "Model file")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "train, validation or test")->required();
  ev->callback([&] { exit_code = run_eval(ev_model, ev_data, ev_split); });

  auto* hm = app.add_subcommand("heatmap", "Export the attention heatmap of one image");
  std::string hm_model;
  std::string hm_data;
  std::string hm_image;
  std::string hm_out;
  hm->add_option("--model", hm_model, "Model file")->required();
  hm->add_option("--data", hm_data, "Dataset directory")->required();
  hm->add_option("--image", hm_image, "Image id")->required();
  hm->add_option("--out", hm_out, "Output file (.csv or .pgm)")->required();
  hm->callback([&] { exit_code = run_heatmap(hm_model, hm_data, hm_image, hm_out); });

  auto* gc = app.add_subcommand("gradcheck", "Check analytic gradients against central differences");
  bool gc_full = false;
  gc->add_flag("--full-model", gc_full, "Use the larger full-model configuration");
  gc->callback([&] { exit_code = run_gradcheck(gc_full); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return e.get_exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return exit_code;
}
