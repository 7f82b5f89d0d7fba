#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msrgcn/graph.hpp"
#include "msrgcn/nn.hpp"

namespace msrgcn {

// Synthetic dataset generator settings. The label construction is
// scale-split: the coarse class group (label/2) is encoded only in the
// 5x-node features and the fine bit (label%2) only in the 20x-node features,
// so no single scale suffices to recover the 6-way label.
struct GenConfig {
  int n_images = 600;
  int grid_min = 3;  // grid rows/cols drawn uniformly from [grid_min, grid_max]
  int grid_max = 4;
  int feature_dim = 32;
  double sigma = 0.1;        // Gaussian noise level
  std::uint64_t seed = 1;
  std::string format = "csv";  // "csv" (canonical) or "binary"

  void validate() const;  // throws std::invalid_argument on bad settings
};

struct ImageRecord {
  std::string id;
  int label = 0;  // 0 = benign, 1..5 = grade groups 1..5
  std::string patient_id;
  int grid_rows = 0;
  int grid_cols = 0;
  std::string feature_file;  // path relative to the manifest directory
};

struct DatasetManifest {
  std::vector<ImageRecord> images;
};

struct LoadedImage {
  ImageRecord record;
  // 3*rows*cols x d, rows in full-graph node order (5x block, 10x block,
  // 20x block, each row-major).
  Matrix features;
};

struct Dataset {
  std::map<std::string, LoadedImage> images;  // by image id
  int feature_dim = 0;

  const LoadedImage& at(const std::string& id) const;
};

// Coarse group and fine bit of a label (0..5).
inline int coarse_code(int label) { return label / 2; }
inline int fine_code(int label) { return label % 2; }

// The fixed random rotation basis used for scale signals: orthonormal d x d,
// deterministic in (seed, which); which = 0 is the 5x basis, 1 the 20x basis.
Matrix rotation_basis(int dim, std::uint64_t seed, std::uint64_t which);

// Label, grid size and node features (full-graph node order) of one image,
// all drawn from the image's deterministic sub-stream. Exposed for tests;
// generate() writes exactly these values.
Matrix synth_image(const GenConfig& cfg, int image_index, int* label,
                   int* grid_rows, int* grid_cols);

// Writes manifest.json plus one feature file per image under out_dir and
// returns the manifest. Deterministic in cfg.seed. Throws on I/O failure.
DatasetManifest generate(const GenConfig& cfg, const std::string& out_dir);

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

// Loads every image of the manifest, validating row counts, the
// (scale,row,col) cover, and feature dimensions. Error messages name the
// offending file.
Dataset load_dataset(const std::string& manifest_path);

// Feature rows a graph of the given variant consumes: the full matrix, or
// the matching single-scale block.
Matrix slice_features(const Matrix& full, int grid_rows, int grid_cols,
                      const GraphVariant& v);

// Patient-grouped cross-validation splits.
struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

struct FoldSpec {
  std::vector<Fold> folds;
};

// Shuffles patients deterministically, partitions them into k test groups,
// and splits the remaining patients of each fold 80/20 into train/validation.
// Every image of a patient stays in one split. Throws when there are fewer
// distinct patients than folds.
FoldSpec group_kfold(const DatasetManifest& m, int k, std::uint64_t seed);

std::string foldspec_to_json(const FoldSpec& spec);
FoldSpec foldspec_from_json(const std::string& text);
void write_foldspec(const FoldSpec& spec, const std::string& path);
FoldSpec read_foldspec(const std::string& path);

}  // namespace msrgcn
