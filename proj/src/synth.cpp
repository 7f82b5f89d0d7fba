#include "msrgcn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "msrgcn/rng.hpp"

namespace fs = std::filesystem;

namespace msrgcn {

namespace {

constexpr char kBinaryMagic[8] = {'M', 'S', 'R', 'G', 'F', 'T', '0', '1'};
constexpr double kDistractorFraction = 0.3;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open");
  std::ostringstream out;
  out << f.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw std::runtime_error(path + ": write failed");
}

}  // namespace

void GenConfig::validate() const {
  if (n_images < 1)
    throw std::invalid_argument("gen config: n_images must be >= 1");
  if (grid_min < 1 || grid_max < grid_min)
    throw std::invalid_argument("gen config: need 1 <= grid_min <= grid_max");
  if (feature_dim < 10)
    throw std::invalid_argument("gen config: feature_dim must be >= 10");
  if (!(sigma >= 0.0))
    throw std::invalid_argument("gen config: sigma must be >= 0");
  if (format != "csv" && format != "binary")
    throw std::invalid_argument("gen config: format must be 'csv' or 'binary'");
}

const LoadedImage& Dataset::at(const std::string& id) const {
  const auto it = images.find(id);
  if (it == images.end()) throw std::runtime_error("unknown image id: " + id);
  return it->second;
}

Matrix rotation_basis(int dim, std::uint64_t seed, std::uint64_t which) {
  CounterRng rng(seed, stream::kBasis, which);
  Matrix g(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) g(i, j) = rng.next_gaussian();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix signs so the decomposition (and thus the basis) is unique.
  for (int j = 0; j < dim; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

Matrix synth_image(const GenConfig& cfg, int image_index, int* label,
                   int* grid_rows, int* grid_cols) {
  cfg.validate();
  CounterRng rng(cfg.seed, stream::kImage,
                 static_cast<std::uint64_t>(image_index));
  const int y = static_cast<int>(rng.next_below(6));
  const int rows = static_cast<int>(rng.next_int(cfg.grid_min, cfg.grid_max));
  const int cols = static_cast<int>(rng.next_int(cfg.grid_min, cfg.grid_max));
  const int locations = rows * cols;
  const int n = 3 * locations;
  const int d = cfg.feature_dim;

  // Distractor nodes carry noise only, no class signal.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const int n_distract =
      static_cast<int>(std::llround(kDistractorFraction * n));
  std::vector<char> distract(static_cast<std::size_t>(n), 0);
  for (int t = 0; t < n_distract; ++t)
    distract[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])] = 1;

  // The class signal: the coarse group lives in the rotated first three
  // coordinates of the 5x nodes, the fine bit in the rotated first two of
  // the 20x nodes; 10x nodes never carry signal. B * one_hot(c) is column c.
  const Matrix b5 = rotation_basis(d, cfg.seed, 0);
  const Matrix b20 = rotation_basis(d, cfg.seed, 1);

  Matrix features = Matrix::Zero(n, d);
  for (int node = 0; node < n; ++node) {
    const int block = node / locations;  // 0 = 5x, 1 = 10x, 2 = 20x
    if (!distract[static_cast<std::size_t>(node)]) {
      if (block == 0) features.row(node) = b5.col(coarse_code(y)).transpose();
      else if (block == 2) features.row(node) = b20.col(fine_code(y)).transpose();
    }
    for (int j = 0; j < d; ++j)
      features(node, j) += cfg.sigma * rng.next_gaussian();
  }

  if (label != nullptr) *label = y;
  if (grid_rows != nullptr) *grid_rows = rows;
  if (grid_cols != nullptr) *grid_cols = cols;
  return features;
}

namespace {

std::string feature_csv(const ImageRecord& rec, const Matrix& features) {
  const int d = static_cast<int>(features.cols());
  const int locations = rec.grid_rows * rec.grid_cols;
  std::string out = "image_id,scale,row,col";
  for (int j = 0; j < d; ++j) out += ",f" + std::to_string(j);
  out += "\n";
  for (int node = 0; node < features.rows(); ++node) {
    const int block = node / locations;
    const int loc = node % locations;
    out += rec.id;
    out += "," +
           std::to_string(scale_magnification(kAllScales[static_cast<std::size_t>(block)]));
    out += "," + std::to_string(loc / rec.grid_cols);
    out += "," + std::to_string(loc % rec.grid_cols);
    for (int j = 0; j < d; ++j) out += "," + format_double(features(node, j));
    out += "\n";
  }
  return out;
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string feature_binary(const ImageRecord& rec, const Matrix& features) {
  nlohmann::ordered_json header;
  header["image_id"] = rec.id;
  header["rows"] = rec.grid_rows;
  header["cols"] = rec.grid_cols;
  header["dim"] = static_cast<int>(features.cols());
  header["scales"] = {5, 10, 20};
  const std::string head = header.dump();

  std::string out(kBinaryMagic, sizeof kBinaryMagic);
  append_u32(out, static_cast<std::uint32_t>(head.size()));
  out += head;
  for (int node = 0; node < features.rows(); ++node)
    for (int j = 0; j < features.cols(); ++j) {
      const float v = static_cast<float>(features(node, j));
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      append_u32(out, bits);
    }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

int parse_int(const std::string& s, const std::string& path,
              const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path + ": bad " + what + " value '" + s + "'");
  }
}

Matrix load_csv_features(const std::string& path, const ImageRecord& rec,
                         int* dim_out) {
  const std::string body = read_file(path);
  std::istringstream in(body);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ": empty feature file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "image_id" || header[1] != "scale" ||
      header[2] != "row" || header[3] != "col")
    throw std::runtime_error(path + ": bad header, expected image_id,scale,row,col,f0,...");
  const int d = static_cast<int>(header.size()) - 4;
  for (int j = 0; j < d; ++j)
    if (header[static_cast<std::size_t>(4 + j)] != "f" + std::to_string(j))
      throw std::runtime_error(path + ": bad feature column name '" +
                               header[static_cast<std::size_t>(4 + j)] + "'");

  const int locations = rec.grid_rows * rec.grid_cols;
  const int n = 3 * locations;
  Matrix features = Matrix::Zero(n, d);
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  int count = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != 4 + d)
      throw std::runtime_error(path + ": expected " + std::to_string(4 + d) +
                               " columns, found " + std::to_string(cells.size()));
    if (cells[0] != rec.id)
      throw std::runtime_error(path + ": image_id '" + cells[0] +
                               "' does not match manifest id '" + rec.id + "'");
    const int mag = parse_int(cells[1], path, "scale");
    if (mag != 5 && mag != 10 && mag != 20)
      throw std::runtime_error(path + ": unknown scale " + std::to_string(mag));
    const int block = mag == 5 ? 0 : mag == 10 ? 1 : 2;
    const int row = parse_int(cells[2], path, "row");
    const int col = parse_int(cells[3], path, "col");
    if (row < 0 || row >= rec.grid_rows || col < 0 || col >= rec.grid_cols)
      throw std::runtime_error(path + ": cell (" + std::to_string(row) + "," +
                               std::to_string(col) + ") outside the grid");
    const int node = block * locations + row * rec.grid_cols + col;
    if (seen[static_cast<std::size_t>(node)])
      throw std::runtime_error(path + ": duplicate node at scale " +
                               std::to_string(mag) + " cell (" +
                               std::to_string(row) + "," + std::to_string(col) + ")");
    seen[static_cast<std::size_t>(node)] = 1;
    for (int j = 0; j < d; ++j) {
      const std::string& cell = cells[static_cast<std::size_t>(4 + j)];
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0' || !std::isfinite(v))
        throw std::runtime_error(path + ": bad feature value '" + cell + "'");
      features(node, j) = v;
    }
    ++count;
  }
  if (count != n)
    throw std::runtime_error(path + ": expected " + std::to_string(n) +
                             " feature rows, found " + std::to_string(count));
  if (dim_out != nullptr) *dim_out = d;
  return features;
}

std::uint32_t take_u32(const std::string& body, std::size_t& at,
                       const std::string& path) {
  if (at + 4 > body.size())
    throw std::runtime_error(path + ": truncated binary feature file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(body[at + i]))
         << (8 * i);
  at += 4;
  return v;
}

Matrix load_binary_features(const std::string& path, const ImageRecord& rec,
                            int* dim_out) {
  const std::string body = read_file(path);
  if (body.size() < sizeof kBinaryMagic ||
      std::memcmp(body.data(), kBinaryMagic, sizeof kBinaryMagic) != 0)
    throw std::runtime_error(path + ": bad magic, not a feature file");
  std::size_t at = sizeof kBinaryMagic;
  const std::uint32_t head_len = take_u32(body, at, path);
  if (at + head_len > body.size())
    throw std::runtime_error(path + ": truncated binary feature file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.substr(at, head_len));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": bad header: " + e.what());
  }
  at += head_len;

  if (header.value("image_id", "") != rec.id)
    throw std::runtime_error(path + ": image_id does not match manifest");
  if (header.value("rows", -1) != rec.grid_rows ||
      header.value("cols", -1) != rec.grid_cols)
    throw std::runtime_error(path + ": grid size does not match manifest");
  const int d = header.value("dim", 0);
  if (d < 1) throw std::runtime_error(path + ": bad feature dimension");

  const int n = 3 * rec.grid_rows * rec.grid_cols;
  const std::size_t need = static_cast<std::size_t>(n) *
                           static_cast<std::size_t>(d) * 4;
  if (body.size() - at != need)
    throw std::runtime_error(path + ": expected " + std::to_string(n) +
                             " feature rows, found " +
                             std::to_string((body.size() - at) / 4 /
                                            static_cast<std::size_t>(d)));
  Matrix features(n, d);
  for (int node = 0; node < n; ++node)
    for (int j = 0; j < d; ++j) {
      const std::uint32_t bits = take_u32(body, at, path);
      float v;
      std::memcpy(&v, &bits, 4);
      if (!std::isfinite(v))
        throw std::runtime_error(path + ": non-finite feature value");
      features(node, j) = static_cast<double>(v);
    }
  if (dim_out != nullptr) *dim_out = d;
  return features;
}

}  // namespace

DatasetManifest generate(const GenConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(fs::path(out_dir) / "features");

  DatasetManifest manifest;
  const char* ext = cfg.format == "csv" ? ".csv" : ".bin";
  for (int i = 0; i < cfg.n_images; ++i) {
    ImageRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%05d", i);
    rec.id = buf;
    std::snprintf(buf, sizeof buf, "pat_%04d", i / 4);
    rec.patient_id = buf;
    const Matrix features =
        synth_image(cfg, i, &rec.label, &rec.grid_rows, &rec.grid_cols);
    rec.feature_file = "features/" + rec.id + ext;
    const std::string body = cfg.format == "csv" ? feature_csv(rec, features)
                                                 : feature_binary(rec, features);
    write_file((fs::path(out_dir) / rec.feature_file).string(), body);
    manifest.images.push_back(std::move(rec));
  }
  write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  return manifest;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  for (const ImageRecord& rec : m.images) {
    nlohmann::ordered_json img;
    img["id"] = rec.id;
    img["label"] = rec.label;
    img["patient_id"] = rec.patient_id;
    img["grid_rows"] = rec.grid_rows;
    img["grid_cols"] = rec.grid_cols;
    img["feature_file"] = rec.feature_file;
    j["images"].push_back(std::move(img));
  }
  write_file(path, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": bad manifest: " + e.what());
  }
  if (!j.contains("images") || !j["images"].is_array())
    throw std::runtime_error(path + ": manifest has no images[] array");
  DatasetManifest m;
  for (const auto& img : j["images"]) {
    ImageRecord rec;
    try {
      rec.id = img.at("id").get<std::string>();
      rec.label = img.at("label").get<int>();
      rec.patient_id = img.at("patient_id").get<std::string>();
      rec.grid_rows = img.at("grid_rows").get<int>();
      rec.grid_cols = img.at("grid_cols").get<int>();
      rec.feature_file = img.at("feature_file").get<std::string>();
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": bad image record: " + e.what());
    }
    if (rec.label < 0 || rec.label > 5)
      throw std::runtime_error(path + ": label out of range for " + rec.id);
    if (rec.grid_rows < 1 || rec.grid_cols < 1)
      throw std::runtime_error(path + ": bad grid size for " + rec.id);
    m.images.push_back(std::move(rec));
  }
  return m;
}

Dataset load_dataset(const std::string& manifest_path) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();

  Dataset ds;
  for (const ImageRecord& rec : manifest.images) {
    const std::string file = (dir / rec.feature_file).string();
    if (!fs::exists(file))
      throw std::runtime_error(file + ": feature file missing (referenced by " +
                               rec.id + ")");
    int d = 0;
    LoadedImage img;
    img.record = rec;
    img.features = rec.feature_file.ends_with(".bin")
                       ? load_binary_features(file, rec, &d)
                       : load_csv_features(file, rec, &d);
    if (ds.feature_dim == 0) ds.feature_dim = d;
    else if (ds.feature_dim != d)
      throw std::runtime_error(file + ": feature dimension " + std::to_string(d) +
                               " differs from previous images (" +
                               std::to_string(ds.feature_dim) + ")");
    if (!ds.images.emplace(rec.id, std::move(img)).second)
      throw std::runtime_error(manifest_path + ": duplicate image id " + rec.id);
  }
  if (ds.images.empty())
    throw std::runtime_error(manifest_path + ": dataset has no images");
  return ds;
}

Matrix slice_features(const Matrix& full, int grid_rows, int grid_cols,
                      const GraphVariant& v) {
  const int locations = grid_rows * grid_cols;
  if (full.rows() != 3 * locations)
    throw std::invalid_argument("slice_features: expected 3 scale blocks");
  if (!v.single_scale()) return full;
  const int slot = static_cast<int>(v.scale);
  return full.middleRows(slot * locations, locations);
}

FoldSpec group_kfold(const DatasetManifest& m, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("group_kfold: k must be >= 1");

  // Patients in first-appearance order, with their images in manifest order.
  std::vector<std::string> patients;
  std::map<std::string, std::vector<std::string>> images_of;
  for (const ImageRecord& rec : m.images) {
    auto [it, fresh] = images_of.try_emplace(rec.patient_id);
    if (fresh) patients.push_back(rec.patient_id);
    it->second.push_back(rec.id);
  }
  const int n_patients = static_cast<int>(patients.size());
  if (n_patients < k)
    throw std::invalid_argument("group_kfold: " + std::to_string(n_patients) +
                                " patients cannot fill " + std::to_string(k) +
                                " folds");

  CounterRng rng(seed, stream::kFolds);
  rng.shuffle(patients);

  const auto append_images = [&images_of](std::vector<std::string>& out,
                                          const std::vector<std::string>& pats) {
    for (const std::string& p : pats)
      for (const std::string& id : images_of.at(p)) out.push_back(id);
  };

  FoldSpec spec;
  for (int f = 0; f < k; ++f) {
    const int begin = f * n_patients / k;
    const int end = (f + 1) * n_patients / k;
    std::vector<std::string> test_pats(patients.begin() + begin,
                                       patients.begin() + end);
    std::vector<std::string> rest;
    rest.insert(rest.end(), patients.begin(), patients.begin() + begin);
    rest.insert(rest.end(), patients.begin() + end, patients.end());
    if (rest.size() < 2)
      throw std::invalid_argument(
          "group_kfold: too few patients left for train/validation in fold " +
          std::to_string(f));
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(rest.size()))));
    Fold fold;
    append_images(fold.train,
                  {rest.begin(), rest.end() - static_cast<std::ptrdiff_t>(n_val)});
    append_images(fold.validation,
                  {rest.end() - static_cast<std::ptrdiff_t>(n_val), rest.end()});
    append_images(fold.test, test_pats);
    spec.folds.push_back(std::move(fold));
  }
  return spec;
}

std::string foldspec_to_json(const FoldSpec& spec) {
  nlohmann::ordered_json j;
  j["folds"] = nlohmann::ordered_json::array();
  for (const Fold& f : spec.folds) {
    nlohmann::ordered_json fold;
    fold["train"] = f.train;
    fold["validation"] = f.validation;
    fold["test"] = f.test;
    j["folds"].push_back(std::move(fold));
  }
  return j.dump(2) + "\n";
}

FoldSpec foldspec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("bad foldspec: ") + e.what());
  }
  if (!j.contains("folds") || !j["folds"].is_array())
    throw std::runtime_error("bad foldspec: no folds[] array");
  FoldSpec spec;
  for (const auto& fold : j["folds"]) {
    Fold f;
    f.train = fold.at("train").get<std::vector<std::string>>();
    f.validation = fold.at("validation").get<std::vector<std::string>>();
    f.test = fold.at("test").get<std::vector<std::string>>();
    spec.folds.push_back(std::move(f));
  }
  return spec;
}

void write_foldspec(const FoldSpec& spec, const std::string& path) {
  write_file(path, foldspec_to_json(spec));
}

FoldSpec read_foldspec(const std::string& path) {
  try {
    return foldspec_from_json(read_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace msrgcn
