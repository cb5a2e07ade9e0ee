#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fergcn/model.hpp"
#include "fergcn/optim.hpp"
#include "fergcn/synth.hpp"

namespace fergcn {

struct RunConfig {
  std::size_t frames = 16;
  std::size_t feature_dim = 32;
  std::size_t classes = 6;
  std::size_t module_count = 2;
  bool use_weighted_fusion = true;
  std::size_t epochs = 40;
  double learning_rate = 0.001;
  double weight_decay = 0.00005;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  std::filesystem::path dataset;
  std::filesystem::path output_dir;
  FusionAxis fusion_mean_axis = FusionAxis::kColumn;
  RecurrentCell cell = RecurrentCell::kPlain;
  // Encoder widths.
  std::size_t channels1 = 4;
  std::size_t channels2 = 8;

  void validate() const;
  /// Model configuration for frames of the given size.
  ModelConfig model_config(std::size_t rows, std::size_t cols) const;
  /// Applies one `key=value` setting; throws ConfigError on unknown keys.
  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> to_entries() const;
};

/// Parses `key=value` lines; `#` starts a comment.
RunConfig parse_run_config(std::istream& in, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double a_offdiag = 0.0;
  std::vector<double> weight_curve;
};

std::string metrics_csv_header(std::size_t frames);
std::string metrics_csv_row(const MetricsRecord& r);
std::string metrics_csv(const std::vector<MetricsRecord>& records, std::size_t frames);

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted] counts
  /// Row-normalised percentages (rows with no samples are all zero).
  std::vector<std::vector<double>> confusion_percent() const;
};

/// Argmax classification of the given samples (all samples when `indices`
/// is empty).
Evaluation evaluate(Model& model, const Dataset& dataset, const std::vector<std::size_t>& indices);

struct TrainResult {
  Model model;
  std::vector<MetricsRecord> metrics;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Minibatch SGD over the dataset's training split. Deterministic given the
/// config and dataset. Throws NumericalError on a non-finite loss.
TrainResult train(const RunConfig& cfg, const Dataset& dataset, const EpochCallback& on_epoch = {});

/// Writes metrics.csv and checkpoint.fgck into cfg.output_dir.
void write_run_outputs(const RunConfig& cfg, const TrainResult& result);

std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(std::vector<std::uint8_t> bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

/// Mean pairwise cosine distance between the rows of an N x d matrix.
double mean_pairwise_cosine_distance(const Tensor& features);

/// Over-smoothing measure averaged over `indices`: mean pairwise cosine
/// distance of the frame features leaving the last graph module.
double oversmoothing_metric(Model& model, const Dataset& dataset, const std::vector<std::size_t>& indices);

struct AblationVariant {
  std::size_t module_count = 0;
  bool weighted_fusion = false;
  std::string label() const;
};

/// Parses "0,1,2,3,2f" style lists; "table" gives the five reference rows.
std::vector<AblationVariant> parse_variants(const std::string& spec);
std::vector<AblationVariant> table_variants();

struct AblationRow {
  AblationVariant variant;
  double val_accuracy = 0.0;
  double oversmoothing = 0.0;
};

std::vector<AblationRow> run_ablation(const RunConfig& base, const Dataset& dataset,
                                      const std::vector<AblationVariant>& variants);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace fergcn
