#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xdt/data.hpp"
#include "xdt/encoder.hpp"
#include "xdt/engine.hpp"
#include "xdt/model.hpp"

namespace xdt {

/// One `[dataset:<name>]` section. Exactly one of `manifest` and `synthetic`
/// is set.
struct DatasetEntry {
  std::string name;
  std::filesystem::path manifest;
  std::filesystem::path split;   // optional fixed split file
  std::filesystem::path cache;   // default: <out_dir>/cache/<name>.xdte
  std::filesystem::path images;  // adapter base directory, default: manifest directory
  std::string synthetic;         // synthetic spec text
  bool balance = false;          // down-sample the majority class before splitting
};

struct LossVariant {
  LossKind kind = LossKind::LC;
  double lambda = 0.0;

  std::string key() const { return loss_variant(kind, lambda); }
};

/// "lc:0.001", "lc" (configured lambda), "ec", "ce".
LossVariant parse_loss_variant(const std::string& token, double default_lambda);

struct ExperimentConfig {
  std::vector<DatasetEntry> datasets;
  std::string encoder = "pgm-randproj:512:32:0";
  std::size_t extract_batch_size = 32;
  HeadConfig head;
  TrainConfig train;
  SplitSpec split;
  std::vector<LossVariant> losses;  // empty means {train.loss}
  std::filesystem::path out_dir = "xdt-out";
  std::uint64_t seed = 0;

  const DatasetEntry& dataset(const std::string& name) const;
  std::vector<LossVariant> loss_grid() const;
  std::filesystem::path cache_path(const DatasetEntry& entry) const;
};

/// Sets the split, initialization and batching seeds together.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

/// Line-oriented `key = value`; `#` starts a comment line. Global keys:
///   encoder, extract_batch_size, out_dir, seed, losses,
///   head.<field>, train.<field>, loss.{kind,lambda,epsilon,latent_norm_cap},
///   split.{fractions,seed,stratified}.
/// Section `[dataset:<name>]` keys: manifest, split, cache, images, synthetic,
/// balance. `[global]` returns to global keys. Relative paths resolve against
/// `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Canonical text of every resolved setting; hashing it identifies a run.
std::string format_experiment_config(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

struct PreparedDataset {
  std::string name;
  EmbeddingSet all;
  SplitAssignment split;
  EmbeddingSet train, val, test;
};

/// Loads the cached embeddings of a dataset. The cache is (re)built when it is
/// missing or was produced by another encoder, synthetic spec or record list.
EmbeddingSet obtain_embeddings(const ExperimentConfig& config, const DatasetEntry& entry);

/// Computes a dataset's embeddings without consulting any cache.
EmbeddingSet compute_embeddings(const ExperimentConfig& config, const DatasetEntry& entry);

/// Embeddings, optional balancing, then the fixed or seeded split.
PreparedDataset prepare_dataset(const ExperimentConfig& config, const DatasetEntry& entry);

TrainConfig train_config_for(const ExperimentConfig& config, const LossVariant& variant);

TrainedModel run_train(const ExperimentConfig& config, const PreparedDataset& data,
                       const LossVariant& variant);

/// Every dataset trained under every loss variant and evaluated on every
/// test split. Rows are ordered by loss variant, then train and eval dataset
/// in config order.
std::vector<ExperimentResult> run_matrix(const ExperimentConfig& config);

/// Per-epoch history as TSV.
std::string format_history(const TrainedModel& model);

/// `key = value` lines describing how outputs were produced. Contains no
/// timestamps so reruns are byte-identical.
std::string provenance_block(const ExperimentConfig& config, const std::string& command,
                             const std::map<std::string, std::string>& extra = {});

inline constexpr const char* kToolVersion = "1.0.0";

}  // namespace xdt
