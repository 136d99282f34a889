#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xdt/data.hpp"
#include "xdt/encoder.hpp"
#include "xdt/losses.hpp"
#include "xdt/model.hpp"
#include "xdt/rng.hpp"

namespace xdt {

enum class OptimizerKind { sgd, adam };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  LossConfig loss;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;  // epochs without validation improvement
  std::uint64_t seed = 0;

  void validate() const;
};

/// Applies one `key = value` training/loss setting; false for unknown keys.
bool apply_train_setting(TrainConfig& config, const std::string& key, const std::string& value);
std::string format_train_config(const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double clustering_term = 0.0;
  double cross_entropy_term = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainedModel {
  HeadParameters params;
  std::string train_dataset;
  std::size_t train_size = 0;
  TrainConfig config;
  std::vector<EpochRecord> history;
  std::size_t selected_epoch = 0;  // epoch whose parameters were kept
};

/// Epoch loop over class-stratified shuffled minibatches. Returns the
/// parameters of the first epoch reaching the best validation accuracy and
/// stops after `patience` epochs without improvement.
TrainedModel train(const EmbeddingSet& train_set, const EmbeddingSet& val_set,
                   const HeadConfig& head_config, const TrainConfig& config);

/// Minibatch index lists for one epoch. Classes are shuffled separately and
/// interleaved in proportion, so every batch of size >= 2 carries both classes
/// whenever the class sizes allow it. A trailing batch of one sample is merged
/// into the previous batch.
std::vector<std::vector<std::size_t>> stratified_batches(std::span<const Label> labels,
                                                         std::size_t batch_size, Rng& rng);

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Tallies predictions (class index, 0 = positive) against labels.
ConfusionCounts tally(std::span<const int> predicted, std::span<const Label> truth);

/// Predicts every sample of the set; disease-positive is the positive class.
ConfusionCounts evaluate(const TrainedModel& model, const EmbeddingSet& eval_set);
ConfusionCounts evaluate(const HeadParameters& params, const EmbeddingSet& eval_set);

double accuracy(const ConfusionCounts& c);
/// tp / (tp + fp); 0 when nothing is predicted positive, except 1 when
/// tp = fp = fn = 0.
double precision(const ConfusionCounts& c);
/// tp / (tp + fn), with the same conventions as precision.
double recall(const ConfusionCounts& c);
/// 2PR / (P + R); 0 when tp = 0 and fp + fn > 0, 1 when tp = fp = fn = 0.
double f1(const ConfusionCounts& c);
/// Mean of the positive-class and negative-class F1.
double f1_macro(const ConfusionCounts& c);
/// Class F1 scores weighted by class support.
double f1_weighted(const ConfusionCounts& c);

struct StatisticalBest {
  double accuracy = 0.0;
  double f1 = 0.0;
  Label majority = Label::positive;
  ConfusionCounts counts;  // of the constant majority predictor
};

/// Constant majority-label predictor; ties go to the positive label.
StatisticalBest statistical_best(std::span<const Label> labels);

/// (acc - acc_sb) / acc_sb
double relative_accuracy(double acc, double acc_sb);

struct MetricsReport {
  double acc = 0.0, f1 = 0.0, precision = 0.0, recall = 0.0;
  double acc_sb = 0.0, acc_rel = 0.0;
  double f1_macro = 0.0, f1_weighted = 0.0;
};

MetricsReport make_report(const ConfusionCounts& counts, std::span<const Label> eval_labels);

struct ExperimentResult {
  std::string train_dataset;
  std::string eval_dataset;
  LossKind loss = LossKind::LC;
  double lambda = 0.0;
  MetricsReport metrics;
  double size_ratio = 0.0;  // |eval test split| / |train train split|
  bool zero_shot = false;
};

/// One result per (model, set); self pairs are marked supervised.
std::vector<ExperimentResult> zero_shot_matrix(std::span<const TrainedModel> models,
                                               std::span<const EmbeddingSet> eval_sets);

/// Identifies a loss variant; LC carries its lambda ("lc:0.001"), EC and CE
/// do not.
std::string loss_variant(LossKind kind, double lambda);
std::string loss_variant_label(const std::string& variant);

struct GridCell {
  std::string loss;  // loss variant key
  std::string train;
  std::string eval;
  double accuracy = 0.0;
};

struct RankedCell {
  std::string loss, train, eval;
  double rank = 0.0;
};

struct MarResult {
  std::map<std::string, double> mar;  // per loss variant
  std::vector<RankedCell> ranks;
};

/// Per (train, eval) cell, losses are ranked by accuracy, best first, starting
/// at rank_base, tied losses sharing the mean of their positions. Self cells
/// are listed with rank 0 and left out of the mean. MAR is the mean rank over
/// the cross-dataset cells.
MarResult compute_mar(std::span<const GridCell> grid, double rank_base = 1.0);

inline constexpr const char* kResultsHeader =
    "train_ds\teval_ds\tloss\tlambda\tacc\tf1\tprecision\trecall\tacc_sb\tacc_rel\tsize_ratio\tmode"
    "\tf1_macro\tf1_weighted";

std::string format_results(std::span<const ExperimentResult> results);
/// Accepts `nan` for unknown numeric cells; columns are located by header name.
std::vector<ExperimentResult> parse_results(const std::string& text);

}  // namespace xdt
