#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xdt/engine.hpp"

namespace xdt {

/// A published number for an external method on one evaluation dataset.
/// Accuracy and F1 are fractions; NaN marks a missing value.
struct BaselineRow {
  std::string method;
  std::string eval_dataset;
  double acc = 0.0;
  double f1 = 0.0;
};

/// TSV with header `method eval_ds acc f1`.
std::vector<BaselineRow> parse_baselines(const std::string& text);
std::vector<BaselineRow> load_baselines(const std::filesystem::path& path);

struct ReportFile {
  std::string name;
  std::string content;
};

/// Builds every report table and plot-data file:
///   supervised.{tsv,md}     self-cells per loss variant and dataset
///   zeroshot.{tsv,md}       eval dataset columns; baseline rows, statistical
///                           best, then one row per training dataset
///   loss_tables.md          supervised and zero-shot cells per loss variant
///   ranks.tsv, mar.{tsv,md} per-cell accuracy ranks and mean average rank
///   radar.tsv               series, axis, acc
///   scatter.tsv             size_ratio, acc_rel, train_ds, eval_ds, loss
/// TSV cells hold the full-precision values of the inputs; markdown shows
/// percentages and F1 to 2 decimals.
std::vector<ReportFile> build_report(std::span<const ExperimentResult> results,
                                     std::span<const BaselineRow> baselines);

void write_report(const std::filesystem::path& dir, std::span<const ReportFile> files);

/// Fixed 2-decimal rendering; "-" for NaN.
std::string fixed2(double v);

}  // namespace xdt
