// xdt: embedding extraction, head training, zero-shot matrices and reports.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "xdt/encoder.hpp"
#include "xdt/engine.hpp"
#include "xdt/error.hpp"
#include "xdt/experiment.hpp"
#include "xdt/io.hpp"
#include "xdt/model.hpp"
#include "xdt/report.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

struct Options {
  std::string config;
  std::string dataset;
  std::string loss;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string synthetic;
  std::string results;
  std::string baselines;
  std::vector<std::string> settings;
};

xdt::ExperimentConfig load_config(const Options& o) {
  if (o.config.empty()) throw xdt::ConfigError("--config is required");
  if (o.settings.empty()) return xdt::load_experiment_config(o.config);
  std::string text = xdt::io::read_text_file(o.config) + "\n[global]\n";
  for (const auto& s : o.settings) {
    if (s.find('=') == std::string::npos) throw xdt::ConfigError("--set expects key=value, got '" + s + "'");
    text += s + "\n";
  }
  return xdt::parse_experiment_config(text, std::filesystem::path(o.config).parent_path());
}

std::string file_token(const std::string& variant) {
  std::string t = variant;
  for (auto& c : t) {
    if (c == ':') c = '-';
  }
  return t;
}

int cmd_extract(const Options& o) {
  xdt::EmbeddingSet set;
  std::filesystem::path path;
  std::string provenance;
  if (!o.synthetic.empty()) {
    auto spec = xdt::parse_synthetic_spec(o.synthetic);
    if (o.seed) spec.seed = *o.seed;
    set = xdt::synth_embeddings(spec);
    path = o.out.empty() ? std::filesystem::path(spec.name + ".xdte") : std::filesystem::path(o.out);
    provenance = "tool = xdt " + std::string(xdt::kToolVersion) + "\ncommand = extract\nsynthetic = " +
                 o.synthetic + "\nseed = " + std::to_string(spec.seed) +
                 "\ncache_format = " + std::to_string(xdt::kCacheVersion) + "\n";
  } else {
    auto cfg = load_config(o);
    if (o.seed) xdt::apply_seed(cfg, *o.seed);
    if (o.dataset.empty()) throw xdt::ConfigError("extract needs --dataset or --synthetic");
    const auto& entry = cfg.dataset(o.dataset);
    set = xdt::compute_embeddings(cfg, entry);
    path = o.out.empty() ? cfg.cache_path(entry) : std::filesystem::path(o.out);
    provenance = xdt::provenance_block(cfg, "extract", {{"dataset", o.dataset}});
  }
  const auto crc = xdt::save_cache(set, path);
  xdt::io::write_text_atomic(path.string() + ".provenance.txt", provenance);
  std::cout << "wrote " << path.string() << " (" << set.size() << " x " << set.dim()
            << ") crc32=" << xdt::io::hex32(crc) << "\n";
  return kOk;
}

int cmd_train(const Options& o, xdt::ExperimentConfig cfg) {
  if (o.dataset.empty()) throw xdt::ConfigError("train needs --dataset");
  xdt::LossVariant variant{cfg.train.loss.kind, cfg.train.loss.lambda};
  if (!o.loss.empty()) variant = xdt::parse_loss_variant(o.loss, cfg.train.loss.lambda);
  if (o.lambda) {
    if (variant.kind != xdt::LossKind::LC) throw xdt::ConfigError("--lambda applies to --loss lc only");
    variant.lambda = *o.lambda;
  }
  if (variant.kind != xdt::LossKind::LC) variant.lambda = 0.0;
  cfg.train.loss.kind = variant.kind;
  cfg.train.loss.lambda = variant.lambda;
  cfg.losses = {variant};
  cfg.train.validate();

  const auto data = xdt::prepare_dataset(cfg, cfg.dataset(o.dataset));
  const auto model = xdt::run_train(cfg, data, variant);
  const auto counts = xdt::evaluate(model, data.test);
  const auto report = xdt::make_report(counts, data.test.labels);

  xdt::Checkpoint ckpt{model.params,
                       {{"train_dataset", model.train_dataset},
                        {"loss", std::string(xdt::loss_kind_name(variant.kind))},
                        {"lambda", xdt::io::format_double(variant.lambda)},
                        {"selected_epoch", std::to_string(model.selected_epoch)},
                        {"train_size", std::to_string(model.train_size)},
                        {"train_seed", std::to_string(cfg.train.seed)},
                        {"config_hash", xdt::config_hash(cfg)}}};
  const auto stem = cfg.out_dir / (o.dataset + "_" + file_token(variant.key()));
  xdt::save_checkpoint(ckpt, stem.string() + ".xdtm");
  xdt::io::write_text_atomic(stem.string() + ".history.tsv", xdt::format_history(model));
  xdt::io::write_text_atomic(
      stem.string() + ".provenance.txt",
      xdt::provenance_block(cfg, "train", {{"dataset", o.dataset}, {"loss", variant.key()}}));
  std::cout << "wrote " << stem.string() << ".xdtm (epoch " << model.selected_epoch << " of "
            << model.history.size() << ")\n"
            << "test acc " << xdt::fixed2(100.0 * report.acc) << "  f1 " << xdt::fixed2(report.f1)
            << "  acc_sb " << xdt::fixed2(100.0 * report.acc_sb) << "\n";
  return kOk;
}

int cmd_matrix(xdt::ExperimentConfig cfg) {
  const auto results = xdt::run_matrix(cfg);
  const auto path = cfg.out_dir / "results.tsv";
  xdt::io::write_text_atomic(path, xdt::format_results(results));
  xdt::io::write_text_atomic(cfg.out_dir / "results.provenance.txt",
                             xdt::provenance_block(cfg, "matrix"));
  std::cout << "wrote " << path.string() << " (" << results.size() << " rows)\n";
  return kOk;
}

int cmd_report(const Options& o) {
  if (o.results.empty()) throw xdt::ConfigError("report needs --results");
  const auto results = xdt::parse_results(xdt::io::read_text_file(o.results));
  std::vector<xdt::BaselineRow> baselines;
  if (!o.baselines.empty()) baselines = xdt::load_baselines(o.baselines);
  const std::filesystem::path dir = o.out.empty() ? std::filesystem::path("report") : std::filesystem::path(o.out);
  const auto files = xdt::build_report(results, baselines);
  xdt::write_report(dir, files);
  std::string prov = "tool = xdt " + std::string(xdt::kToolVersion) + "\ncommand = report\nresults = " +
                     o.results + "\nresults_crc32 = ";
  const auto bytes = xdt::io::read_file(o.results);
  prov += xdt::io::hex32(xdt::io::crc32(bytes)) + "\nbaselines = " +
          (o.baselines.empty() ? "-" : o.baselines) + "\n";
  xdt::io::write_text_atomic(dir / "provenance.txt", prov);
  std::cout << "wrote " << files.size() << " report files to " << dir.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-dataset zero-shot benchmark for trainable heads on frozen embeddings"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.settings, "Override a config key (key=value), repeatable");
    sub->add_option("--seed", o.seed, "Seed for splits, initialization and batching");
    sub->add_option("--out", o.out, "Output location");
  };

  auto* extract = app.add_subcommand("extract", "Compute and cache embeddings for a dataset");
  add_config(extract);
  extract->add_option("--dataset", o.dataset, "Dataset section name");
  extract->add_option("--synthetic", o.synthetic, "Synthetic spec, e.g. dim=16,sep=2.0,n=200,seed=1");

  auto* train = app.add_subcommand("train", "Train a head on one dataset");
  add_config(train);
  train->add_option("--dataset", o.dataset, "Dataset section name")->required();
  train->add_option("--loss", o.loss, "Loss kind")->check(CLI::IsMember({"lc", "ec", "ce"}));
  train->add_option("--lambda", o.lambda, "LC cross-entropy weight")->check(CLI::NonNegativeNumber);

  auto* matrix = app.add_subcommand("matrix", "Train every dataset under every loss and evaluate all pairs");
  add_config(matrix);

  auto* report = app.add_subcommand("report", "Render tables and plot data from a results file");
  report->add_option("--results", o.results, "Results file")->required();
  report->add_option("--baselines", o.baselines, "Baseline numbers file");
  report->add_option("--out", o.out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*report) return cmd_report(o);
    if (*extract) return cmd_extract(o);
    auto cfg = load_config(o);
    if (o.seed) xdt::apply_seed(cfg, *o.seed);
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (*train) return cmd_train(o, std::move(cfg));
    return cmd_matrix(std::move(cfg));
  } catch (const xdt::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const xdt::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const xdt::FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
