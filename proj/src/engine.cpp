#include "xdt/engine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <set>
#include <sstream>

#include "xdt/error.hpp"
#include "xdt/io.hpp"

namespace xdt {

std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected sgd|adam)");
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (loss.kind != LossKind::CE && batch_size < 2) {
    throw ConfigError("train: contrastive losses need batch_size >= 2");
  }
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
  if (patience == 0) throw ConfigError("train: patience must be positive");
}

namespace {

double parse_real(const std::string& key, const std::string& value) {
  double v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size()) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
  return v;
}

std::uint64_t parse_count(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size()) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
  return v;
}

}  // namespace

bool apply_train_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "loss") c.loss.kind = parse_loss_kind(value);
  else if (key == "lambda") c.loss.lambda = parse_real(key, value);
  else if (key == "epsilon") c.loss.epsilon = parse_real(key, value);
  else if (key == "latent_norm_cap") c.loss.latent_norm_cap = parse_real(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_real(key, value);
  else if (key == "optimizer") c.optimizer = parse_optimizer(value);
  else if (key == "batch_size") c.batch_size = parse_count(key, value);
  else if (key == "max_epochs") c.max_epochs = parse_count(key, value);
  else if (key == "patience") c.patience = parse_count(key, value);
  else if (key == "seed") c.seed = parse_count(key, value);
  else return false;
  return true;
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "loss = " << loss_kind_name(c.loss.kind) << "\n"
     << "lambda = " << io::format_double(c.loss.lambda) << "\n"
     << "epsilon = " << io::format_double(c.loss.epsilon) << "\n"
     << "latent_norm_cap = " << io::format_double(c.loss.latent_norm_cap) << "\n"
     << "learning_rate = " << io::format_double(c.learning_rate) << "\n"
     << "optimizer = " << optimizer_name(c.optimizer) << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "max_epochs = " << c.max_epochs << "\n"
     << "patience = " << c.patience << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Training

std::vector<std::vector<std::size_t>> stratified_batches(std::span<const Label> labels,
                                                         std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] == Label::positive ? pos : neg).push_back(i);
  }
  rng.shuffle(std::span(pos));
  rng.shuffle(std::span(neg));

  // Proportional merge: take from whichever class is further behind its share.
  std::vector<std::size_t> order;
  order.reserve(labels.size());
  std::size_t ip = 0, in = 0;
  while (ip < pos.size() || in < neg.size()) {
    const bool take_pos =
        in == neg.size() ||
        (ip < pos.size() && (ip + 0.5) * static_cast<double>(neg.size()) <=
                                (in + 0.5) * static_cast<double>(pos.size()));
    order.push_back(take_pos ? pos[ip++] : neg[in++]);
  }

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    const std::size_t e = std::min(order.size(), s + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const HeadParameters& params)
      : kind_(config.optimizer), lr_(config.learning_rate) {
    if (kind_ == OptimizerKind::adam) {
      m_ = zeros_like(params);
      v_ = zeros_like(params);
    }
  }

  void step(HeadParameters& params, const HeadParameters& grads) {
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        auto& p = params.tensors[t].value.data;
        const auto& g = grads.tensors[t].value.data;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * g[i];
      }
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++steps_;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
      auto& p = params.tensors[t].value.data;
      const auto& g = grads.tensors[t].value.data;
      auto& m = m_.tensors[t].value.data;
      auto& v = v_.tensors[t].value.data;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  HeadParameters m_, v_;
  std::uint64_t steps_ = 0;
};

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy(m.row(idx[k]).begin(), m.row(idx[k]).end(), out.row(k).begin());
  }
  return out;
}

}  // namespace

TrainedModel train(const EmbeddingSet& train_set, const EmbeddingSet& val_set,
                   const HeadConfig& head_config, const TrainConfig& config) {
  head_config.validate();
  config.validate();
  train_set.validate();
  if (train_set.dim() != head_config.model_dim || val_set.dim() != head_config.model_dim) {
    throw DataError("embedding width does not match model_dim " +
                    std::to_string(head_config.model_dim));
  }
  if (train_set.count(Label::positive) < 2 || train_set.count(Label::negative) < 2) {
    throw DataError("training set '" + train_set.dataset_name +
                    "' needs at least 2 samples per class");
  }
  if (val_set.size() == 0) throw DataError("validation set is empty");

  TrainedModel model;
  model.params = init_head(head_config);
  model.train_dataset = train_set.dataset_name;
  model.train_size = train_set.size();
  model.config = config;

  Optimizer opt(config, model.params);
  Rng rng(config.seed);
  double best_acc = -1.0;
  HeadParameters best = model.params;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches = stratified_batches(train_set.labels, config.batch_size, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      const Matrix x = gather_rows(train_set.vectors, idx);
      std::vector<Label> y(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) y[k] = train_set.labels[idx[k]];
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      LossGradient lg;
      try {
        lg = loss_gradient(config.loss, model.params, x, y);
      } catch (const NumericError& e) {
        throw NumericError(where + ": " + e.what());
      }
      opt.step(model.params, lg.grads);
      for (const auto& t : model.params.tensors) {
        for (double v : t.value.data) {
          if (!std::isfinite(v)) throw NumericError(where + ": parameter '" + t.name + "' diverged");
        }
      }
      rec.train_loss += lg.value.value;
      rec.clustering_term += lg.value.clustering_term;
      rec.cross_entropy_term += lg.value.cross_entropy_term;
    }
    const double nb = static_cast<double>(batches.size());
    rec.train_loss /= nb;
    rec.clustering_term /= nb;
    rec.cross_entropy_term /= nb;
    try {
      rec.val_accuracy = accuracy(evaluate(model.params, val_set));
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", validation: " + e.what());
    }
    model.history.push_back(rec);

    if (rec.val_accuracy > best_acc) {
      best_acc = rec.val_accuracy;
      best = model.params;
      model.selected_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.params = std::move(best);
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation and metrics

ConfusionCounts tally(std::span<const int> predicted, std::span<const Label> truth) {
  if (predicted.size() != truth.size()) throw DataError("prediction and label counts differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pred_pos = predicted[i] == class_index(Label::positive);
    const bool is_pos = truth[i] == Label::positive;
    if (pred_pos && is_pos) ++c.tp;
    else if (pred_pos) ++c.fp;
    else if (is_pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ConfusionCounts evaluate(const HeadParameters& params, const EmbeddingSet& eval_set) {
  if (eval_set.size() == 0) throw DataError("evaluation set '" + eval_set.dataset_name + "' is empty");
  return tally(predict_batch(params, eval_set.vectors), eval_set.labels);
}

ConfusionCounts evaluate(const TrainedModel& model, const EmbeddingSet& eval_set) {
  return evaluate(model.params, eval_set);
}

namespace {
void require_counts(const ConfusionCounts& c) {
  if (c.total() == 0) throw DataError("metrics need at least one evaluated sample");
}
double ratio(std::uint64_t a, std::uint64_t b) {
  return static_cast<double>(a) / static_cast<double>(b);
}
double class_f1(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  if (tp == 0) return (fp > 0 || fn > 0) ? 0.0 : 1.0;
  const double p = ratio(tp, tp + fp);
  const double r = ratio(tp, tp + fn);
  return 2.0 * p * r / (p + r);
}
}  // namespace

double accuracy(const ConfusionCounts& c) {
  require_counts(c);
  return ratio(c.tp + c.tn, c.total());
}

double precision(const ConfusionCounts& c) {
  require_counts(c);
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return ratio(c.tp, c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
  require_counts(c);
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return ratio(c.tp, c.tp + c.fn);
}

double f1(const ConfusionCounts& c) {
  require_counts(c);
  return class_f1(c.tp, c.fp, c.fn);
}

double f1_macro(const ConfusionCounts& c) {
  require_counts(c);
  return 0.5 * (class_f1(c.tp, c.fp, c.fn) + class_f1(c.tn, c.fn, c.fp));
}

double f1_weighted(const ConfusionCounts& c) {
  require_counts(c);
  const double pos = static_cast<double>(c.tp + c.fn);
  const double neg = static_cast<double>(c.tn + c.fp);
  return (pos * class_f1(c.tp, c.fp, c.fn) + neg * class_f1(c.tn, c.fn, c.fp)) / (pos + neg);
}

StatisticalBest statistical_best(std::span<const Label> labels) {
  if (labels.empty()) throw DataError("statistical best of an empty label list");
  std::uint64_t pos = 0;
  for (auto l : labels) pos += (l == Label::positive);
  const std::uint64_t neg = labels.size() - pos;
  StatisticalBest sb;
  sb.majority = pos >= neg ? Label::positive : Label::negative;
  if (sb.majority == Label::positive) {
    sb.counts = {.tp = pos, .tn = 0, .fp = neg, .fn = 0};
  } else {
    sb.counts = {.tp = 0, .tn = neg, .fp = 0, .fn = pos};
  }
  sb.accuracy = accuracy(sb.counts);
  sb.f1 = f1(sb.counts);
  return sb;
}

double relative_accuracy(double acc, double acc_sb) {
  if (acc_sb == 0.0) throw DataError("relative accuracy undefined for a zero baseline");
  return (acc - acc_sb) / acc_sb;
}

MetricsReport make_report(const ConfusionCounts& counts, std::span<const Label> eval_labels) {
  if (counts.total() != eval_labels.size()) throw DataError("counts and label list differ in size");
  MetricsReport m;
  m.acc = accuracy(counts);
  m.f1 = f1(counts);
  m.precision = precision(counts);
  m.recall = recall(counts);
  m.f1_macro = f1_macro(counts);
  m.f1_weighted = f1_weighted(counts);
  m.acc_sb = statistical_best(eval_labels).accuracy;
  m.acc_rel = relative_accuracy(m.acc, m.acc_sb);
  return m;
}

std::vector<ExperimentResult> zero_shot_matrix(std::span<const TrainedModel> models,
                                               std::span<const EmbeddingSet> eval_sets) {
  const std::size_t cells = models.size() * eval_sets.size();
  std::vector<ExperimentResult> out(cells);
  std::vector<std::exception_ptr> errors(cells);
  const auto n = static_cast<std::ptrdiff_t>(cells);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto ck = static_cast<std::size_t>(k);
    const auto& model = models[ck / eval_sets.size()];
    const auto& set = eval_sets[ck % eval_sets.size()];
    try {
      if (model.train_size == 0) throw DataError("model has no recorded training size");
      ExperimentResult r;
      r.train_dataset = model.train_dataset;
      r.eval_dataset = set.dataset_name;
      r.loss = model.config.loss.kind;
      r.lambda = model.config.loss.lambda;
      r.metrics = make_report(evaluate(model, set), set.labels);
      r.size_ratio = static_cast<double>(set.size()) / static_cast<double>(model.train_size);
      r.zero_shot = r.train_dataset != r.eval_dataset;
      out[ck] = std::move(r);
    } catch (...) {
      errors[ck] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rank analysis

std::string loss_variant(LossKind kind, double lambda) {
  std::string key(loss_kind_name(kind));
  if (kind == LossKind::LC) key += ":" + io::format_double(lambda);
  return key;
}

std::string loss_variant_label(const std::string& variant) {
  if (variant == "ec") return "EC";
  if (variant == "ce") return "CE";
  if (variant.starts_with("lc:")) return "LC (lambda=" + variant.substr(3) + ")";
  return variant;
}

MarResult compute_mar(std::span<const GridCell> grid, double rank_base) {
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> cells;
  std::set<std::string> losses;
  for (const auto& g : grid) {
    losses.insert(g.loss);
    auto& cell = cells[{g.train, g.eval}];
    if (!cell.emplace(g.loss, g.accuracy).second) {
      throw DataError("grid lists (" + g.loss + ", " + g.train + ", " + g.eval + ") twice");
    }
  }
  for (const auto& [key, cell] : cells) {
    if (cell.size() != losses.size()) {
      throw DataError("ragged grid: cell (" + key.first + ", " + key.second +
                      ") lacks some loss functions");
    }
  }

  MarResult out;
  std::map<std::string, double> sums;
  std::size_t cross_cells = 0;
  for (const auto& [key, cell] : cells) {
    const bool self = key.first == key.second;
    if (!self) ++cross_cells;
    for (const auto& [loss, acc] : cell) {
      double rank = 0.0;
      if (!self) {
        std::size_t better = 0, tied = 0;
        for (const auto& [other, oacc] : cell) {
          if (other == loss) continue;
          if (oacc > acc) ++better;
          else if (oacc == acc) ++tied;
        }
        rank = rank_base + static_cast<double>(better) + 0.5 * static_cast<double>(tied);
        sums[loss] += rank;
      }
      out.ranks.push_back({loss, key.first, key.second, rank});
    }
  }
  for (const auto& loss : losses) {
    out.mar[loss] = cross_cells == 0 ? 0.0 : sums[loss] / static_cast<double>(cross_cells);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Results file

std::string format_results(std::span<const ExperimentResult> results) {
  std::string out = kResultsHeader;
  out += '\n';
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : io::format_double(v); };
  for (const auto& r : results) {
    const auto& m = r.metrics;
    out += r.train_dataset + '\t' + r.eval_dataset + '\t' + std::string(loss_kind_name(r.loss)) +
           '\t' + num(r.lambda) + '\t' + num(m.acc) + '\t' + num(m.f1) + '\t' + num(m.precision) +
           '\t' + num(m.recall) + '\t' + num(m.acc_sb) + '\t' + num(m.acc_rel) + '\t' +
           num(r.size_ratio) + '\t' + (r.zero_shot ? "zeroshot" : "supervised") + '\t' +
           num(m.f1_macro) + '\t' + num(m.f1_weighted) + '\n';
  }
  return out;
}

namespace {
std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> f;
  std::size_t s = 0;
  while (true) {
    const auto t = line.find('\t', s);
    f.push_back(line.substr(s, t == std::string::npos ? std::string::npos : t - s));
    if (t == std::string::npos) break;
    s = t + 1;
  }
  return f;
}

double parse_cell(const std::string& s) {
  if (s == "nan" || s.empty() || s == "-") return std::nan("");
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw DataError("results: bad number '" + s + "'");
  return v;
}
}  // namespace

std::vector<ExperimentResult> parse_results(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.starts_with('#')) continue;
    header = split_tabs(line);
    break;
  }
  if (header.empty()) throw DataError("results file has no header");
  auto col = [&](const char* name, bool required) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    if (required) throw DataError(std::string("results file lacks column '") + name + "'");
    return -1;
  };
  const auto c_train = col("train_ds", true), c_eval = col("eval_ds", true),
             c_loss = col("loss", true), c_lambda = col("lambda", true), c_acc = col("acc", true);
  const auto c_f1 = col("f1", false), c_p = col("precision", false), c_r = col("recall", false),
             c_sb = col("acc_sb", false), c_rel = col("acc_rel", false),
             c_ratio = col("size_ratio", false), c_mode = col("mode", false),
             c_f1m = col("f1_macro", false), c_f1w = col("f1_weighted", false);

  std::vector<ExperimentResult> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.starts_with('#')) continue;
    const auto f = split_tabs(line);
    if (f.size() != header.size()) {
      throw DataError("results row " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    auto get = [&](std::ptrdiff_t c) { return c < 0 ? std::nan("") : parse_cell(f[static_cast<std::size_t>(c)]); };
    ExperimentResult r;
    r.train_dataset = f[static_cast<std::size_t>(c_train)];
    r.eval_dataset = f[static_cast<std::size_t>(c_eval)];
    r.loss = parse_loss_kind(f[static_cast<std::size_t>(c_loss)]);
    r.lambda = get(c_lambda);
    if (std::isnan(r.lambda)) r.lambda = 0.0;
    r.metrics.acc = get(c_acc);
    r.metrics.f1 = get(c_f1);
    r.metrics.precision = get(c_p);
    r.metrics.recall = get(c_r);
    r.metrics.acc_sb = get(c_sb);
    r.metrics.acc_rel = get(c_rel);
    r.metrics.f1_macro = get(c_f1m);
    r.metrics.f1_weighted = get(c_f1w);
    r.size_ratio = get(c_ratio);
    r.zero_shot = c_mode >= 0 ? f[static_cast<std::size_t>(c_mode)] == "zeroshot"
                              : r.train_dataset != r.eval_dataset;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace xdt
