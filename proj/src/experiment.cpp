#include "xdt/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <exception>
#include <set>
#include <sstream>

#include "xdt/error.hpp"
#include "xdt/io.hpp"
#include "xdt/rng.hpp"

namespace xdt {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto c = s.find(',', start);
    auto item = trim(std::string_view(s).substr(start, c == std::string::npos ? std::string::npos : c - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (c == std::string::npos) break;
    start = c + 1;
  }
  return out;
}

double to_real(const std::string& s, const std::string& what) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("invalid value for " + what + ": '" + s + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("invalid value for " + what + ": '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ConfigError("invalid boolean for " + what + ": '" + s + "'");
}

std::uint64_t name_tag(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

LossVariant parse_loss_variant(const std::string& token, double default_lambda) {
  const auto colon = token.find(':');
  LossVariant v;
  v.kind = parse_loss_kind(token.substr(0, colon));
  if (colon != std::string::npos) {
    if (v.kind != LossKind::LC) throw ConfigError("only lc takes a lambda: '" + token + "'");
    v.lambda = to_real(token.substr(colon + 1), "lambda");
    if (!(v.lambda >= 0.0)) throw ConfigError("lambda must be non-negative: '" + token + "'");
  } else {
    v.lambda = v.kind == LossKind::LC ? default_lambda : 0.0;
  }
  return v;
}

const DatasetEntry& ExperimentConfig::dataset(const std::string& name) const {
  for (const auto& d : datasets) {
    if (d.name == name) return d;
  }
  throw ConfigError("dataset '" + name + "' is not defined in the config");
}

std::vector<LossVariant> ExperimentConfig::loss_grid() const {
  if (!losses.empty()) return losses;
  return {LossVariant{train.loss.kind, train.loss.kind == LossKind::LC ? train.loss.lambda : 0.0}};
}

std::filesystem::path ExperimentConfig::cache_path(const DatasetEntry& entry) const {
  if (!entry.cache.empty()) return entry.cache;
  return out_dir / "cache" / (entry.name + ".xdte");
}

void apply_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.split.seed = seed;
  config.head.init_seed = seed;
  config.train.seed = seed;
}

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  std::vector<std::string> loss_tokens;
  DatasetEntry* section = nullptr;
  std::set<std::string> names;

  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::string where = "config line " + std::to_string(lineno);

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      const std::string head = trim(std::string_view(line).substr(1, line.size() - 2));
      if (head == "global") {
        section = nullptr;
        continue;
      }
      if (!head.starts_with("dataset:")) throw ConfigError(where + ": unknown section '" + head + "'");
      const std::string name = trim(std::string_view(head).substr(8));
      if (name.empty()) throw ConfigError(where + ": dataset section without a name");
      if (!names.insert(name).second) throw ConfigError(where + ": duplicate dataset '" + name + "'");
      cfg.datasets.emplace_back();
      cfg.datasets.back().name = name;
      section = &cfg.datasets.back();
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");

    if (section) {
      if (key == "manifest") section->manifest = resolve(base_dir, value);
      else if (key == "split") section->split = resolve(base_dir, value);
      else if (key == "cache") section->cache = resolve(base_dir, value);
      else if (key == "images") section->images = resolve(base_dir, value);
      else if (key == "synthetic") section->synthetic = value;
      else if (key == "balance") section->balance = to_bool(value, key);
      else throw ConfigError(where + ": unknown dataset key '" + key + "'");
      continue;
    }

    if (key == "encoder") cfg.encoder = value;
    else if (key == "extract_batch_size") cfg.extract_batch_size = to_uint(value, key);
    else if (key == "out_dir") cfg.out_dir = resolve(base_dir, value);
    else if (key == "seed") apply_seed(cfg, to_uint(value, key));
    else if (key == "losses") loss_tokens = split_list(value);
    else if (key.starts_with("head.")) {
      if (!apply_head_setting(cfg.head, key.substr(5), value)) {
        throw ConfigError(where + ": unknown key '" + key + "'");
      }
    } else if (key.starts_with("train.")) {
      if (!apply_train_setting(cfg.train, key.substr(6), value)) {
        throw ConfigError(where + ": unknown key '" + key + "'");
      }
    } else if (key.starts_with("loss.")) {
      const std::string sub = key.substr(5);
      if (sub != "kind" && sub != "lambda" && sub != "epsilon" && sub != "latent_norm_cap") {
        throw ConfigError(where + ": unknown key '" + key + "'");
      }
      apply_train_setting(cfg.train, sub == "kind" ? "loss" : sub, value);
    } else if (key == "split.fractions") {
      const auto parts = split_list(value);
      if (parts.size() != 3) throw ConfigError(where + ": split.fractions needs three values");
      for (std::size_t i = 0; i < 3; ++i) cfg.split.fractions[i] = to_real(parts[i], key);
    } else if (key == "split.seed") {
      cfg.split.seed = to_uint(value, key);
    } else if (key == "split.stratified") {
      cfg.split.stratified = to_bool(value, key);
    } else {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }

  for (const auto& t : loss_tokens) cfg.losses.push_back(parse_loss_variant(t, cfg.train.loss.lambda));
  for (const auto& d : cfg.datasets) {
    if (d.manifest.empty() == d.synthetic.empty()) {
      throw ConfigError("dataset '" + d.name + "' needs exactly one of manifest or synthetic");
    }
  }
  if (cfg.extract_batch_size == 0) throw ConfigError("extract_batch_size must be positive");
  cfg.head.validate();
  cfg.train.validate();
  cfg.split.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(io::read_text_file(path), path.parent_path());
}

std::string format_experiment_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "encoder = " << c.encoder << "\n"
     << "extract_batch_size = " << c.extract_batch_size << "\n"
     << "out_dir = " << c.out_dir.generic_string() << "\n"
     << "seed = " << c.seed << "\n"
     << "losses = ";
  const auto grid = c.loss_grid();
  for (std::size_t i = 0; i < grid.size(); ++i) os << (i ? ", " : "") << grid[i].key();
  os << "\n";
  os << "split.fractions = " << io::format_double(c.split.fractions[0]) << ", "
     << io::format_double(c.split.fractions[1]) << ", " << io::format_double(c.split.fractions[2])
     << "\n"
     << "split.seed = " << c.split.seed << "\n"
     << "split.stratified = " << (c.split.stratified ? "true" : "false") << "\n";
  std::istringstream head(format_head_config(c.head));
  for (std::string l; std::getline(head, l);) os << "head." << l << "\n";
  std::istringstream train(format_train_config(c.train));
  for (std::string l; std::getline(train, l);) os << "train." << l << "\n";
  for (const auto& d : c.datasets) {
    os << "\n[dataset:" << d.name << "]\n";
    if (!d.manifest.empty()) os << "manifest = " << d.manifest.generic_string() << "\n";
    if (!d.synthetic.empty()) os << "synthetic = " << d.synthetic << "\n";
    if (!d.split.empty()) os << "split = " << d.split.generic_string() << "\n";
    if (!d.images.empty()) os << "images = " << d.images.generic_string() << "\n";
    os << "cache = " << c.cache_path(d).generic_string() << "\n";
    os << "balance = " << (d.balance ? "true" : "false") << "\n";
  }
  return os.str();
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = format_experiment_config(config);
  return io::hex32(io::crc32(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
}

namespace {

SyntheticSpec synthetic_of(const DatasetEntry& entry) {
  auto spec = parse_synthetic_spec(entry.synthetic);
  spec.name = entry.name;
  return spec;
}

std::filesystem::path image_dir(const DatasetEntry& entry) {
  return entry.images.empty() ? entry.manifest.parent_path() : entry.images;
}

// A cache is current when it was built by the configured encoder from the
// same records.
bool cache_is_current(const ExperimentConfig& config, const DatasetEntry& entry,
                      const EmbeddingSet& cached) {
  if (!entry.synthetic.empty()) return cached.encoder_id == synthetic_encoder_id(synthetic_of(entry));
  if (cached.encoder_id != make_adapter(config.encoder, image_dir(entry))->encoder_id()) return false;
  const auto manifest = load_manifest(entry.manifest, entry.name);
  if (manifest.records.size() != cached.size()) return false;
  for (std::size_t i = 0; i < cached.size(); ++i) {
    if (manifest.records[i].id != cached.ids[i] || manifest.records[i].label != cached.labels[i]) return false;
  }
  return true;
}

}  // namespace

EmbeddingSet compute_embeddings(const ExperimentConfig& config, const DatasetEntry& entry) {
  if (!entry.synthetic.empty()) return synth_embeddings(synthetic_of(entry));
  const auto manifest = load_manifest(entry.manifest, entry.name);
  const auto adapter = make_adapter(config.encoder, image_dir(entry));
  return extract_embeddings(manifest, *adapter, config.extract_batch_size);
}

EmbeddingSet obtain_embeddings(const ExperimentConfig& config, const DatasetEntry& entry) {
  const auto path = config.cache_path(entry);
  if (std::filesystem::exists(path)) {
    auto set = load_cache(path);
    if (set.dataset_name != entry.name) {
      throw DataError("cache " + path.string() + " holds dataset '" + set.dataset_name +
                      "', expected '" + entry.name + "'");
    }
    if (cache_is_current(config, entry, set)) return set;
  }
  auto set = compute_embeddings(config, entry);
  save_cache(set, path);
  return set;
}

namespace {
DatasetManifest manifest_of(const EmbeddingSet& set) {
  std::vector<SampleRecord> records;
  records.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) records.push_back({set.ids[i], set.ids[i], set.labels[i]});
  return make_manifest(set.dataset_name, std::move(records));
}

std::vector<std::string> ids_of(const DatasetManifest& m) {
  std::vector<std::string> ids;
  ids.reserve(m.records.size());
  for (const auto& r : m.records) ids.push_back(r.id);
  return ids;
}
}  // namespace

PreparedDataset prepare_dataset(const ExperimentConfig& config, const DatasetEntry& entry) {
  PreparedDataset out;
  out.name = entry.name;
  out.all = obtain_embeddings(config, entry);
  out.all.dataset_name = entry.name;
  auto manifest = manifest_of(out.all);
  if (entry.balance) {
    manifest = balance_classes(manifest, derive_seed(config.split.seed, name_tag("balance:" + entry.name)));
    out.all = select_ids(out.all, ids_of(manifest));
  }
  if (!entry.split.empty()) {
    out.split = load_split_file(entry.split);
    check_split_covers(manifest, out.split);
  } else {
    SplitSpec spec = config.split;
    spec.seed = derive_seed(config.split.seed, name_tag("split:" + entry.name));
    out.split = make_splits(manifest, spec);
  }
  out.train = select_ids(out.all, out.split.train_ids);
  out.val = select_ids(out.all, out.split.val_ids);
  out.test = select_ids(out.all, out.split.test_ids);
  return out;
}

TrainConfig train_config_for(const ExperimentConfig& config, const LossVariant& variant) {
  TrainConfig t = config.train;
  t.loss.kind = variant.kind;
  t.loss.lambda = variant.lambda;
  return t;
}

TrainedModel run_train(const ExperimentConfig& config, const PreparedDataset& data,
                       const LossVariant& variant) {
  auto model = train(data.train, data.val, config.head, train_config_for(config, variant));
  model.train_dataset = data.name;
  return model;
}

std::vector<ExperimentResult> run_matrix(const ExperimentConfig& config) {
  if (config.datasets.empty()) throw ConfigError("matrix needs at least one dataset");
  std::vector<PreparedDataset> data;
  for (const auto& d : config.datasets) data.push_back(prepare_dataset(config, d));
  std::vector<EmbeddingSet> tests;
  for (const auto& d : data) tests.push_back(d.test);

  const auto grid = config.loss_grid();
  const std::size_t jobs = grid.size() * data.size();
  std::vector<TrainedModel> models(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  const auto n = static_cast<std::ptrdiff_t>(jobs);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto j = static_cast<std::size_t>(k);
    try {
      models[j] = run_train(config, data[j % data.size()], grid[j / data.size()]);
    } catch (...) {
      errors[j] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<ExperimentResult> results;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::span<const TrainedModel> block(models.data() + g * data.size(), data.size());
    auto part = zero_shot_matrix(block, tests);
    results.insert(results.end(), part.begin(), part.end());
  }
  return results;
}

std::string format_history(const TrainedModel& model) {
  std::string out = "epoch\ttrain_loss\tclustering_term\tcross_entropy_term\tval_acc\tselected\n";
  for (const auto& r : model.history) {
    out += std::to_string(r.epoch) + '\t' + io::format_double(r.train_loss) + '\t' +
           io::format_double(r.clustering_term) + '\t' + io::format_double(r.cross_entropy_term) +
           '\t' + io::format_double(r.val_accuracy) + '\t' +
           (r.epoch == model.selected_epoch ? "1" : "0") + '\n';
  }
  return out;
}

std::string provenance_block(const ExperimentConfig& config, const std::string& command,
                             const std::map<std::string, std::string>& extra) {
  std::ostringstream os;
  os << "tool = xdt " << kToolVersion << "\n"
     << "command = " << command << "\n"
     << "config_hash = " << config_hash(config) << "\n"
     << "seed = " << config.seed << "\n"
     << "split_seed = " << config.split.seed << "\n"
     << "init_seed = " << config.head.init_seed << "\n"
     << "train_seed = " << config.train.seed << "\n"
     << "encoder = " << config.encoder << "\n"
     << "cache_format = " << kCacheVersion << "\n"
     << "checkpoint_format = " << kCheckpointVersion << "\n"
     << "results_columns = " << kResultsHeader << "\n";
  for (const auto& [k, v] : extra) os << k << " = " << v << "\n";
  os << "\n# resolved config\n" << format_experiment_config(config);
  return os.str();
}

}  // namespace xdt
