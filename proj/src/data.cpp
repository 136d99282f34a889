#include "xdt/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "xdt/error.hpp"
#include "xdt/io.hpp"
#include "xdt/rng.hpp"

namespace xdt {

std::string_view label_token(Label l) { return l == Label::positive ? "pos" : "neg"; }

Label parse_label_token(std::string_view token) {
  if (token == "pos") return Label::positive;
  if (token == "neg") return Label::negative;
  throw DataError("unknown label token '" + std::string(token) + "' (expected pos|neg)");
}

DatasetManifest make_manifest(std::string name, std::vector<SampleRecord> records) {
  if (records.empty()) throw DataError("manifest '" + name + "' has no records");
  DatasetManifest m;
  m.name = std::move(name);
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (r.id.empty()) throw DataError("manifest '" + m.name + "': empty record id");
    if (!seen.insert(r.id).second) {
      throw DataError("manifest '" + m.name + "': duplicate id '" + r.id + "'");
    }
    if (r.label == Label::positive) {
      ++m.positive_count;
    } else if (r.label == Label::negative) {
      ++m.negative_count;
    } else {
      throw DataError("manifest '" + m.name + "': invalid label for '" + r.id + "'");
    }
  }
  m.records = std::move(records);
  return m;
}

namespace {

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t") == std::string_view::npos;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) lines.push_back(strip_cr(text.substr(start)));
      break;
    }
    lines.push_back(strip_cr(text.substr(start, nl - start)));
    start = nl + 1;
  }
  return lines;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path, std::string name) {
  if (!std::filesystem::exists(path)) {
    throw DataError("manifest not found: " + path.string());
  }
  const std::string text = io::read_text_file(path);
  std::vector<SampleRecord> records;
  std::size_t lineno = 0;
  for (auto line : split_lines(text)) {
    ++lineno;
    if (line.starts_with('#') || is_blank(line)) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": malformed row (expected id<TAB>source<TAB>label)");
    }
    SampleRecord r;
    r.id = std::string(line.substr(0, t1));
    r.source = std::string(line.substr(t1 + 1, t2 - t1 - 1));
    try {
      r.label = parse_label_token(line.substr(t2 + 1));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    records.push_back(std::move(r));
  }
  if (name.empty()) name = path.stem().string();
  return make_manifest(std::move(name), std::move(records));
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out = "# " + manifest.name + "\n";
  for (const auto& r : manifest.records) {
    out += r.id + "\t" + r.source + "\t" + std::string(label_token(r.label)) + "\n";
  }
  return out;
}

void SplitSpec::validate() const {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fraction outside [0,1]");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

namespace {

// floor(f*n) with a small tolerance so that e.g. 0.29*100 lands on 29.
std::size_t split_size(double fraction, std::size_t n) {
  if (fraction <= 0.0) return 0;
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  return std::max<std::size_t>(k, 1);
}

struct Portion {
  std::vector<std::size_t> train, val, test;
};

Portion split_group(std::vector<std::size_t> members, const SplitSpec& spec, Rng& rng,
                    const std::string& what) {
  rng.shuffle(std::span(members));
  const std::size_t n = members.size();
  const std::size_t nv = split_size(spec.fractions[1], n);
  const std::size_t nt = split_size(spec.fractions[2], n);
  if (nv + nt > n || (spec.fractions[0] > 0.0 && nv + nt == n)) {
    throw DataError(what + " with " + std::to_string(n) +
                    " records is too small to populate every split");
  }
  Portion p;
  p.val.assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(nv));
  p.test.assign(members.begin() + static_cast<std::ptrdiff_t>(nv),
                members.begin() + static_cast<std::ptrdiff_t>(nv + nt));
  p.train.assign(members.begin() + static_cast<std::ptrdiff_t>(nv + nt), members.end());
  return p;
}

}  // namespace

SplitAssignment make_splits(const DatasetManifest& manifest, const SplitSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Portion> portions;
  if (spec.stratified) {
    for (Label l : {Label::positive, Label::negative}) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        if (manifest.records[i].label == l) members.push_back(i);
      }
      if (members.empty()) continue;
      portions.push_back(split_group(std::move(members), spec, rng,
                                     "class '" + std::string(label_token(l)) + "'"));
    }
  } else {
    std::vector<std::size_t> all(manifest.records.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    portions.push_back(split_group(std::move(all), spec, rng, "manifest"));
  }

  auto gather = [&](auto member) {
    std::vector<std::size_t> idx;
    for (const auto& p : portions) {
      const auto& part = p.*member;
      idx.insert(idx.end(), part.begin(), part.end());
    }
    rng.shuffle(std::span(idx));
    std::vector<std::string> ids;
    ids.reserve(idx.size());
    for (auto i : idx) ids.push_back(manifest.records[i].id);
    return ids;
  };
  SplitAssignment out;
  out.train_ids = gather(&Portion::train);
  out.val_ids = gather(&Portion::val);
  out.test_ids = gather(&Portion::test);
  return out;
}

SplitAssignment parse_split_text(std::string_view text) {
  SplitAssignment out;
  std::vector<std::string>* current = nullptr;
  std::size_t lineno = 0;
  for (auto line : split_lines(text)) {
    ++lineno;
    if (line.starts_with('#') || is_blank(line)) continue;
    if (line == "[train]") {
      current = &out.train_ids;
    } else if (line == "[val]") {
      current = &out.val_ids;
    } else if (line == "[test]") {
      current = &out.test_ids;
    } else if (current == nullptr) {
      throw DataError("split file line " + std::to_string(lineno) + ": id before section header");
    } else {
      current->emplace_back(line);
    }
  }
  std::unordered_set<std::string> seen;
  for (const auto* part : {&out.train_ids, &out.val_ids, &out.test_ids}) {
    for (const auto& id : *part) {
      if (!seen.insert(id).second) throw DataError("split file: id '" + id + "' listed twice");
    }
  }
  return out;
}

SplitAssignment load_split_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("split file not found: " + path.string());
  return parse_split_text(io::read_text_file(path));
}

std::string format_split(const SplitAssignment& split) {
  std::string out;
  auto section = [&](const char* header, const std::vector<std::string>& ids) {
    out += header;
    out += '\n';
    for (const auto& id : ids) out += id + "\n";
  };
  section("[train]", split.train_ids);
  section("[val]", split.val_ids);
  section("[test]", split.test_ids);
  return out;
}

void check_split_covers(const DatasetManifest& manifest, const SplitAssignment& split) {
  std::unordered_map<std::string, int> hits;
  for (const auto& r : manifest.records) hits[r.id] = 0;
  for (const auto* part : {&split.train_ids, &split.val_ids, &split.test_ids}) {
    for (const auto& id : *part) {
      auto it = hits.find(id);
      if (it == hits.end()) throw DataError("split references unknown id '" + id + "'");
      if (++it->second > 1) throw DataError("split assigns id '" + id + "' twice");
    }
  }
  for (const auto& [id, n] : hits) {
    if (n == 0) throw DataError("split does not assign id '" + id + "'");
  }
}

DatasetManifest balance_classes(const DatasetManifest& manifest, std::uint64_t seed) {
  if (manifest.positive_count == 0 || manifest.negative_count == 0) {
    throw DataError("cannot balance '" + manifest.name + "': a class is empty");
  }
  if (manifest.positive_count == manifest.negative_count) return manifest;

  const Label majority =
      manifest.positive_count > manifest.negative_count ? Label::positive : Label::negative;
  const std::size_t keep = std::min(manifest.positive_count, manifest.negative_count);

  std::vector<std::size_t> major;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].label == majority) major.push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(std::span(major));
  std::vector<bool> retained(manifest.records.size(), true);
  for (std::size_t k = keep; k < major.size(); ++k) retained[major[k]] = false;

  std::vector<SampleRecord> records;
  records.reserve(2 * keep);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (retained[i]) records.push_back(manifest.records[i]);
  }
  return make_manifest(manifest.name, std::move(records));
}

}  // namespace xdt
