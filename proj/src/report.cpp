#include "xdt/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "xdt/error.hpp"
#include "xdt/io.hpp"

namespace xdt {

std::string fixed2(double v) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

namespace {

std::string full(double v) { return std::isnan(v) ? "nan" : io::format_double(v); }
std::string pct(double v) { return std::isnan(v) ? "-" : fixed2(100.0 * v); }

std::vector<std::string> tabs(const std::string& line) {
  std::vector<std::string> f;
  std::size_t s = 0;
  while (true) {
    const auto t = line.find('\t', s);
    f.push_back(line.substr(s, t == std::string::npos ? std::string::npos : t - s));
    if (t == std::string::npos) return f;
    s = t + 1;
  }
}

double number(const std::string& s) {
  if (s == "nan" || s == "-" || s.empty()) return std::nan("");
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw DataError("baselines: bad number '" + s + "'");
  return v;
}

void add_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

std::string md_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

std::string md_rule(std::size_t n) {
  std::string out = "|";
  for (std::size_t i = 0; i < n; ++i) out += " --- |";
  return out + "\n";
}

struct Index {
  std::vector<std::string> variants;  // first-appearance order
  std::vector<std::string> datasets;
  std::map<std::tuple<std::string, std::string, std::string>, const ExperimentResult*> cell;

  const ExperimentResult* find(const std::string& v, const std::string& t, const std::string& e) const {
    const auto it = cell.find({v, t, e});
    return it == cell.end() ? nullptr : it->second;
  }
};

Index index_results(std::span<const ExperimentResult> results) {
  Index ix;
  for (const auto& r : results) {
    const auto v = loss_variant(r.loss, r.lambda);
    add_unique(ix.variants, v);
    add_unique(ix.datasets, r.train_dataset);
    add_unique(ix.datasets, r.eval_dataset);
    if (!ix.cell.emplace(std::make_tuple(v, r.train_dataset, r.eval_dataset), &r).second) {
      throw DataError("results list (" + v + ", " + r.train_dataset + ", " + r.eval_dataset +
                      ") more than once");
    }
  }
  return ix;
}

ReportFile supervised_tsv(std::span<const ExperimentResult> results) {
  std::string out = "loss\tdataset\tacc\tf1\tacc_sb\tacc_rel\n";
  for (const auto& r : results) {
    if (r.zero_shot) continue;
    out += loss_variant(r.loss, r.lambda) + '\t' + r.eval_dataset + '\t' + full(r.metrics.acc) + '\t' +
           full(r.metrics.f1) + '\t' + full(r.metrics.acc_sb) + '\t' + full(r.metrics.acc_rel) + '\n';
  }
  return {"supervised.tsv", out};
}

std::string supervised_table(const Index& ix) {
  std::vector<std::string> head{"Loss"};
  for (const auto& d : ix.datasets) {
    head.push_back(d + " Acc");
    head.push_back(d + " F1");
  }
  std::string out = md_row(head) + md_rule(head.size());
  for (const auto& v : ix.variants) {
    std::vector<std::string> row{loss_variant_label(v)};
    for (const auto& d : ix.datasets) {
      const auto* r = ix.find(v, d, d);
      row.push_back(r ? pct(r->metrics.acc) : "-");
      row.push_back(r ? fixed2(r->metrics.f1) : "-");
    }
    out += md_row(row);
  }
  return out;
}

std::string zero_shot_table(const Index& ix) {
  std::vector<std::string> head{"Loss", "Trained on"};
  for (const auto& d : ix.datasets) {
    head.push_back(d + " Acc");
    head.push_back(d + " F1");
  }
  std::string out = md_row(head) + md_rule(head.size());
  for (const auto& v : ix.variants) {
    for (const auto& t : ix.datasets) {
      bool any = false;
      std::vector<std::string> row{loss_variant_label(v), t};
      for (const auto& e : ix.datasets) {
        const auto* r = t == e ? nullptr : ix.find(v, t, e);
        any = any || r;
        row.push_back(t == e ? "x" : r ? pct(r->metrics.acc) : "-");
        row.push_back(t == e ? "x" : r ? fixed2(r->metrics.f1) : "-");
      }
      if (any) out += md_row(row);
    }
  }
  return out;
}

std::vector<ReportFile> zero_shot_files(const Index& ix, std::span<const ExperimentResult> results,
                                        std::span<const BaselineRow> baselines) {
  std::vector<std::string> evals = ix.datasets;
  std::vector<std::string> methods;
  std::map<std::pair<std::string, std::string>, const BaselineRow*> base;
  for (const auto& b : baselines) {
    add_unique(evals, b.eval_dataset);
    add_unique(methods, b.method);
    base[{b.method, b.eval_dataset}] = &b;
  }
  std::map<std::string, double> sb;
  for (const auto& r : results) {
    if (!std::isnan(r.metrics.acc_sb)) sb.emplace(r.eval_dataset, r.metrics.acc_sb);
  }

  std::string tsv = "method\ttrain_ds\teval_ds\tacc\tf1\n";
  for (const auto& b : baselines) {
    tsv += b.method + "\t-\t" + b.eval_dataset + '\t' + full(b.acc) + '\t' + full(b.f1) + '\n';
  }
  for (const auto& e : evals) {
    if (sb.contains(e)) tsv += "statistical_best\t-\t" + e + '\t' + full(sb[e]) + "\tnan\n";
  }
  for (const auto& r : results) {
    if (!r.zero_shot) continue;
    tsv += loss_variant(r.loss, r.lambda) + '\t' + r.train_dataset + '\t' + r.eval_dataset + '\t' +
           full(r.metrics.acc) + '\t' + full(r.metrics.f1) + '\n';
  }

  std::vector<std::string> head{"Method"};
  for (const auto& e : evals) {
    head.push_back(e + " Acc");
    head.push_back(e + " F1");
  }
  std::string md;
  const std::vector<std::string> blocks = ix.variants.empty() ? std::vector<std::string>{""} : ix.variants;
  for (const auto& v : blocks) {
    if (!v.empty()) md += "### " + loss_variant_label(v) + "\n\n";
    md += md_row(head) + md_rule(head.size());
    for (const auto& m : methods) {
      std::vector<std::string> row{m};
      for (const auto& e : evals) {
        const auto it = base.find({m, e});
        row.push_back(it == base.end() ? "-" : pct(it->second->acc));
        row.push_back(it == base.end() ? "-" : fixed2(it->second->f1));
      }
      md += md_row(row);
    }
    if (!sb.empty()) {
      std::vector<std::string> row{"Statistical Best (computed)"};
      for (const auto& e : evals) {
        row.push_back(sb.contains(e) ? pct(sb[e]) : "-");
        row.push_back("-");
      }
      md += md_row(row);
    }
    for (const auto& t : ix.datasets) {
      std::vector<std::string> row{"Trained on " + t};
      bool any = false;
      for (const auto& e : evals) {
        const auto* r = t == e ? nullptr : ix.find(v, t, e);
        any = any || r;
        row.push_back(t == e ? "x" : r ? pct(r->metrics.acc) : "-");
        row.push_back(t == e ? "x" : r ? fixed2(r->metrics.f1) : "-");
      }
      if (any) md += md_row(row);
    }
    md += "\n";
  }
  return {{"zeroshot.tsv", tsv}, {"zeroshot.md", md}};
}

std::vector<ReportFile> rank_files(const Index& ix, std::span<const ExperimentResult> results) {
  std::vector<GridCell> grid;
  for (const auto& r : results) {
    grid.push_back({loss_variant(r.loss, r.lambda), r.train_dataset, r.eval_dataset, r.metrics.acc});
  }
  const auto mar = compute_mar(grid);

  std::string ranks = "loss\ttrain_ds\teval_ds\trank\n";
  std::map<std::tuple<std::string, std::string, std::string>, double> rank_of;
  for (const auto& c : mar.ranks) {
    ranks += c.loss + '\t' + c.train + '\t' + c.eval + '\t' + full(c.rank) + '\n';
    rank_of[{c.loss, c.train, c.eval}] = c.rank;
  }
  std::string tsv = "loss\tmar\n";
  std::string md = "| Loss | MAR |\n| --- | --- |\n";
  for (const auto& v : ix.variants) {
    tsv += v + '\t' + full(mar.mar.at(v)) + '\n';
    md += md_row({loss_variant_label(v), fixed2(mar.mar.at(v))});
  }

  md += "\n### Ranks\n\n";
  std::vector<std::string> head{"Loss", "Trained on"};
  for (const auto& d : ix.datasets) head.push_back(d);
  md += md_row(head) + md_rule(head.size());
  for (const auto& v : ix.variants) {
    for (const auto& t : ix.datasets) {
      std::vector<std::string> row{loss_variant_label(v), t};
      bool any = false;
      for (const auto& e : ix.datasets) {
        const auto it = rank_of.find({v, t, e});
        any = any || it != rank_of.end();
        row.push_back(it == rank_of.end() ? "-" : fixed2(it->second));
      }
      if (any) md += md_row(row);
    }
  }
  return {{"ranks.tsv", ranks}, {"mar.tsv", tsv}, {"mar.md", md}};
}

ReportFile radar_tsv(std::span<const ExperimentResult> results, std::span<const BaselineRow> baselines) {
  std::string out = "series\taxis\tacc\n";
  for (const auto& b : baselines) out += b.method + '\t' + b.eval_dataset + '\t' + full(b.acc) + '\n';
  for (const auto& r : results) {
    if (!r.zero_shot) continue;
    out += loss_variant(r.loss, r.lambda) + " trained on " + r.train_dataset + '\t' + r.eval_dataset +
           '\t' + full(r.metrics.acc) + '\n';
  }
  return {"radar.tsv", out};
}

ReportFile scatter_tsv(std::span<const ExperimentResult> results) {
  std::string out = "size_ratio\tacc_rel\ttrain_ds\teval_ds\tloss\n";
  for (const auto& r : results) {
    if (!r.zero_shot) continue;
    out += full(r.size_ratio) + '\t' + full(r.metrics.acc_rel) + '\t' + r.train_dataset + '\t' +
           r.eval_dataset + '\t' + loss_variant(r.loss, r.lambda) + '\n';
  }
  return {"scatter.tsv", out};
}

}  // namespace

std::vector<BaselineRow> parse_baselines(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  std::vector<BaselineRow> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto f = tabs(line);
    if (header.empty()) {
      header = f;
      if (header != std::vector<std::string>{"method", "eval_ds", "acc", "f1"}) {
        throw DataError("baselines header must be: method, eval_ds, acc, f1");
      }
      continue;
    }
    if (f.size() != 4) throw DataError("baselines line " + std::to_string(lineno) + ": expected 4 fields");
    out.push_back({f[0], f[1], number(f[2]), number(f[3])});
  }
  if (header.empty()) throw DataError("baselines file has no header");
  return out;
}

std::vector<BaselineRow> load_baselines(const std::filesystem::path& path) {
  return parse_baselines(io::read_text_file(path));
}

std::vector<ReportFile> build_report(std::span<const ExperimentResult> results,
                                     std::span<const BaselineRow> baselines) {
  const Index ix = index_results(results);
  std::vector<ReportFile> files;
  files.push_back(supervised_tsv(results));
  files.push_back({"supervised.md", supervised_table(ix)});
  for (auto& f : zero_shot_files(ix, results, baselines)) files.push_back(std::move(f));
  files.push_back({"loss_tables.md", "## Supervised\n\n" + supervised_table(ix) +
                                         "\n## Zero-shot\n\n" + zero_shot_table(ix)});
  for (auto& f : rank_files(ix, results)) files.push_back(std::move(f));
  files.push_back(radar_tsv(results, baselines));
  files.push_back(scatter_tsv(results));
  return files;
}

void write_report(const std::filesystem::path& dir, std::span<const ReportFile> files) {
  for (const auto& f : files) io::write_text_atomic(dir / f.name, f.content);
}

}  // namespace xdt
