#include "xdt/encoder.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "xdt/error.hpp"
#include "xdt/io.hpp"
#include "xdt/rng.hpp"

namespace xdt {

std::size_t EmbeddingSet::count(Label l) const {
  std::size_t n = 0;
  for (auto x : labels) n += (x == l);
  return n;
}

void EmbeddingSet::validate() const {
  if (labels.size() != ids.size() || vectors.rows != ids.size()) {
    throw DataError("embedding set '" + dataset_name + "': ids, labels and vectors differ in length");
  }
  if (vectors.data.size() != vectors.rows * vectors.cols) {
    throw DataError("embedding set '" + dataset_name + "': vector storage has wrong size");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) {
      throw DataError("embedding set '" + dataset_name + "': duplicate id '" + id + "'");
    }
  }
  for (std::size_t r = 0; r < vectors.rows; ++r) {
    for (double v : vectors.row(r)) {
      if (!std::isfinite(v)) {
        throw DataError("embedding set '" + dataset_name + "': non-finite entry for '" + ids[r] + "'");
      }
    }
  }
}

EmbeddingSet select_ids(const EmbeddingSet& set, std::span<const std::string> ids) {
  std::unordered_map<std::string, std::size_t> index;
  index.reserve(set.ids.size());
  for (std::size_t i = 0; i < set.ids.size(); ++i) index.emplace(set.ids[i], i);

  EmbeddingSet out;
  out.dataset_name = set.dataset_name;
  out.encoder_id = set.encoder_id;
  out.vectors.resize(ids.size(), set.dim());
  out.ids.reserve(ids.size());
  out.labels.reserve(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    auto it = index.find(ids[k]);
    if (it == index.end()) {
      throw DataError("id '" + ids[k] + "' not found in embedding set '" + set.dataset_name + "'");
    }
    out.ids.push_back(ids[k]);
    out.labels.push_back(set.labels[it->second]);
    const auto src = set.vectors.row(it->second);
    std::copy(src.begin(), src.end(), out.vectors.row(k).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM projection adapter

namespace {

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<double> pixels;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& source) {
  std::filesystem::path p(source);
  if (p.is_relative() && !base.empty()) return base / p;
  return p;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image: " + path.string());

  auto next_token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  auto next_uint = [&]() -> std::size_t {
    const std::string tok = next_token();
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      throw DataError("malformed PGM header: " + path.string());
    }
    return v;
  };

  const std::string magic = next_token();
  if (magic != "P5" && magic != "P2") throw DataError("not a PGM image: " + path.string());
  GrayImage img;
  img.width = next_uint();
  img.height = next_uint();
  const std::size_t maxval = next_uint();
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) {
    throw DataError("unsupported PGM geometry: " + path.string());
  }
  const std::size_t n = img.width * img.height;
  img.pixels.resize(n);
  if (magic == "P2") {
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<double>(next_uint());
  } else {
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(n * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
      throw DataError("truncated PGM image: " + path.string());
    }
    for (std::size_t i = 0; i < n; ++i) {
      img.pixels[i] = bytes == 1 ? raw[i] : static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  }
  for (auto& v : img.pixels) v /= static_cast<double>(maxval);
  return img;
}

std::vector<double> resample(const GrayImage& img, std::size_t side) {
  std::vector<double> out(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * static_cast<double>(img.height) /
                          static_cast<double>(side) - 0.5;
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * static_cast<double>(img.width) /
                            static_cast<double>(side) - 0.5;
      const double cx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const double cy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
      const auto x0 = static_cast<std::size_t>(cx);
      const auto y0 = static_cast<std::size_t>(cy);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const std::size_t y1 = std::min(y0 + 1, img.height - 1);
      const double ax = cx - static_cast<double>(x0);
      const double ay = cy - static_cast<double>(y0);
      auto px = [&](std::size_t xx, std::size_t yy) { return img.pixels[yy * img.width + xx]; };
      out[y * side + x] = (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x1, y0)) +
                          ay * ((1 - ax) * px(x0, y1) + ax * px(x1, y1));
    }
  }
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (double v : out) var += (v - mean) * (v - mean);
  var /= static_cast<double>(out.size());
  const double inv = 1.0 / std::sqrt(var + 1e-12);
  for (auto& v : out) v = (v - mean) * inv;
  return out;
}

}  // namespace

PgmProjectionAdapter::PgmProjectionAdapter(std::filesystem::path base_dir, std::size_t dim,
                                           std::size_t side, std::uint64_t seed)
    : base_dir_(std::move(base_dir)), dim_(dim), side_(side), seed_(seed) {
  if (dim_ == 0 || side_ == 0) throw ConfigError("pgm-randproj: dim and side must be positive");
  const std::size_t in = side_ * side_;
  projection_.resize(dim_, in);
  Rng rng(seed_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& w : projection_.data) w = rng.normal() * scale;
}

std::string PgmProjectionAdapter::encoder_id() const {
  return "pgm-randproj:" + std::to_string(dim_) + ":" + std::to_string(side_) + ":" +
         std::to_string(seed_);
}

Matrix PgmProjectionAdapter::embed(std::span<const SampleRecord> batch) const {
  Matrix pixels(batch.size(), side_ * side_);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto v = resample(read_pgm(resolve(base_dir_, batch[i].source)), side_);
    std::copy(v.begin(), v.end(), pixels.row(i).begin());
  }
  Matrix out(batch.size(), dim_);
  const std::vector<double> zero(dim_, 0.0);
  kernels::serial::linear_forward(pixels, projection_, zero, out);
  return out;
}

PrecomputedAdapter::PrecomputedAdapter(std::filesystem::path base_dir, std::size_t dim,
                                       std::string upstream_id)
    : base_dir_(std::move(base_dir)), dim_(dim), upstream_id_(std::move(upstream_id)) {
  if (dim_ == 0) throw ConfigError("precomputed adapter: dim must be positive");
}

std::string PrecomputedAdapter::encoder_id() const {
  return "precomputed:" + std::to_string(dim_) + ":" + upstream_id_;
}

Matrix PrecomputedAdapter::embed(std::span<const SampleRecord> batch) const {
  Matrix out(batch.size(), dim_);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto path = resolve(base_dir_, batch[i].source);
    std::ifstream in(path);
    if (!in) throw DataError("cannot read embedding file: " + path.string());
    std::size_t k = 0;
    std::string tok;
    while (in >> tok) {
      if (k == dim_) throw AdapterError("embedding file has more than " + std::to_string(dim_) + " values: " + path.string());
      double v = 0.0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size()) {
        throw DataError("malformed value '" + tok + "' in " + path.string());
      }
      out(i, k++) = v;
    }
    if (k != dim_) {
      throw AdapterError("embedding file has " + std::to_string(k) + " values, expected " +
                         std::to_string(dim_) + ": " + path.string());
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

std::uint64_t to_u64(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("invalid " + what + ": '" + s + "'");
  return v;
}

double to_double(const std::string& s, const std::string& what) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("invalid " + what + ": '" + s + "'");
  return v;
}

}  // namespace

std::unique_ptr<EncoderAdapter> make_adapter(const std::string& spec,
                                             const std::filesystem::path& base_dir) {
  const auto parts = split_on(spec, ':');
  if (parts.empty()) throw ConfigError("empty encoder id");
  if (parts[0] == "pgm-randproj") {
    const std::size_t dim = parts.size() > 1 ? to_u64(parts[1], "encoder dim") : kDefaultEncoderDim;
    const std::size_t side = parts.size() > 2 ? to_u64(parts[2], "image side") : 32;
    const std::uint64_t seed = parts.size() > 3 ? to_u64(parts[3], "projection seed") : 0;
    return std::make_unique<PgmProjectionAdapter>(base_dir, dim, side, seed);
  }
  if (parts[0] == "precomputed") {
    if (parts.size() < 2) throw ConfigError("precomputed encoder needs a dimension");
    return std::make_unique<PrecomputedAdapter>(base_dir, to_u64(parts[1], "encoder dim"),
                                                parts.size() > 2 ? parts[2] : "external");
  }
  throw ConfigError("unknown encoder id '" + spec + "'");
}

EmbeddingSet extract_embeddings(const DatasetManifest& manifest, const EncoderAdapter& adapter,
                                std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t n = manifest.records.size();
  const std::size_t dim = adapter.encoder_dim();
  EmbeddingSet set;
  set.dataset_name = manifest.name;
  set.encoder_id = adapter.encoder_id();
  set.vectors.resize(n, dim);
  set.ids.reserve(n);
  set.labels.reserve(n);
  for (const auto& r : manifest.records) {
    set.ids.push_back(r.id);
    set.labels.push_back(r.label);
  }

  const std::size_t batches = (n + batch_size - 1) / batch_size;
  std::vector<std::exception_ptr> failures(batches);
  std::span<const SampleRecord> records(manifest.records);

  // Re-runs a failed batch one record at a time so the error names the record.
  auto attribute = [&](std::span<const SampleRecord> batch) {
    for (const auto& r : batch) {
      try {
        adapter.embed(std::span(&r, 1));
      } catch (const DataError& e) {
        throw DataError("record '" + r.id + "': " + e.what());
      } catch (const std::exception& e) {
        throw AdapterError("record '" + r.id + "': " + e.what());
      }
    }
  };

  const auto nb = static_cast<std::ptrdiff_t>(batches);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const std::size_t start = static_cast<std::size_t>(b) * batch_size;
    const auto batch = records.subspan(start, std::min(batch_size, n - start));
    try {
      Matrix rows;
      try {
        rows = adapter.embed(batch);
      } catch (const std::exception&) {
        attribute(batch);
        throw;
      }
      if (rows.rows != batch.size() || rows.cols != dim) {
        throw AdapterError("adapter '" + adapter.encoder_id() + "' returned a " +
                           std::to_string(rows.rows) + "x" + std::to_string(rows.cols) +
                           " block for a batch of " + std::to_string(batch.size()) +
                           " (dimension " + std::to_string(dim) + ")");
      }
      for (std::size_t i = 0; i < batch.size(); ++i) {
        for (double v : rows.row(i)) {
          if (!std::isfinite(v)) {
            throw AdapterError("adapter produced a non-finite value for record '" + batch[i].id + "'");
          }
        }
        std::copy(rows.row(i).begin(), rows.row(i).end(), set.vectors.row(start + i).begin());
      }
    } catch (...) {
      failures[static_cast<std::size_t>(b)] = std::current_exception();
    }
  }
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Synthetic clusters

void SyntheticSpec::validate() const {
  if (dim == 0) throw ConfigError("synthetic: dim must be positive");
  if (healthy_center.size() != dim || disease_center.size() != dim) {
    throw ConfigError("synthetic: centers must have length dim");
  }
  if (healthy_center == disease_center) throw ConfigError("synthetic: centers must differ");
  if (!(spread > 0.0) || !std::isfinite(spread)) throw ConfigError("synthetic: spread must be positive");
  if (n_per_class == 0) throw ConfigError("synthetic: n must be positive");
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  std::map<std::string, std::string> kv;
  for (const auto& item : split_on(text, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("synthetic spec item without '=': '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  static const std::unordered_set<std::string> known{"name", "dim",  "sep",  "n",
                                                     "seed", "spread", "axis", "shift",
                                                     "tilt"};
  for (const auto& [k, v] : kv) {
    if (!known.contains(k)) throw ConfigError("unknown synthetic spec key '" + k + "'");
  }
  SyntheticSpec s;
  if (kv.contains("name")) s.name = kv["name"];
  if (kv.contains("dim")) s.dim = to_u64(kv["dim"], "dim");
  const double sep = kv.contains("sep") ? to_double(kv["sep"], "sep") : 2.0;
  s.spread = kv.contains("spread") ? to_double(kv["spread"], "spread") : sep / 20.0;
  if (kv.contains("n")) s.n_per_class = to_u64(kv["n"], "n");
  if (kv.contains("seed")) s.seed = to_u64(kv["seed"], "seed");
  const std::size_t axis = kv.contains("axis") ? to_u64(kv["axis"], "axis") : 0;
  const double shift = kv.contains("shift") ? to_double(kv["shift"], "shift") : 0.0;
  const double tilt = kv.contains("tilt") ? to_double(kv["tilt"], "tilt") : 0.0;
  if (s.dim == 0 || axis >= s.dim) throw ConfigError("synthetic: axis must be below dim");
  if (tilt != 0.0 && s.dim < 2) throw ConfigError("synthetic: tilt needs dim >= 2");
  s.healthy_center.assign(s.dim, 0.0);
  s.healthy_center[s.dim - 1] = shift;
  s.disease_center = s.healthy_center;
  // Offset of length sep, rotated by tilt degrees from `axis` toward the next axis.
  const double t = tilt * std::numbers::pi / 180.0;
  s.disease_center[axis] += sep * std::cos(t);
  if (tilt != 0.0) s.disease_center[(axis + 1) % s.dim] += sep * std::sin(t);
  s.validate();
  return s;
}

std::string synthetic_encoder_id(const SyntheticSpec& spec) {
  io::ByteWriter centers;
  for (const auto* c : {&spec.healthy_center, &spec.disease_center}) {
    for (double v : *c) centers.f64(v);
  }
  return "synthetic:dim=" + std::to_string(spec.dim) + ",n=" + std::to_string(spec.n_per_class) +
         ",spread=" + io::format_double(spec.spread) + ",seed=" + std::to_string(spec.seed) +
         ",centers=" + io::hex32(io::crc32(centers.bytes()));
}

EmbeddingSet synth_embeddings(const SyntheticSpec& spec) {
  spec.validate();
  EmbeddingSet set;
  set.dataset_name = spec.name;
  set.encoder_id = synthetic_encoder_id(spec);
  set.vectors.resize(2 * spec.n_per_class, spec.dim);
  Rng rng(spec.seed);
  std::size_t row = 0;
  for (Label l : {Label::positive, Label::negative}) {
    const auto& center = l == Label::positive ? spec.disease_center : spec.healthy_center;
    for (std::size_t k = 0; k < spec.n_per_class; ++k, ++row) {
      char id[32];
      std::snprintf(id, sizeof id, "-%c%06zu", l == Label::positive ? 'p' : 'n', k);
      set.ids.push_back(spec.name + id);
      set.labels.push_back(l);
      auto v = set.vectors.row(row);
      for (std::size_t d = 0; d < spec.dim; ++d) v[d] = center[d] + spec.spread * rng.normal();
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Cache file

namespace {
constexpr char kCacheMagic[] = "XDTE";

CacheHeader read_header(io::ByteReader& r) {
  if (r.raw(4) != kCacheMagic) throw FormatError("not an embedding cache (bad magic)");
  CacheHeader h;
  h.version = r.u16();
  if (h.version != kCacheVersion) {
    throw FormatError("embedding cache version " + std::to_string(h.version) +
                      " unsupported (expected " + std::to_string(kCacheVersion) + ")");
  }
  h.dataset_name = r.str();
  h.encoder_id = r.str();
  h.count = r.u64();
  h.dim = r.u32();
  return h;
}
}  // namespace

std::vector<std::uint8_t> encode_cache(const EmbeddingSet& set) {
  set.validate();
  io::ByteWriter w;
  w.raw(kCacheMagic);
  w.u16(kCacheVersion);
  w.str(set.dataset_name);
  w.str(set.encoder_id);
  w.u64(set.size());
  w.u32(static_cast<std::uint32_t>(set.dim()));
  for (auto l : set.labels) w.u8(static_cast<std::uint8_t>(l));
  for (const auto& id : set.ids) w.str(id);
  for (double v : set.vectors.data) w.f64(v);
  io::seal_with_crc(w);
  return std::move(w.bytes());
}

EmbeddingSet decode_cache(std::span<const std::uint8_t> bytes) {
  // Magic and version come first so a foreign file is reported as such.
  {
    io::ByteReader peek(bytes);
    read_header(peek);
  }
  io::ByteReader r(io::verify_crc(bytes));
  const CacheHeader h = read_header(r);
  EmbeddingSet set;
  set.dataset_name = h.dataset_name;
  set.encoder_id = h.encoder_id;
  if (h.count > r.remaining()) throw FormatError("truncated file: label list");
  set.labels.reserve(h.count);
  for (std::uint64_t i = 0; i < h.count; ++i) {
    const auto l = r.u8();
    if (l > 1) throw FormatError("invalid label byte in cache");
    set.labels.push_back(static_cast<Label>(l));
  }
  set.ids.reserve(h.count);
  for (std::uint64_t i = 0; i < h.count; ++i) set.ids.push_back(r.str());
  if (h.count * h.dim * 8 != r.remaining()) throw FormatError("truncated file: payload size mismatch");
  set.vectors.resize(h.count, h.dim);
  for (auto& v : set.vectors.data) v = r.f64();
  set.validate();
  return set;
}

std::uint32_t save_cache(const EmbeddingSet& set, const std::filesystem::path& path) {
  const auto bytes = encode_cache(set);
  io::write_file_atomic(path, bytes);
  io::ByteReader tail(std::span<const std::uint8_t>(bytes).last(4));
  return tail.u32();
}

EmbeddingSet load_cache(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("cache file not found: " + path.string());
  return decode_cache(io::read_file(path));
}

CacheHeader read_cache_header(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  return read_header(r);
}

}  // namespace xdt
