#include "xdt/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "xdt/error.hpp"
#include "xdt/io.hpp"
#include "xdt/rng.hpp"

namespace xdt {

std::string_view head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::transformer: return "transformer";
    case HeadKind::mlp: return "mlp";
    case HeadKind::linear: return "linear";
  }
  return "?";
}

HeadKind parse_head_kind(std::string_view s) {
  if (s == "transformer") return HeadKind::transformer;
  if (s == "mlp") return HeadKind::mlp;
  if (s == "linear") return HeadKind::linear;
  throw ConfigError("unknown head kind '" + std::string(s) + "'");
}

void HeadConfig::validate() const {
  if (num_layers == 0 || model_dim == 0 || num_heads == 0 || ffn_dim == 0 ||
      projection_dim == 0 || num_classes == 0) {
    throw ConfigError("head config: every size must be positive");
  }
  if (model_dim % num_heads != 0) {
    throw ConfigError("head config: model_dim " + std::to_string(model_dim) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (num_classes < 2) throw ConfigError("head config: num_classes must be at least 2");
}

std::size_t HeadParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.data.size();
  return n;
}

const Tensor* HeadParameters::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

Tensor* HeadParameters::find(std::string_view name) {
  for (auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

constexpr std::size_t kTransformerBlock = 16;
constexpr std::size_t kMlpBlock = 4;

// Offsets within a transformer block.
enum : std::size_t {
  kQw, kQb, kKw, kKb, kVw, kVb, kOw, kOb, kN1g, kN1b, kF1w, kF1b, kF2w, kF2b, kN2g, kN2b
};
// Offsets within an mlp block.
enum : std::size_t { kFc1w, kFc1b, kFc2w, kFc2b };

std::size_t block_size(const HeadConfig& c) {
  switch (c.head_kind) {
    case HeadKind::transformer: return kTransformerBlock;
    case HeadKind::mlp: return kMlpBlock;
    case HeadKind::linear: return 2;
  }
  return 0;
}

std::size_t layer_count(const HeadConfig& c) {
  return c.head_kind == HeadKind::linear ? 1 : c.num_layers;
}

std::size_t classifier_base(const HeadConfig& c) { return block_size(c) * layer_count(c); }

void add(std::vector<Tensor>& out, std::string name, std::size_t rows, std::size_t cols) {
  out.push_back({std::move(name), Matrix(rows, cols)});
}

bool is_norm_gain(const std::string& name) {
  return name.ends_with("norm1.weight") || name.ends_with("norm2.weight");
}
bool is_norm(const std::string& name) { return name.find(".norm") != std::string::npos; }

std::span<const double> vec(const Tensor& t) { return t.value.data; }
std::span<double> vec(Tensor& t) { return t.value.data; }

Matrix linear(const Matrix& x, const Tensor& w, const Tensor& b) {
  Matrix y(x.rows, w.value.rows);
  kernels::linear_forward(x, w.value, vec(b), y);
  return y;
}

Matrix input_grad(const Matrix& dy, const Tensor& w) {
  Matrix dx(dy.rows, w.value.cols);
  kernels::linear_input_grad(dy, w.value, dx);
  return dx;
}

void add_into(Matrix& acc, const Matrix& x) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += x.data[i];
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

void layer_norm(const Matrix& x, const Tensor& gain, const Tensor& offset, Matrix& hat,
                std::vector<double>& inv_std, Matrix& y) {
  const std::size_t n = x.rows, d = x.cols;
  hat.resize(n, d);
  y.resize(n, d);
  inv_std.assign(n, 0.0);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * d >= 32768)
  for (std::ptrdiff_t ri = 0; ri < rows; ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[r] = is;
    for (std::size_t k = 0; k < d; ++k) {
      const double h = (xr[k] - mean) * is;
      hat(r, k) = h;
      y(r, k) = gain.value.data[k] * h + offset.value.data[k];
    }
  }
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& hat, const std::vector<double>& inv_std,
                           const Tensor& gain, Tensor& dgain, Tensor& doffset) {
  const std::size_t n = dy.rows, d = dy.cols;
  for (std::size_t k = 0; k < d; ++k) {
    double g = 0.0, b = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      g += dy(r, k) * hat(r, k);
      b += dy(r, k);
    }
    dgain.value.data[k] += g;
    doffset.value.data[k] += b;
  }
  Matrix dx(n, d);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * d >= 32768)
  for (std::ptrdiff_t ri = 0; ri < rows; ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    double sum = 0.0, dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double dh = dy(r, k) * gain.value.data[k];
      sum += dh;
      dot += dh * hat(r, k);
    }
    const double scale = inv_std[r] / static_cast<double>(d);
    for (std::size_t k = 0; k < d; ++k) {
      const double dh = dy(r, k) * gain.value.data[k];
      dx(r, k) = scale * (static_cast<double>(d) * dh - sum - hat(r, k) * dot);
    }
  }
  return dx;
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
  probs.resize(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), probs.row(r).begin());
  }
}

void require_width(const Matrix& x, std::size_t width, const char* what) {
  if (x.cols != width) {
    throw DataError(std::string(what) + " width " + std::to_string(x.cols) +
                    " does not match model_dim " + std::to_string(width));
  }
}

void require_finite(const Matrix& m, const char* what) {
  for (double v : m.data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

}  // namespace

std::vector<Tensor> head_layout(const HeadConfig& c) {
  c.validate();
  const std::size_t d = c.model_dim, f = c.ffn_dim;
  std::vector<Tensor> out;
  switch (c.head_kind) {
    case HeadKind::transformer:
      for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        for (const char* m : {"q", "k", "v", "out"}) {
          add(out, p + "attn." + m + ".weight", d, d);
          add(out, p + "attn." + m + ".bias", d, 1);
        }
        add(out, p + "norm1.weight", d, 1);
        add(out, p + "norm1.bias", d, 1);
        add(out, p + "ffn1.weight", f, d);
        add(out, p + "ffn1.bias", f, 1);
        add(out, p + "ffn2.weight", d, f);
        add(out, p + "ffn2.bias", d, 1);
        add(out, p + "norm2.weight", d, 1);
        add(out, p + "norm2.bias", d, 1);
      }
      break;
    case HeadKind::mlp:
      for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        add(out, p + "fc1.weight", f, d);
        add(out, p + "fc1.bias", f, 1);
        add(out, p + "fc2.weight", d, f);
        add(out, p + "fc2.bias", d, 1);
      }
      break;
    case HeadKind::linear:
      add(out, "affine.weight", d, d);
      add(out, "affine.bias", d, 1);
      break;
  }
  add(out, "proj.weight", c.projection_dim, d);
  add(out, "proj.bias", c.projection_dim, 1);
  add(out, "cls.weight", c.num_classes, c.projection_dim);
  add(out, "cls.bias", c.num_classes, 1);
  return out;
}

HeadParameters init_head(const HeadConfig& config) {
  HeadParameters p;
  p.config = config;
  p.tensors = head_layout(config);
  Rng rng(config.init_seed);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    auto& t = p.tensors[i];
    if (is_norm(t.name)) {
      const double fill = is_norm_gain(t.name) ? 1.0 : 0.0;
      for (auto& v : t.value.data) v = fill;
      continue;
    }
    // A bias shares the fan-in of the weight declared just before it.
    const std::size_t fan_in = t.value.cols > 1 ? t.value.cols : p.tensors[i - 1].value.cols;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.value.data) v = rng.uniform(-bound, bound);
  }
  return p;
}

HeadParameters zeros_like(const HeadParameters& params) {
  HeadParameters z;
  z.config = params.config;
  z.tensors.reserve(params.tensors.size());
  for (const auto& t : params.tensors) z.tensors.push_back({t.name, Matrix(t.value.rows, t.value.cols)});
  return z;
}

HeadPass run_head(const HeadParameters& params, const Matrix& embeddings) {
  const HeadConfig& c = params.config;
  require_width(embeddings, c.model_dim, "embedding");
  const auto& T = params.tensors;
  HeadPass pass;
  pass.layers.resize(layer_count(c));
  Matrix cur = embeddings;
  for (std::size_t l = 0; l < pass.layers.size(); ++l) {
    auto& L = pass.layers[l];
    const std::size_t b = l * block_size(c);
    L.input = cur;
    switch (c.head_kind) {
      case HeadKind::transformer: {
        // Single token: the softmax over one key is identically 1, so each
        // head's output is its slice of V and Q/K do not enter the result.
        L.value = linear(cur, T[b + kVw], T[b + kVb]);
        Matrix r1 = linear(L.value, T[b + kOw], T[b + kOb]);
        add_into(r1, cur);
        layer_norm(r1, T[b + kN1g], T[b + kN1b], L.norm1_hat, L.norm1_inv_std, L.mid);
        L.hidden_pre = linear(L.mid, T[b + kF1w], T[b + kF1b]);
        L.hidden = relu(L.hidden_pre);
        Matrix r2 = linear(L.hidden, T[b + kF2w], T[b + kF2b]);
        add_into(r2, L.mid);
        layer_norm(r2, T[b + kN2g], T[b + kN2b], L.norm2_hat, L.norm2_inv_std, cur);
        break;
      }
      case HeadKind::mlp: {
        L.hidden_pre = linear(cur, T[b + kFc1w], T[b + kFc1b]);
        L.hidden = relu(L.hidden_pre);
        Matrix out = linear(L.hidden, T[b + kFc2w], T[b + kFc2b]);
        add_into(out, cur);
        cur = std::move(out);
        break;
      }
      case HeadKind::linear:
        cur = linear(cur, T[b], T[b + 1]);
        break;
    }
  }
  pass.latents = std::move(cur);
  const std::size_t g = classifier_base(c);
  pass.projected = linear(pass.latents, T[g], T[g + 1]);
  pass.logits = linear(pass.projected, T[g + 2], T[g + 3]);
  softmax_rows(pass.logits, pass.probs);
  require_finite(pass.latents, "latent representation");
  require_finite(pass.logits, "classifier logits");
  return pass;
}

void backward_head(const HeadParameters& params, const HeadPass& pass, const Matrix& d_latents,
                   const Matrix& d_probs, HeadParameters& grads) {
  const HeadConfig& c = params.config;
  const auto& T = params.tensors;
  auto& G = grads.tensors;
  const std::size_t n = pass.latents.rows;
  const std::size_t g = classifier_base(c);

  Matrix dz(n, c.model_dim);
  if (d_latents.rows != 0) dz = d_latents;

  if (d_probs.rows != 0) {
    Matrix dlogits(n, c.num_classes);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c.num_classes; ++k) dot += d_probs(r, k) * pass.probs(r, k);
      for (std::size_t k = 0; k < c.num_classes; ++k) {
        dlogits(r, k) = pass.probs(r, k) * (d_probs(r, k) - dot);
      }
    }
    kernels::linear_accumulate_grad(dlogits, pass.projected, G[g + 2].value, vec(G[g + 3]));
    const Matrix dproj = input_grad(dlogits, T[g + 2]);
    kernels::linear_accumulate_grad(dproj, pass.latents, G[g].value, vec(G[g + 1]));
    add_into(dz, input_grad(dproj, T[g]));
  }

  Matrix dcur = std::move(dz);
  for (std::size_t li = pass.layers.size(); li-- > 0;) {
    const auto& L = pass.layers[li];
    const std::size_t b = li * block_size(c);
    const bool need_input = li > 0;  // embeddings are frozen
    switch (c.head_kind) {
      case HeadKind::transformer: {
        Matrix dr2 = layer_norm_backward(dcur, L.norm2_hat, L.norm2_inv_std, T[b + kN2g],
                                         G[b + kN2g], G[b + kN2b]);
        kernels::linear_accumulate_grad(dr2, L.hidden, G[b + kF2w].value, vec(G[b + kF2b]));
        Matrix dh = input_grad(dr2, T[b + kF2w]);
        for (std::size_t i = 0; i < dh.data.size(); ++i) {
          if (!(L.hidden_pre.data[i] > 0.0)) dh.data[i] = 0.0;
        }
        kernels::linear_accumulate_grad(dh, L.mid, G[b + kF1w].value, vec(G[b + kF1b]));
        Matrix dmid = std::move(dr2);
        add_into(dmid, input_grad(dh, T[b + kF1w]));
        Matrix dr1 = layer_norm_backward(dmid, L.norm1_hat, L.norm1_inv_std, T[b + kN1g],
                                         G[b + kN1g], G[b + kN1b]);
        kernels::linear_accumulate_grad(dr1, L.value, G[b + kOw].value, vec(G[b + kOb]));
        const Matrix dv = input_grad(dr1, T[b + kOw]);
        kernels::linear_accumulate_grad(dv, L.input, G[b + kVw].value, vec(G[b + kVb]));
        if (need_input) add_into(dr1, input_grad(dv, T[b + kVw]));
        dcur = std::move(dr1);
        break;
      }
      case HeadKind::mlp: {
        kernels::linear_accumulate_grad(dcur, L.hidden, G[b + kFc2w].value, vec(G[b + kFc2b]));
        Matrix dh = input_grad(dcur, T[b + kFc2w]);
        for (std::size_t i = 0; i < dh.data.size(); ++i) {
          if (!(L.hidden_pre.data[i] > 0.0)) dh.data[i] = 0.0;
        }
        kernels::linear_accumulate_grad(dh, L.input, G[b + kFc1w].value, vec(G[b + kFc1b]));
        if (need_input) add_into(dcur, input_grad(dh, T[b + kFc1w]));
        break;
      }
      case HeadKind::linear:
        kernels::linear_accumulate_grad(dcur, L.input, G[b].value, vec(G[b + 1]));
        break;
    }
  }
}

Matrix forward_latents(const HeadParameters& params, const Matrix& embeddings) {
  return run_head(params, embeddings).latents;
}

Matrix classify_batch(const HeadParameters& params, const Matrix& latents) {
  const HeadConfig& c = params.config;
  require_width(latents, c.model_dim, "latent");
  const std::size_t g = classifier_base(c);
  const auto& T = params.tensors;
  const Matrix projected = linear(latents, T[g], T[g + 1]);
  const Matrix logits = linear(projected, T[g + 2], T[g + 3]);
  Matrix probs;
  softmax_rows(logits, probs);
  return probs;
}

std::vector<int> predict_batch(const HeadParameters& params, const Matrix& embeddings) {
  const HeadPass pass = run_head(params, embeddings);
  std::vector<int> out(embeddings.rows);
  for (std::size_t r = 0; r < embeddings.rows; ++r) out[r] = argmax(pass.probs.row(r));
  return out;
}

namespace {
Matrix as_row(std::span<const double> v) {
  Matrix m(1, v.size());
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}
}  // namespace

std::vector<double> forward_latent(const HeadParameters& params, std::span<const double> embedding) {
  return forward_latents(params, as_row(embedding)).data;
}

std::vector<double> classify(const HeadParameters& params, std::span<const double> latent) {
  return classify_batch(params, as_row(latent)).data;
}

int predict_class(const HeadParameters& params, std::span<const double> embedding) {
  return argmax(classify(params, forward_latent(params, embedding)));
}

std::vector<double> softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string format_head_config(const HeadConfig& c) {
  std::ostringstream os;
  os << "num_layers = " << c.num_layers << "\n"
     << "model_dim = " << c.model_dim << "\n"
     << "num_heads = " << c.num_heads << "\n"
     << "ffn_dim = " << c.ffn_dim << "\n"
     << "projection_dim = " << c.projection_dim << "\n"
     << "num_classes = " << c.num_classes << "\n"
     << "head_kind = " << head_kind_name(c.head_kind) << "\n"
     << "init_seed = " << c.init_seed << "\n";
  return os.str();
}

namespace {
std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size()) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
  return v;
}
}  // namespace

bool apply_head_setting(HeadConfig& c, const std::string& key, const std::string& value) {
  if (key == "num_layers") c.num_layers = parse_uint(key, value);
  else if (key == "model_dim") c.model_dim = parse_uint(key, value);
  else if (key == "num_heads") c.num_heads = parse_uint(key, value);
  else if (key == "ffn_dim") c.ffn_dim = parse_uint(key, value);
  else if (key == "projection_dim") c.projection_dim = parse_uint(key, value);
  else if (key == "num_classes") c.num_classes = parse_uint(key, value);
  else if (key == "head_kind") c.head_kind = parse_head_kind(value);
  else if (key == "init_seed") c.init_seed = parse_uint(key, value);
  else return false;
  return true;
}

namespace {
constexpr char kCheckpointMagic[] = "XDTM";
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::string text = format_head_config(ckpt.params.config);
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint metadata must be single-line key/value pairs");
    }
    text += k + " = " + v + "\n";
  }
  io::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.str(text);
  w.u32(static_cast<std::uint32_t>(ckpt.params.tensors.size()));
  for (const auto& t : ckpt.params.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rows));
    w.u32(static_cast<std::uint32_t>(t.value.cols));
    for (double v : t.value.data) w.f64(v);
  }
  io::seal_with_crc(w);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  {
    io::ByteReader peek(bytes);
    if (peek.raw(4) != kCheckpointMagic) throw FormatError("not a checkpoint (bad magic)");
    const auto version = peek.u16();
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint version " + std::to_string(version) + " unsupported");
    }
  }
  io::ByteReader r(io::verify_crc(bytes));
  r.raw(4);
  r.u16();
  Checkpoint ckpt;
  HeadConfig config;
  std::istringstream text(r.str());
  std::string line;
  while (std::getline(text, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("checkpoint: malformed config line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    if (!apply_head_setting(config, key, value)) ckpt.metadata[key] = value;
  }
  ckpt.params.config = config;
  ckpt.params.tensors = head_layout(config);
  const std::uint32_t count = r.u32();
  if (count != ckpt.params.tensors.size()) {
    throw FormatError("checkpoint: tensor count " + std::to_string(count) +
                      " does not match the head config");
  }
  for (auto& t : ckpt.params.tensors) {
    const std::string name = r.str();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (name != t.name || rows != t.value.rows || cols != t.value.cols) {
      throw FormatError("checkpoint: tensor '" + name + "' does not match layout entry '" + t.name + "'");
    }
    for (auto& v : t.value.data) v = r.f64();
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return decode_checkpoint(io::read_file(path));
}

}  // namespace xdt
