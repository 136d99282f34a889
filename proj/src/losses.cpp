#include "xdt/losses.hpp"

#include <cmath>

#include "xdt/error.hpp"

namespace xdt {

std::string_view loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::LC: return "lc";
    case LossKind::EC: return "ec";
    case LossKind::CE: return "ce";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "lc" || s == "LC") return LossKind::LC;
  if (s == "ec" || s == "EC") return LossKind::EC;
  if (s == "ce" || s == "CE") return LossKind::CE;
  throw ConfigError("unknown loss '" + std::string(s) + "' (expected lc|ec|ce)");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("loss: lambda must be >= 0");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("loss: epsilon must be > 0");
  if (!(latent_norm_cap >= 0.0)) throw ConfigError("loss: latent_norm_cap must be >= 0");
}

int pair_agreement(std::span<const double> yi, std::span<const double> yj) {
  double dot = 0.0;
  for (std::size_t k = 0; k < yi.size(); ++k) dot += yi[k] * yj[k];
  return static_cast<int>(std::lround(2.0 * dot - 1.0));
}

std::vector<double> one_hot(Label label, std::size_t num_classes) {
  std::vector<double> y(num_classes, 0.0);
  y[static_cast<std::size_t>(class_index(label))] = 1.0;
  return y;
}

double cross_entropy(std::span<const double> probs, std::span<const double> target, double eps) {
  double h = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (target[k] != 0.0) h -= target[k] * std::log(probs[k] + eps);
  }
  return h;
}

namespace {

void check_batch(std::size_t n, std::size_t labels, std::size_t min_n, const char* what) {
  if (n != labels) throw DataError(std::string(what) + ": batch and label counts differ");
  if (n < min_n) {
    throw DataError(std::string(what) + ": needs at least " + std::to_string(min_n) + " samples");
  }
}

void check_probs(const Matrix& probs) {
  for (std::size_t r = 0; r < probs.rows; ++r) {
    double sum = 0.0;
    for (double p : probs.row(r)) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw DataError("invalid probability vector");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw DataError("probability vector does not sum to 1");
  }
}

std::vector<int> classes_of(std::span<const Label> labels) {
  std::vector<int> c(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) c[i] = class_index(labels[i]);
  return c;
}

// Rescales rows onto the cap ball; returns the scale applied to each row.
Matrix cap_latents(const Matrix& z, double cap, std::vector<double>& norms) {
  Matrix out = z;
  norms.assign(z.rows, 0.0);
  for (std::size_t r = 0; r < z.rows; ++r) {
    double sq = 0.0;
    for (double v : z.row(r)) sq += v * v;
    norms[r] = std::sqrt(sq);
    if (norms[r] > cap) {
      for (auto& v : out.row(r)) v *= cap / norms[r];
    }
  }
  return out;
}

// Pulls a gradient w.r.t. capped latents back to the raw latents.
void uncap_gradient(const Matrix& z, double cap, const std::vector<double>& norms, Matrix& dz) {
  for (std::size_t r = 0; r < z.rows; ++r) {
    if (!(norms[r] > cap)) continue;
    const auto zr = z.row(r);
    auto g = dz.row(r);
    double dot = 0.0;
    for (std::size_t k = 0; k < zr.size(); ++k) dot += zr[k] * g[k];
    const double s = cap / norms[r];
    const double inv_sq = 1.0 / (norms[r] * norms[r]);
    for (std::size_t k = 0; k < zr.size(); ++k) g[k] = s * (g[k] - zr[k] * dot * inv_sq);
  }
}

double pair_term(const LossConfig& config, PairPotential kind, const Matrix& latents,
                 std::span<const Label> labels, double scale, Matrix* dz) {
  const auto classes = classes_of(labels);
  std::vector<double> rows(latents.rows, 0.0);
  if (config.latent_norm_cap > 0.0) {
    std::vector<double> norms;
    const Matrix capped = cap_latents(latents, config.latent_norm_cap, norms);
    kernels::pair_potential(capped, classes, kind, config.epsilon, scale, rows, dz);
    if (dz) uncap_gradient(latents, config.latent_norm_cap, norms, *dz);
  } else {
    kernels::pair_potential(latents, classes, kind, config.epsilon, scale, rows, dz);
  }
  double total = 0.0;
  for (double r : rows) total += r;
  return total * scale;
}

// Sum over samples of H, and optionally coeff * dH/dp into d_probs.
double entropy_sum(const Matrix& probs, std::span<const Label> labels, double eps, double coeff,
                   Matrix* d_probs) {
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows; ++r) {
    const auto y = one_hot(labels[r], probs.cols);
    total += cross_entropy(probs.row(r), y, eps);
    if (d_probs) {
      for (std::size_t k = 0; k < probs.cols; ++k) {
        (*d_probs)(r, k) = y[k] != 0.0 ? -coeff * y[k] / (probs(r, k) + eps) : 0.0;
      }
    }
  }
  return total;
}

}  // namespace

LossEvaluation evaluate_loss(const LossConfig& config, const Matrix& latents, const Matrix& probs,
                             std::span<const Label> labels, bool with_gradient) {
  config.validate();
  LossEvaluation out;
  switch (config.kind) {
    case LossKind::LC: {
      const std::size_t n = latents.rows;
      check_batch(n, labels.size(), 2, "lc_loss");
      if (probs.rows != n) throw DataError("lc_loss: latents and probabilities differ in length");
      check_probs(probs);
      const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
      if (with_gradient) {
        out.d_latents.resize(n, latents.cols);
        out.d_probs.resize(n, probs.cols);
      }
      out.value.clustering_term = pair_term(config, PairPotential::log_distance, latents, labels,
                                            1.0 / pairs, with_gradient ? &out.d_latents : nullptr);
      // Each sample's entropy appears in the n-1 pairs that contain it.
      const double per_sample = static_cast<double>(n - 1) / pairs;
      const double h = entropy_sum(probs, labels, config.epsilon, config.lambda * per_sample,
                                   with_gradient ? &out.d_probs : nullptr);
      out.value.cross_entropy_term = per_sample * h;
      out.value.value = out.value.clustering_term + config.lambda * out.value.cross_entropy_term;
      break;
    }
    case LossKind::EC: {
      const std::size_t n = latents.rows;
      check_batch(n, labels.size(), 2, "ec_loss");
      const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
      if (with_gradient) out.d_latents.resize(n, latents.cols);
      out.value.clustering_term = pair_term(config, PairPotential::distance, latents, labels,
                                            1.0 / pairs, with_gradient ? &out.d_latents : nullptr);
      out.value.value = out.value.clustering_term;
      break;
    }
    case LossKind::CE: {
      const std::size_t n = probs.rows;
      check_batch(n, labels.size(), 1, "ce_loss");
      check_probs(probs);
      if (with_gradient) out.d_probs.resize(n, probs.cols);
      const double inv_n = 1.0 / static_cast<double>(n);
      const double h = entropy_sum(probs, labels, config.epsilon, inv_n,
                                   with_gradient ? &out.d_probs : nullptr);
      out.value.cross_entropy_term = h * inv_n;
      out.value.value = out.value.cross_entropy_term;
      break;
    }
  }
  if (!std::isfinite(out.value.value)) throw NumericError("loss value is not finite");
  return out;
}

LossValue lc_loss(const Matrix& latents, const Matrix& probs, std::span<const Label> labels,
                  const LossConfig& config) {
  if (config.kind != LossKind::LC) throw ConfigError("lc_loss called with a non-LC config");
  return evaluate_loss(config, latents, probs, labels, false).value;
}

LossValue ec_loss(const Matrix& latents, std::span<const Label> labels) {
  LossConfig c;
  c.kind = LossKind::EC;
  return evaluate_loss(c, latents, Matrix{}, labels, false).value;
}

LossValue ce_loss(const Matrix& probs, std::span<const Label> labels, double epsilon) {
  LossConfig c;
  c.kind = LossKind::CE;
  c.epsilon = epsilon;
  return evaluate_loss(c, Matrix{}, probs, labels, false).value;
}

LossGradient loss_gradient(const LossConfig& config, const HeadParameters& params,
                           const Matrix& embeddings, std::span<const Label> labels) {
  const HeadPass pass = run_head(params, embeddings);
  const LossEvaluation eval = evaluate_loss(config, pass.latents, pass.probs, labels, true);
  LossGradient out{eval.value, zeros_like(params)};
  backward_head(params, pass, eval.d_latents, eval.d_probs, out.grads);
  for (const auto& t : out.grads.tensors) {
    for (double v : t.value.data) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient in parameter '" + t.name + "'");
    }
  }
  return out;
}

}  // namespace xdt
