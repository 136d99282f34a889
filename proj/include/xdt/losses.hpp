#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xdt/data.hpp"
#include "xdt/kernels.hpp"
#include "xdt/model.hpp"

namespace xdt {

enum class LossKind { LC, EC, CE };

std::string_view loss_kind_name(LossKind k);  // "lc", "ec", "ce"
LossKind parse_loss_kind(std::string_view s);

struct LossConfig {
  LossKind kind = LossKind::LC;
  double lambda = 0.001;
  double epsilon = 1e-8;
  /// When positive, latents longer than this are rescaled onto the ball of
  /// this radius before the pairwise term. Zero disables the cap.
  double latent_norm_cap = 0.0;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  double clustering_term = 0.0;
  double cross_entropy_term = 0.0;
};

/// s_ij = 2 y_i^T y_j - 1 for one-hot vectors.
int pair_agreement(std::span<const double> yi, std::span<const double> yj);
std::vector<double> one_hot(Label label, std::size_t num_classes);

/// -sum_k y_k log(p_k + eps)
double cross_entropy(std::span<const double> probs, std::span<const double> target, double eps);

/// Mean over the C(n,2) unordered pairs of
///   s_ij log(||z_i - z_j|| + eps) + lambda (H(p_i, y_i) + H(p_j, y_j)).
/// clustering_term and cross_entropy_term hold the two pair means, so that
/// value = clustering_term + lambda * cross_entropy_term.
LossValue lc_loss(const Matrix& latents, const Matrix& probs, std::span<const Label> labels,
                  const LossConfig& config);

/// Mean over pairs of s_ij ||z_i - z_j||.
LossValue ec_loss(const Matrix& latents, std::span<const Label> labels);

/// Mean over samples of H(p_i, y_i).
LossValue ce_loss(const Matrix& probs, std::span<const Label> labels, double epsilon = 1e-8);

/// Loss value plus its gradients w.r.t. the latents and probabilities.
struct LossEvaluation {
  LossValue value;
  Matrix d_latents;  // empty when the loss does not depend on latents
  Matrix d_probs;    // empty when the loss does not depend on probabilities
};

LossEvaluation evaluate_loss(const LossConfig& config, const Matrix& latents, const Matrix& probs,
                             std::span<const Label> labels, bool with_gradient);

struct LossGradient {
  LossValue value;
  HeadParameters grads;
};

/// Gradient of the scalar loss of one batch w.r.t. every head parameter.
/// Coincident same-class latents contribute a zero distance gradient.
LossGradient loss_gradient(const LossConfig& config, const HeadParameters& params,
                           const Matrix& embeddings, std::span<const Label> labels);

}  // namespace xdt
