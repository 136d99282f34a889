#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xdt/kernels.hpp"

namespace xdt {

enum class HeadKind { transformer, mlp, linear };

std::string_view head_kind_name(HeadKind k);
HeadKind parse_head_kind(std::string_view s);

struct HeadConfig {
  std::size_t num_layers = 4;
  std::size_t model_dim = 512;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t projection_dim = 16;
  std::size_t num_classes = 2;
  HeadKind head_kind = HeadKind::transformer;
  std::uint64_t init_seed = 0;

  void validate() const;
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct Tensor {
  std::string name;
  Matrix value;  // biases and norm parameters are stored as n x 1

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Trainable weights of the head h and classifier g, in declaration order:
/// per layer the head-kind block, then proj.{weight,bias}, cls.{weight,bias}.
///
/// transformer layer: attn.{q,k,v,out}.{weight,bias}, norm1.{weight,bias},
///   ffn1.{weight,bias}, ffn2.{weight,bias}, norm2.{weight,bias}
/// mlp layer: fc1.{weight,bias}, fc2.{weight,bias} (residual block)
/// linear: a single affine.{weight,bias} regardless of num_layers
struct HeadParameters {
  HeadConfig config;
  std::vector<Tensor> tensors;

  std::size_t parameter_count() const;
  const Tensor* find(std::string_view name) const;
  Tensor* find(std::string_view name);

  friend bool operator==(const HeadParameters&, const HeadParameters&) = default;
};

/// Names and shapes for a config, in declaration order.
std::vector<Tensor> head_layout(const HeadConfig& config);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases; norm
/// gains 1 and offsets 0. Deterministic in config.init_seed.
HeadParameters init_head(const HeadConfig& config);

/// Same shapes, all zeros. Used for gradients.
HeadParameters zeros_like(const HeadParameters& params);

inline constexpr double kLayerNormEps = 1e-5;

/// Intermediates of one batched pass through the head, kept for backprop.
struct HeadPass {
  struct Layer {
    Matrix input;
    Matrix value;       // transformer: V projection; mlp: unused
    Matrix norm1_hat;   // normalized pre-activation of norm1
    std::vector<double> norm1_inv_std;
    Matrix mid;         // transformer: norm1 output; mlp: hidden pre-activation
    Matrix hidden_pre;  // transformer: ffn1 output before ReLU
    Matrix hidden;      // after ReLU
    Matrix norm2_hat;
    std::vector<double> norm2_inv_std;
  };
  std::vector<Layer> layers;
  Matrix latents;    // z, n x model_dim
  Matrix projected;  // n x projection_dim
  Matrix logits;     // n x num_classes
  Matrix probs;      // row-wise exponential normalization of logits
};

/// Runs h then g over a batch (one embedding per row).
HeadPass run_head(const HeadParameters& params, const Matrix& embeddings);

/// Back-propagates loss gradients w.r.t. latents and probabilities into
/// `grads` (accumulating). Either gradient may be empty (rows == 0).
void backward_head(const HeadParameters& params, const HeadPass& pass, const Matrix& d_latents,
                   const Matrix& d_probs, HeadParameters& grads);

Matrix forward_latents(const HeadParameters& params, const Matrix& embeddings);
Matrix classify_batch(const HeadParameters& params, const Matrix& latents);
std::vector<int> predict_batch(const HeadParameters& params, const Matrix& embeddings);

/// z = h(e) for a single embedding, treated as a length-1 token sequence.
std::vector<double> forward_latent(const HeadParameters& params, std::span<const double> embedding);
/// Normalized class prediction vector g(z).
std::vector<double> classify(const HeadParameters& params, std::span<const double> latent);
/// argmax of classify(forward_latent(e)); ties go to the lower index.
int predict_class(const HeadParameters& params, std::span<const double> embedding);

std::vector<double> softmax(std::span<const double> logits);
int argmax(std::span<const double> values);

/// Checkpoint: magic `XDTM`, u16 version, key/value text block (head config
/// plus metadata), tensor count, then per tensor name, u32 rows, u32 cols and
/// little-endian doubles, then a CRC32 of everything before it.
struct Checkpoint {
  HeadParameters params;
  std::map<std::string, std::string> metadata;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string format_head_config(const HeadConfig& config);
/// Applies one `key = value` head setting; returns false for unknown keys.
bool apply_head_setting(HeadConfig& config, const std::string& key, const std::string& value);

}  // namespace xdt
