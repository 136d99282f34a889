#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xdt/data.hpp"
#include "xdt/kernels.hpp"

namespace xdt {

inline constexpr std::size_t kDefaultEncoderDim = 512;

/// Frozen-encoder outputs for one dataset: aligned ids, labels and one row of
/// `vectors` per sample.
struct EmbeddingSet {
  std::string dataset_name;
  std::string encoder_id;
  std::vector<std::string> ids;
  std::vector<Label> labels;
  Matrix vectors;

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return vectors.cols; }
  std::size_t count(Label l) const;

  /// Throws DataError unless lengths agree, ids are unique and entries finite.
  void validate() const;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

/// Rows of `set` whose ids are listed, in the listed order.
EmbeddingSet select_ids(const EmbeddingSet& set, std::span<const std::string> ids);

/// Contract for a frozen vision encoder. Implementations must be deterministic
/// and hold no state that changes between calls; `embed` may be invoked
/// concurrently from several threads.
class EncoderAdapter {
 public:
  virtual ~EncoderAdapter() = default;

  /// Identifies the encoder and its preprocessing, recorded for provenance.
  virtual std::string encoder_id() const = 0;
  virtual std::size_t encoder_dim() const = 0;
  /// One row per record, in order.
  virtual Matrix embed(std::span<const SampleRecord> batch) const = 0;
};

/// Reads binary (P5) or ASCII (P2) PGM images, resamples them bilinearly to
/// side x side, standardizes intensities and applies a fixed seeded Gaussian
/// projection. A stand-in for a pretrained encoder that needs no model runtime.
class PgmProjectionAdapter final : public EncoderAdapter {
 public:
  explicit PgmProjectionAdapter(std::filesystem::path base_dir = {},
                                std::size_t dim = kDefaultEncoderDim, std::size_t side = 32,
                                std::uint64_t seed = 0);

  std::string encoder_id() const override;
  std::size_t encoder_dim() const override { return dim_; }
  Matrix embed(std::span<const SampleRecord> batch) const override;

 private:
  std::filesystem::path base_dir_;
  std::size_t dim_;
  std::size_t side_;
  std::uint64_t seed_;
  Matrix projection_;  // dim x side*side
};

/// Sources name text files holding `dim` whitespace-separated reals, e.g.
/// embeddings exported from an external encoder.
class PrecomputedAdapter final : public EncoderAdapter {
 public:
  PrecomputedAdapter(std::filesystem::path base_dir, std::size_t dim,
                     std::string upstream_id = "external");

  std::string encoder_id() const override;
  std::size_t encoder_dim() const override { return dim_; }
  Matrix embed(std::span<const SampleRecord> batch) const override;

 private:
  std::filesystem::path base_dir_;
  std::size_t dim_;
  std::string upstream_id_;
};

/// Builds an adapter from an id: `pgm-randproj[:dim[:side[:seed]]]` or
/// `precomputed:<dim>[:<upstream-name>]`. Relative sources resolve against
/// base_dir.
std::unique_ptr<EncoderAdapter> make_adapter(const std::string& spec,
                                             const std::filesystem::path& base_dir);

/// Runs every record through the adapter in batches. Output rows follow the
/// manifest order and do not depend on batch_size.
EmbeddingSet extract_embeddings(const DatasetManifest& manifest, const EncoderAdapter& adapter,
                                std::size_t batch_size);

struct SyntheticSpec {
  std::string name = "synthetic";
  std::size_t dim = 16;
  std::vector<double> healthy_center;
  std::vector<double> disease_center;
  double spread = 0.1;
  std::size_t n_per_class = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Parses `key=value` pairs separated by commas. Keys: name, dim, sep, n, seed,
/// spread (default sep/20), axis (disease offset axis, default 0), shift
/// (healthy center offset along the last axis, default 0), tilt (degrees,
/// default 0). The healthy center is shift*e_last; the disease center adds
/// sep*(cos(tilt) e_axis + sin(tilt) e_{axis+1}).
SyntheticSpec parse_synthetic_spec(const std::string& text);

/// Generator parameters with a checksum of the centers; the encoder id of
/// synthetic sets.
std::string synthetic_encoder_id(const SyntheticSpec& spec);

/// Isotropic Gaussian clusters: n_per_class positives around disease_center,
/// then n_per_class negatives around healthy_center.
EmbeddingSet synth_embeddings(const SyntheticSpec& spec);

struct CacheHeader {
  std::uint16_t version = 0;
  std::string dataset_name;
  std::string encoder_id;
  std::uint64_t count = 0;
  std::uint32_t dim = 0;
};

inline constexpr std::uint16_t kCacheVersion = 1;

std::vector<std::uint8_t> encode_cache(const EmbeddingSet& set);
EmbeddingSet decode_cache(std::span<const std::uint8_t> bytes);

/// Writes atomically; returns the CRC32 stored in the file.
std::uint32_t save_cache(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_cache(const std::filesystem::path& path);
CacheHeader read_cache_header(const std::filesystem::path& path);

}  // namespace xdt
