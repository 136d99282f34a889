#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "xdt/encoder.hpp"
#include "xdt/error.hpp"
#include "xdt/io.hpp"

namespace xdt {
namespace {

using testing::scratch_dir;
using testing::write_text;

double dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

SyntheticSpec pm_spec(std::size_t dim, double spread, std::size_t n, std::uint64_t seed) {
  SyntheticSpec s;
  s.dim = dim;
  s.healthy_center.assign(dim, 0.0);
  s.disease_center.assign(dim, 0.0);
  s.healthy_center[0] = -1.0;
  s.disease_center[0] = 1.0;
  s.spread = spread;
  s.n_per_class = n;
  s.seed = seed;
  return s;
}

TEST(Synthetic, DegenerateSpreadSitsOnCenters) {
  const auto spec = pm_spec(8, 1e-9, 20, 4);
  const auto set = synth_embeddings(spec);
  ASSERT_EQ(set.size(), 40u);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& c = set.labels[i] == Label::positive ? spec.disease_center : spec.healthy_center;
    EXPECT_LT(dist(set.vectors.row(i), c), 1e-6);
  }
}

TEST(Synthetic, NearestCenterRecoversEveryLabel) {
  const auto spec = pm_spec(16, 0.1, 100, 9);
  const auto set = synth_embeddings(spec);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const bool nearer_disease = dist(set.vectors.row(i), spec.disease_center) <
                                dist(set.vectors.row(i), spec.healthy_center);
    agree += nearer_disease == (set.labels[i] == Label::positive);
  }
  EXPECT_EQ(agree, set.size());
}

TEST(Synthetic, BisectorSeparatesAtTenSpreads) {
  // Centers 1.0 apart, spread 0.1; classify by the sign of (x - m) . (d - h).
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto spec = pm_spec(12, 0.1, 200, seed);
    spec.healthy_center[0] = 0.0;
    spec.disease_center[0] = 1.0;
    const auto set = synth_embeddings(spec);
    for (std::size_t i = 0; i < set.size(); ++i) {
      double side = 0.0;
      for (std::size_t k = 0; k < spec.dim; ++k) {
        const double mid = 0.5 * (spec.healthy_center[k] + spec.disease_center[k]);
        side += (set.vectors(i, k) - mid) * (spec.disease_center[k] - spec.healthy_center[k]);
      }
      EXPECT_EQ(side > 0.0, set.labels[i] == Label::positive);
    }
  }
}

TEST(Synthetic, Deterministic) {
  const auto spec = pm_spec(6, 0.3, 10, 2);
  EXPECT_EQ(synth_embeddings(spec), synth_embeddings(spec));
}

TEST(Synthetic, ParsesSpecText) {
  const auto s = parse_synthetic_spec("dim=16,sep=2.0,n=200,seed=1");
  EXPECT_EQ(s.dim, 16u);
  EXPECT_EQ(s.n_per_class, 200u);
  EXPECT_EQ(s.seed, 1u);
  EXPECT_DOUBLE_EQ(s.spread, 0.1);
  EXPECT_DOUBLE_EQ(dist(s.healthy_center, s.disease_center), 2.0);
  EXPECT_DOUBLE_EQ(s.disease_center[0], 2.0);

  const auto b = parse_synthetic_spec("dim=4,sep=2,axis=1,shift=3");
  EXPECT_EQ(b.healthy_center, (std::vector<double>{0, 0, 0, 3}));
  EXPECT_EQ(b.disease_center, (std::vector<double>{0, 2, 0, 3}));

  const auto t = parse_synthetic_spec("dim=4,sep=2,tilt=90");
  EXPECT_NEAR(t.disease_center[0], 0.0, 1e-15);
  EXPECT_NEAR(t.disease_center[1], 2.0, 1e-15);
}

TEST(Synthetic, SpecErrors) {
  EXPECT_THROW(parse_synthetic_spec("dim=4,bogus=1"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("dim=4,sep"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("dim=4,axis=4"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("dim=4,sep=0"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("dim=4,n=0"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("dim=x"), ConfigError);
}

// ---------------------------------------------------------------------------

void write_pgm(const std::filesystem::path& p, int w, int h, int shade) {
  std::string text = "P2\n# test image\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) text += std::to_string((shade + 13 * x + 7 * y) % 256) + " ";
    text += "\n";
  }
  write_text(p, text);
}

DatasetManifest image_manifest(const std::filesystem::path& dir, std::size_t n) {
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    const auto name = "img" + std::to_string(i) + ".pgm";
    write_pgm(dir / name, 12 + static_cast<int>(i), 10, static_cast<int>(40 * i));
    records.push_back({"r" + std::to_string(i), name, i % 2 ? Label::negative : Label::positive});
  }
  return make_manifest("imgs", records);
}

TEST(Extract, BatchingDoesNotChangeVectors) {
  const auto dir = scratch_dir();
  const auto m = image_manifest(dir, 5);
  PgmProjectionAdapter adapter(dir, 64, 8, 3);
  const auto a = extract_embeddings(m, adapter, 2);
  const auto b = extract_embeddings(m, adapter, 5);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.ids, (std::vector<std::string>{"r0", "r1", "r2", "r3", "r4"}));
  EXPECT_EQ(a.encoder_id, adapter.encoder_id());
  EXPECT_EQ(extract_embeddings(m, adapter, 3), a);
}

TEST(Extract, DefaultAdapterIs512Wide) {
  const auto dir = scratch_dir();
  const auto m = image_manifest(dir, 2);
  const auto adapter = make_adapter("pgm-randproj", dir);
  EXPECT_EQ(adapter->encoder_dim(), 512u);
  EXPECT_EQ(extract_embeddings(m, *adapter, 4).dim(), 512u);
}

TEST(Extract, MissingImageNamesRecord) {
  const auto dir = scratch_dir();
  auto records = image_manifest(dir, 3).records;
  records[1].source = "missing.pgm";
  PgmProjectionAdapter adapter(dir, 16, 4, 0);
  try {
    extract_embeddings(make_manifest("m", records), adapter, 8);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("r1"), std::string::npos);
  }
}

class FaultyAdapter final : public EncoderAdapter {
 public:
  explicit FaultyAdapter(std::string bad, bool wrong_width = false)
      : bad_(std::move(bad)), wrong_width_(wrong_width) {}
  std::string encoder_id() const override { return "faulty"; }
  std::size_t encoder_dim() const override { return 3; }
  Matrix embed(std::span<const SampleRecord> batch) const override {
    Matrix out(batch.size(), wrong_width_ ? 2 : 3, 1.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i].id == bad_) out(i, 1) = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
  }

 private:
  std::string bad_;
  bool wrong_width_;
};

TEST(Extract, NanFromAdapterNamesRecord) {
  const auto m = testing::counted_manifest("n", 3, 3);
  try {
    extract_embeddings(m, FaultyAdapter("n-n1"), 4);
    FAIL() << "expected AdapterError";
  } catch (const AdapterError& e) {
    EXPECT_NE(std::string(e.what()).find("n-n1"), std::string::npos);
  }
}

TEST(Extract, WidthMismatchIsAdapterError) {
  const auto m = testing::counted_manifest("w", 2, 2);
  EXPECT_THROW(extract_embeddings(m, FaultyAdapter("", true), 2), AdapterError);
}

TEST(Extract, PrecomputedVectors) {
  const auto dir = scratch_dir();
  write_text(dir / "a.txt", "1 2 3\n");
  write_text(dir / "b.txt", "4.5\n-1e-3\n0\n");
  write_text(dir / "c.txt", "1 2\n");
  const auto m = make_manifest("pre", {{"a", "a.txt", Label::positive}, {"b", "b.txt", Label::negative}});
  const auto adapter = make_adapter("precomputed:3:some-encoder", dir);
  const auto set = extract_embeddings(m, *adapter, 1);
  EXPECT_EQ(set.vectors.data, (std::vector<double>{1, 2, 3, 4.5, -1e-3, 0}));
  EXPECT_NE(set.encoder_id.find("some-encoder"), std::string::npos);
  const auto short_m = make_manifest("pre", {{"c", "c.txt", Label::positive}});
  EXPECT_THROW(extract_embeddings(short_m, *adapter, 1), AdapterError);
}

TEST(Extract, UnknownEncoderId) {
  EXPECT_THROW(make_adapter("resnet-magic", {}), ConfigError);
}

// ---------------------------------------------------------------------------

EmbeddingSet random_set(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingSet s;
  s.dataset_name = "rand";
  s.encoder_id = "test-encoder";
  s.vectors = testing::random_matrix(n, dim, rng, -1e3, 1e3);
  for (std::size_t i = 0; i < n; ++i) {
    s.ids.push_back("id" + std::to_string(i));
    s.labels.push_back(i % 3 ? Label::negative : Label::positive);
  }
  return s;
}

TEST(Cache, RoundTripIsExact) {
  const auto dir = scratch_dir();
  auto set = random_set(37, 9, 1);
  set.vectors(3, 2) = std::nextafter(1.0, 2.0);
  set.vectors(4, 4) = -0.0;
  save_cache(set, dir / "c.xdte");
  const auto back = load_cache(dir / "c.xdte");
  EXPECT_EQ(back, set);
  EXPECT_TRUE(std::signbit(back.vectors(4, 4)));
}

TEST(Cache, HeaderReportsShape) {
  const auto dir = scratch_dir();
  save_cache(random_set(100, 512, 2), dir / "h.xdte");
  const auto h = read_cache_header(dir / "h.xdte");
  EXPECT_EQ(h.count, 100u);
  EXPECT_EQ(h.dim, 512u);
  EXPECT_EQ(h.version, kCacheVersion);
  EXPECT_EQ(h.dataset_name, "rand");
  EXPECT_EQ(h.encoder_id, "test-encoder");
}

TEST(Cache, FlippedChecksumByteDetected) {
  auto bytes = encode_cache(random_set(5, 3, 3));
  bytes.back() ^= 0x01;
  EXPECT_THROW(decode_cache(bytes), ChecksumError);
}

TEST(Cache, FlippedPayloadByteDetected) {
  auto bytes = encode_cache(random_set(5, 3, 3));
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_cache(bytes), ChecksumError);
}

TEST(Cache, TruncatedAndForeignFilesRejected) {
  const auto bytes = encode_cache(random_set(5, 3, 3));
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 20);
  EXPECT_THROW(decode_cache(cut), FormatError);
  auto foreign = bytes;
  foreign[0] = 'Z';
  EXPECT_THROW(decode_cache(foreign), FormatError);
  EXPECT_THROW(load_cache("/nonexistent/cache.xdte"), DataError);
}

TEST(Cache, VersionMismatchRejected) {
  auto bytes = encode_cache(random_set(2, 2, 4));
  bytes[4] = static_cast<std::uint8_t>(kCacheVersion + 1);
  try {
    decode_cache(bytes);
    FAIL() << "expected FormatError";
  } catch (const ChecksumError&) {
    FAIL() << "version must be checked before the checksum";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Cache, SaveReturnsTrailingCrc) {
  const auto dir = scratch_dir();
  const auto set = random_set(4, 4, 5);
  const auto crc = save_cache(set, dir / "x.xdte");
  const auto bytes = io::read_file(dir / "x.xdte");
  EXPECT_EQ(crc, io::crc32(std::span(bytes).first(bytes.size() - 4)));
}

TEST(EmbeddingSetOps, SelectIdsKeepsRequestedOrder) {
  const auto set = random_set(6, 2, 6);
  const std::vector<std::string> ids{"id4", "id0"};
  const auto sub = select_ids(set, ids);
  EXPECT_EQ(sub.ids, ids);
  EXPECT_EQ(sub.vectors.row(0)[1], set.vectors.row(4)[1]);
  EXPECT_EQ(sub.labels[1], set.labels[0]);
  const std::vector<std::string> ghost{"nope"};
  EXPECT_THROW(select_ids(set, ghost), DataError);
}

}  // namespace
}  // namespace xdt
