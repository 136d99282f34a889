#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace xdt {

/// Binary class tag. Positive is the disease-bearing class and maps to
/// class index 0 everywhere a one-hot vector or argmax is involved.
enum class Label : std::uint8_t { positive = 0, negative = 1 };

inline constexpr int class_index(Label l) { return static_cast<int>(l); }
inline constexpr Label label_from_index(int k) {
  return k == 0 ? Label::positive : Label::negative;
}

std::string_view label_token(Label l);
Label parse_label_token(std::string_view token);

struct SampleRecord {
  std::string id;
  std::string source;
  Label label = Label::positive;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// A named binary-labeled collection. Construct through make_manifest or
/// load_manifest so the counts always agree with the records.
struct DatasetManifest {
  std::string name;
  std::vector<SampleRecord> records;
  std::size_t positive_count = 0;
  std::size_t negative_count = 0;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Validates ids and labels and tallies the class counts.
DatasetManifest make_manifest(std::string name, std::vector<SampleRecord> records);

/// Reads `id<TAB>source<TAB>label` lines; `#` lines and blank lines are skipped.
/// The manifest name defaults to the file stem.
DatasetManifest load_manifest(const std::filesystem::path& path, std::string name = {});
std::string format_manifest(const DatasetManifest& manifest);

struct SplitSpec {
  std::array<double, 3> fractions{0.6, 0.2, 0.2};  // train, val, test
  std::uint64_t seed = 0;
  bool stratified = true;

  void validate() const;
};

struct SplitAssignment {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

/// Per class (or over the whole manifest when not stratified), the val and test
/// sizes are floor(fraction * n), raised to 1 for a non-zero fraction; the rest
/// goes to train. Membership and order come from a seeded shuffle.
SplitAssignment make_splits(const DatasetManifest& manifest, const SplitSpec& spec);

/// Split file: ids one per line under `[train]`, `[val]`, `[test]` headers.
SplitAssignment load_split_file(const std::filesystem::path& path);
SplitAssignment parse_split_text(std::string_view text);
std::string format_split(const SplitAssignment& split);

/// Checks that the assignment partitions the manifest ids.
void check_split_covers(const DatasetManifest& manifest, const SplitAssignment& split);

/// Down-samples the majority class to the minority size. Retained records keep
/// their manifest order; the minority class is untouched.
DatasetManifest balance_classes(const DatasetManifest& manifest, std::uint64_t seed);

}  // namespace xdt
