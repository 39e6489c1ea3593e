#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace shield {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Five-point layout in pixel coordinates: left eye, right eye, nose, left and right
/// mouth corners.
struct Landmarks {
  std::array<Point, 5> points{};

  /// The fixed layout used for images without their own landmarks.
  static Landmarks canonical(int64_t image_size);
};

/// A set of equally sized images with identity labels and landmarks.
struct FaceSet {
  torch::Tensor images;  // Mx3xSxS in [-1, 1]
  std::vector<int> identities;
  std::vector<Landmarks> landmarks;
  std::vector<std::string> names;

  int64_t size() const { return static_cast<int64_t>(identities.size()); }
  int64_t image_size() const { return images.size(2); }
  /// Distinct identity labels in first-seen order.
  std::vector<int> distinct_identities() const;
  FaceSet subset(const std::vector<int64_t>& rows) const;
};

/// Procedural face-like portraits. Each identity has fixed geometry, colours and
/// skin texture; each variant jitters position, lighting and mouth opening.
class ToyFaceGenerator {
 public:
  explicit ToyFaceGenerator(int64_t image_size);

  struct Rendered {
    torch::Tensor image;  // 3xSxS
    Landmarks landmarks;
  };

  Rendered render(int identity, int variant) const;

  /// Renders variants [first_variant, first_variant + count) of every listed identity.
  FaceSet make_set(const std::vector<int>& identities, int first_variant, int count) const;

  /// Writes PNGs as <root>/id_XXXX/vYYY.png for ingestion tests and demos.
  void write_directory(const std::filesystem::path& root, int identities, int variants) const;

  int64_t image_size() const { return size_; }

 private:
  int64_t size_;
};

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::filesystem::path path;
  std::string identity;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> of(Split split) const;
  std::vector<std::string> identities(Split split) const;
  void save_csv(const std::filesystem::path& path) const;
  static DatasetManifest load_csv(const std::filesystem::path& path);
};

/// Identity-disjoint 72/14/14 split: identities are ordered by SHA-256 of
/// "<seed>:<identity>" and the first 72% go to train, the next 14% to val.
std::vector<Split> split_identities(const std::vector<std::string>& identities, uint64_t seed);

/// Scans a directory of identity subfolders (or reads a manifest CSV with columns
/// path,identity) and assigns splits. Unreadable images are skipped with a warning.
DatasetManifest ingest(const std::filesystem::path& path, uint64_t seed = 0);

/// Loads one split: center crop, area resize to the working size, map to [-1, 1].
FaceSet load_split(const DatasetManifest& manifest, Split split, int64_t image_size);

/// Image file helpers (8-bit PNG, round-half-even quantization).
torch::Tensor read_image(const std::filesystem::path& path, int64_t image_size);
void write_png(const torch::Tensor& image, const std::filesystem::path& path);

/// For each row, the nearest following row (cyclically) with a different identity.
/// Throws if the set holds a single identity.
std::vector<int64_t> foreign_partners(const std::vector<int>& identities);

/// Standard toy splits by identity index: train 0..71, val 72..85, test 86..99 scaled
/// to `identities` total.
struct ToySplits {
  std::vector<int> train, val, test;
};
ToySplits toy_splits(int identities);

}  // namespace shield
