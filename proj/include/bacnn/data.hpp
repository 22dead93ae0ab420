#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bacnn/rng.hpp"
#include "bacnn/tensor.hpp"

namespace bacnn {

/// h x w x c radiance cube; values is [h, w, c].
struct HsiCube {
  Index h = 0;
  Index w = 0;
  Index c = 0;
  Tensor values;
};

/// Per-pixel class map, 0 = unlabeled, 1..k = classes.
struct LabelMap {
  Index h = 0;
  Index w = 0;
  int k = 0;
  std::vector<std::uint16_t> labels;

  int at(Index row, Index col) const { return labels[static_cast<std::size_t>(row * w + col)]; }
  /// Labeled pixels per class; entry i counts label i + 1.
  std::vector<Index> class_counts() const;
  Index labeled() const;
};

// Cube container: "HSC1 <h> <w> <c>\n" + h*w*c little-endian float32, pixel-interleaved.
// Label container: "LBL1 <h> <w> <k>\n" + h*w little-endian uint16.
void write_cube(std::ostream& out, const HsiCube& cube);
HsiCube read_cube(std::istream& in);
void save_cube(const std::string& path, const HsiCube& cube);
HsiCube load_cube(const std::string& path);

void write_labels(std::ostream& out, const LabelMap& labels);
LabelMap read_labels(std::istream& in);
void save_labels(const std::string& path, const LabelMap& labels);
LabelMap load_labels(const std::string& path);

/// Published shape of a benchmark scene.
struct DatasetProfile {
  std::string name;
  Index h = 0;
  Index w = 0;
  Index c = 0;
  int k = 0;
  std::vector<Index> class_counts;

  Index labeled() const;
};

const DatasetProfile& indian_pines_profile();
const DatasetProfile& ksc_profile();
std::optional<DatasetProfile> find_profile(std::string_view name);

/// Human-readable mismatches between loaded data and a profile; empty when consistent.
std::vector<std::string> compare_to_profile(const DatasetProfile& profile, const LabelMap& labels,
                                            const HsiCube* cube = nullptr);

/// Per band: (v - mean) / (std + 1e-8). Statistics come from every pixel, or only
/// from pixels whose entry in `stats_pixels` (h*w, row-major) is true.
HsiCube normalize_bands(const HsiCube& cube, const std::vector<bool>* stats_pixels = nullptr);

enum class Split { all, train, test };
const char* to_string(Split s);

/// Pixel that a patch is centered on, with its 0-based class.
struct PatchRef {
  Index row = 0;
  Index col = 0;
  int label = 0;

  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

/// Square windows centered on labeled pixels of a shared cube. Patches are
/// materialized on demand; out-of-image pixels are mirrored.
class PatchSet {
 public:
  PatchSet() = default;
  PatchSet(std::shared_ptr<const HsiCube> cube, Index patch_size, int num_classes, std::vector<PatchRef> items,
           Split split, std::uint64_t seed);

  Index size() const { return static_cast<Index>(items_.size()); }
  bool empty() const { return items_.empty(); }
  Index patch_size() const { return patch_size_; }
  Index bands() const { return cube_ ? cube_->c : 0; }
  int num_classes() const { return num_classes_; }
  Split split() const { return split_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<PatchRef>& items() const { return items_; }
  const std::shared_ptr<const HsiCube>& cube() const { return cube_; }

  /// [idx.size(), s, s, c] tensor of the selected patches.
  Tensor gather(std::span<const Index> idx) const;
  /// Every patch, [size(), s, s, c].
  Tensor materialize() const;
  std::vector<int> labels() const;
  std::vector<int> labels(std::span<const Index> idx) const;
  std::vector<Index> class_counts() const;

  PatchSet subset(std::vector<PatchRef> items, Split split, std::uint64_t seed) const;

 private:
  std::shared_ptr<const HsiCube> cube_;
  Index patch_size_ = 0;
  int num_classes_ = 0;
  std::vector<PatchRef> items_;
  Split split_ = Split::all;
  std::uint64_t seed_ = 0;
};

/// Mirror index of i into [0, n) without repeating the edge sample.
Index reflect_index(Index i, Index n);

/// One patch per labeled pixel, in row-major pixel order. `size` must be odd.
PatchSet extract_patches(std::shared_ptr<const HsiCube> cube, const LabelMap& labels, Index size = 15);

struct SplitResult {
  PatchSet train;
  PatchSet test;
};

/// Training samples drawn from a class of `count` pixels: ceil(0.3 * count),
/// capped at 80.
Index indian_pines_train_count(Index count);

/// Per class, indian_pines_train_count() random training samples; the rest test.
SplitResult split_indian_pines(const PatchSet& patches, Rng& rng);

/// Stratified split with ceil(fraction * count) training samples per class.
SplitResult split_fraction(const PatchSet& patches, double fraction, Rng& rng);

/// Oversamples classes below `target` by whole copies, then a random fill.
PatchSet replicate_minority(const PatchSet& train, Index target, Rng& rng);
PatchSet replicate_minority(const PatchSet& train, const std::vector<Index>& targets, Rng& rng);

/// Keeps ceil(fraction * count) random samples per class.
PatchSet subsample_per_class(const PatchSet& patches, double fraction, Rng& rng);

// Split manifest: "SPLIT <split> <patch> <classes> <seed> <count>\n" then "row col label" lines.
void write_split(std::ostream& out, const PatchSet& patches);
PatchSet read_split(std::istream& in, std::shared_ptr<const HsiCube> cube);

struct SyntheticSceneOptions {
  Index h = 48;
  Index w = 48;
  Index bands = 32;
  int classes = 4;
  /// Bands carrying class signal; the rest are pure noise.
  Index informative_bands = 8;
  double signal = 1.0;
  double noise = 0.3;
  /// Extra noise on the uninformative bands.
  double clutter = 2.0;
  double unlabeled_fraction = 0.2;
  std::uint64_t seed = 1;
};

struct SyntheticScene {
  HsiCube cube;
  LabelMap labels;
};

/// Piecewise-constant class regions (nearest of a few random centers per class)
/// with class-specific spectra on the informative bands.
SyntheticScene make_synthetic_scene(const SyntheticSceneOptions& options);

/// Label map of the profile's extent whose class histogram reproduces the
/// profile, labels scattered at random pixels.
LabelMap make_profile_label_map(const DatasetProfile& profile, Rng& rng);

}  // namespace bacnn
