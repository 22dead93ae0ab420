#include "bacnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "bacnn/error.hpp"
#include "binary_io.hpp"

namespace bacnn {

std::vector<Index> LabelMap::class_counts() const {
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  for (std::uint16_t l : labels) {
    if (l > 0) ++counts[l - 1u];
  }
  return counts;
}

Index LabelMap::labeled() const {
  return std::count_if(labels.begin(), labels.end(), [](std::uint16_t l) { return l > 0; });
}

namespace {

void expect_end(std::istream& in, const char* what) {
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(std::string(what) + " payload is longer than its header declares");
  }
}

}  // namespace

void write_cube(std::ostream& out, const HsiCube& cube) {
  out << "HSC1 " << cube.h << ' ' << cube.w << ' ' << cube.c << '\n';
  for (double v : cube.values.data()) detail::write_le(out, static_cast<float>(v));
}

HsiCube read_cube(std::istream& in) {
  std::istringstream header(detail::read_header_line(in, "cube"));
  std::string magic;
  HsiCube cube;
  if (!(header >> magic) || magic != "HSC1") throw FormatError("bad cube magic (expected HSC1)");
  if (!(header >> cube.h >> cube.w >> cube.c) || cube.h < 1 || cube.w < 1 || cube.c < 1) {
    throw FormatError("bad cube extents");
  }
  std::vector<double> values(static_cast<std::size_t>(cube.h * cube.w * cube.c));
  for (double& v : values) {
    v = detail::read_le<float>(in, "cube");
    if (!std::isfinite(v)) throw FormatError("cube contains a non-finite value");
  }
  expect_end(in, "cube");
  cube.values = Tensor({cube.h, cube.w, cube.c}, std::move(values));
  return cube;
}

void save_cube(const std::string& path, const HsiCube& cube) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write_cube(out, cube);
}

HsiCube load_cube(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open cube " + path);
  return read_cube(in);
}

void write_labels(std::ostream& out, const LabelMap& labels) {
  out << "LBL1 " << labels.h << ' ' << labels.w << ' ' << labels.k << '\n';
  for (std::uint16_t l : labels.labels) detail::write_le(out, l);
}

LabelMap read_labels(std::istream& in) {
  std::istringstream header(detail::read_header_line(in, "label map"));
  std::string magic;
  LabelMap map;
  if (!(header >> magic) || magic != "LBL1") throw FormatError("bad label magic (expected LBL1)");
  if (!(header >> map.h >> map.w >> map.k) || map.h < 1 || map.w < 1 || map.k < 1) {
    throw FormatError("bad label map extents");
  }
  map.labels.resize(static_cast<std::size_t>(map.h * map.w));
  for (auto& l : map.labels) {
    l = detail::read_le<std::uint16_t>(in, "label map");
    if (l > map.k) throw FormatError("label " + std::to_string(l) + " exceeds class count " + std::to_string(map.k));
  }
  expect_end(in, "label map");
  return map;
}

void save_labels(const std::string& path, const LabelMap& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write_labels(out, labels);
}

LabelMap load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open label map " + path);
  return read_labels(in);
}

Index DatasetProfile::labeled() const { return std::accumulate(class_counts.begin(), class_counts.end(), Index{0}); }

const DatasetProfile& indian_pines_profile() {
  static const DatasetProfile profile{
      "indian", 145, 145, 200, 16,
      {46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93}};
  return profile;
}

const DatasetProfile& ksc_profile() {
  static const DatasetProfile profile{
      "ksc", 512, 614, 176, 13, {761, 243, 256, 252, 161, 229, 105, 431, 520, 404, 419, 503, 927}};
  return profile;
}

std::optional<DatasetProfile> find_profile(std::string_view name) {
  if (name == "indian" || name == "indian_pines") return indian_pines_profile();
  if (name == "ksc") return ksc_profile();
  return std::nullopt;
}

std::vector<std::string> compare_to_profile(const DatasetProfile& profile, const LabelMap& labels,
                                            const HsiCube* cube) {
  std::vector<std::string> issues;
  if (labels.h != profile.h || labels.w != profile.w) {
    issues.push_back("label map is " + std::to_string(labels.h) + "x" + std::to_string(labels.w) + ", " +
                     profile.name + " is " + std::to_string(profile.h) + "x" + std::to_string(profile.w));
  }
  if (labels.k != profile.k) {
    issues.push_back("label map declares " + std::to_string(labels.k) + " classes, " + profile.name + " has " +
                     std::to_string(profile.k));
  } else if (labels.class_counts() != profile.class_counts) {
    issues.push_back("per-class labeled counts differ from the documented " + profile.name + " histogram (" +
                     std::to_string(labels.labeled()) + " labeled vs " + std::to_string(profile.labeled()) + ")");
  }
  if (cube != nullptr && cube->c != profile.c) {
    issues.push_back("cube has " + std::to_string(cube->c) + " bands, " + profile.name + " has " +
                     std::to_string(profile.c));
  }
  return issues;
}

HsiCube normalize_bands(const HsiCube& cube, const std::vector<bool>* stats_pixels) {
  const Index pixels = cube.h * cube.w;
  if (stats_pixels != nullptr && static_cast<Index>(stats_pixels->size()) != pixels) {
    throw ShapeError("normalize_bands: pixel mask has the wrong size");
  }
  auto v = cube.values.matrix(pixels, cube.c);
  Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(cube.c);
  Eigen::ArrayXd sq = Eigen::ArrayXd::Zero(cube.c);
  Index used = 0;
  for (Index p = 0; p < pixels; ++p) {
    if (stats_pixels != nullptr && !(*stats_pixels)[static_cast<std::size_t>(p)]) continue;
    mean += v.row(p).transpose().array();
    ++used;
  }
  if (used == 0) throw DataError("normalize_bands: no pixels selected for statistics");
  mean /= static_cast<double>(used);
  for (Index p = 0; p < pixels; ++p) {
    if (stats_pixels != nullptr && !(*stats_pixels)[static_cast<std::size_t>(p)]) continue;
    sq += (v.row(p).transpose().array() - mean).square();
  }
  const Eigen::ArrayXd denom = (sq / static_cast<double>(used)).sqrt() + 1e-8;

  HsiCube out = cube;
  out.values.matrix(pixels, cube.c) =
      (v.array().rowwise() - mean.transpose()).rowwise() / denom.transpose();
  return out;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::all: return "all";
    case Split::train: return "train";
    case Split::test: return "test";
  }
  return "?";
}

PatchSet::PatchSet(std::shared_ptr<const HsiCube> cube, Index patch_size, int num_classes, std::vector<PatchRef> items,
                   Split split, std::uint64_t seed)
    : cube_(std::move(cube)),
      patch_size_(patch_size),
      num_classes_(num_classes),
      items_(std::move(items)),
      split_(split),
      seed_(seed) {
  if (!cube_) throw ContractError("PatchSet needs a cube");
  if (patch_size_ < 1 || patch_size_ % 2 == 0) throw ContractError("patch size must be odd");
  for (const PatchRef& p : items_) {
    if (p.row < 0 || p.row >= cube_->h || p.col < 0 || p.col >= cube_->w) {
      throw DataError("patch center outside the cube");
    }
    if (p.label < 0 || p.label >= num_classes_) throw DataError("patch label outside the class range");
  }
}

Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  Index m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

Tensor PatchSet::gather(std::span<const Index> idx) const {
  const Index s = patch_size_;
  const Index c = cube_->c;
  const Index half = s / 2;
  Tensor out({static_cast<Index>(idx.size()), s, s, c});
  double* dst = out.ptr();
  const double* src = cube_->values.ptr();
  for (Index i : idx) {
    const PatchRef& p = items_.at(static_cast<std::size_t>(i));
    for (Index dy = -half; dy <= half; ++dy) {
      const Index r = reflect_index(p.row + dy, cube_->h);
      for (Index dx = -half; dx <= half; ++dx) {
        const Index col = reflect_index(p.col + dx, cube_->w);
        const double* px = src + (r * cube_->w + col) * c;
        dst = std::copy(px, px + c, dst);
      }
    }
  }
  return out;
}

Tensor PatchSet::materialize() const {
  std::vector<Index> all(items_.size());
  std::iota(all.begin(), all.end(), Index{0});
  return gather(all);
}

std::vector<int> PatchSet::labels() const {
  std::vector<int> out;
  out.reserve(items_.size());
  for (const PatchRef& p : items_) out.push_back(p.label);
  return out;
}

std::vector<int> PatchSet::labels(std::span<const Index> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(items_.at(static_cast<std::size_t>(i)).label);
  return out;
}

std::vector<Index> PatchSet::class_counts() const {
  std::vector<Index> counts(static_cast<std::size_t>(num_classes_), 0);
  for (const PatchRef& p : items_) ++counts[static_cast<std::size_t>(p.label)];
  return counts;
}

PatchSet PatchSet::subset(std::vector<PatchRef> items, Split split, std::uint64_t seed) const {
  return PatchSet(cube_, patch_size_, num_classes_, std::move(items), split, seed);
}

PatchSet extract_patches(std::shared_ptr<const HsiCube> cube, const LabelMap& labels, Index size) {
  if (size < 1 || size % 2 == 0) throw ContractError("patch size must be odd, got " + std::to_string(size));
  if (!cube) throw ContractError("extract_patches needs a cube");
  if (labels.h != cube->h || labels.w != cube->w) {
    throw DataError("label map " + std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                    " does not match cube " + std::to_string(cube->h) + "x" + std::to_string(cube->w));
  }
  std::vector<PatchRef> items;
  for (Index r = 0; r < labels.h; ++r) {
    for (Index c = 0; c < labels.w; ++c) {
      const int l = labels.at(r, c);
      if (l > 0) items.push_back({r, c, l - 1});
    }
  }
  return PatchSet(std::move(cube), size, labels.k, std::move(items), Split::all, 0);
}

namespace {

std::vector<std::vector<PatchRef>> by_class(const PatchSet& patches) {
  std::vector<std::vector<PatchRef>> groups(static_cast<std::size_t>(patches.num_classes()));
  for (const PatchRef& p : patches.items()) groups[static_cast<std::size_t>(p.label)].push_back(p);
  return groups;
}

bool pixel_order(const PatchRef& a, const PatchRef& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); }

template <typename CountFn>
SplitResult stratified_split(const PatchSet& patches, Rng& rng, CountFn train_count, bool require_all) {
  std::vector<PatchRef> train;
  std::vector<PatchRef> test;
  auto groups = by_class(patches);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto& group = groups[k];
    if (group.empty()) {
      if (require_all) throw DataError("class " + std::to_string(k + 1) + " has no labeled pixels");
      continue;
    }
    rng.shuffle(group.begin(), group.end());
    const auto take = static_cast<std::size_t>(train_count(static_cast<Index>(group.size())));
    train.insert(train.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(take));
    test.insert(test.end(), group.begin() + static_cast<std::ptrdiff_t>(take), group.end());
  }
  std::sort(train.begin(), train.end(), pixel_order);
  std::sort(test.begin(), test.end(), pixel_order);
  return {patches.subset(std::move(train), Split::train, rng.seed()),
          patches.subset(std::move(test), Split::test, rng.seed())};
}

Index ceil_fraction(double fraction, Index count) {
  // The epsilon keeps exact products (0.3 * 20 = 6.000000000000001) from rounding up.
  return static_cast<Index>(std::ceil(fraction * static_cast<double>(count) - 1e-9));
}

}  // namespace

Index indian_pines_train_count(Index count) { return std::min<Index>(ceil_fraction(0.3, count), 80); }

SplitResult split_indian_pines(const PatchSet& patches, Rng& rng) {
  return stratified_split(patches, rng, indian_pines_train_count, true);
}

SplitResult split_fraction(const PatchSet& patches, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("split fraction must lie in (0, 1)");
  return stratified_split(
      patches, rng, [fraction](Index count) { return std::max<Index>(1, ceil_fraction(fraction, count)); }, false);
}

PatchSet replicate_minority(const PatchSet& train, const std::vector<Index>& targets, Rng& rng) {
  if (static_cast<int>(targets.size()) != train.num_classes()) {
    throw ContractError("replicate_minority: need one target per class");
  }
  auto groups = by_class(train);
  std::vector<PatchRef> out;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& group = groups[k];
    if (group.empty()) throw DataError("replicate_minority: class " + std::to_string(k + 1) + " is empty");
    const auto count = static_cast<Index>(group.size());
    const Index target = targets[k];
    if (count >= target) {
      out.insert(out.end(), group.begin(), group.end());
      continue;
    }
    for (Index copy = 0; copy < target / count; ++copy) out.insert(out.end(), group.begin(), group.end());
    std::vector<PatchRef> fill = group;
    rng.shuffle(fill.begin(), fill.end());
    out.insert(out.end(), fill.begin(), fill.begin() + static_cast<std::ptrdiff_t>(target % count));
  }
  return train.subset(std::move(out), train.split(), train.seed());
}

PatchSet replicate_minority(const PatchSet& train, Index target, Rng& rng) {
  if (target < 1) throw ContractError("replicate_minority: target must be positive");
  return replicate_minority(train, std::vector<Index>(static_cast<std::size_t>(train.num_classes()), target), rng);
}

PatchSet subsample_per_class(const PatchSet& patches, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("subsample fraction must lie in (0, 1]");
  std::vector<PatchRef> out;
  for (auto& group : by_class(patches)) {
    if (group.empty()) continue;
    rng.shuffle(group.begin(), group.end());
    const Index keep = std::max<Index>(1, ceil_fraction(fraction, static_cast<Index>(group.size())));
    out.insert(out.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(out.begin(), out.end(), pixel_order);
  return patches.subset(std::move(out), patches.split(), patches.seed());
}

void write_split(std::ostream& out, const PatchSet& patches) {
  out << "SPLIT " << to_string(patches.split()) << ' ' << patches.patch_size() << ' ' << patches.num_classes() << ' '
      << patches.seed() << ' ' << patches.size() << '\n';
  for (const PatchRef& p : patches.items()) out << p.row << ' ' << p.col << ' ' << p.label << '\n';
}

PatchSet read_split(std::istream& in, std::shared_ptr<const HsiCube> cube) {
  std::istringstream header(detail::read_header_line(in, "split manifest"));
  std::string magic;
  std::string split_name;
  Index patch = 0;
  int classes = 0;
  std::uint64_t seed = 0;
  Index count = 0;
  if (!(header >> magic >> split_name >> patch >> classes >> seed >> count) || magic != "SPLIT" || count < 0) {
    throw FormatError("bad split manifest header");
  }
  Split split = Split::all;
  if (split_name == "train") split = Split::train;
  else if (split_name == "test") split = Split::test;
  else if (split_name != "all") throw FormatError("unknown split '" + split_name + "'");
  std::vector<PatchRef> items(static_cast<std::size_t>(count));
  for (auto& p : items) {
    if (!(in >> p.row >> p.col >> p.label)) throw FormatError("truncated split manifest");
  }
  return PatchSet(std::move(cube), patch, classes, std::move(items), split, seed);
}

SyntheticScene make_synthetic_scene(const SyntheticSceneOptions& o) {
  if (o.classes < 1 || o.h < 1 || o.w < 1 || o.bands < 1 || o.informative_bands < 1 || o.informative_bands > o.bands) {
    throw ConfigError("invalid synthetic scene options");
  }
  Rng layout = Rng(o.seed).stream("layout");
  Rng spectra = Rng(o.seed).stream("spectra");
  Rng noise = Rng(o.seed).stream("noise");

  std::vector<Index> band_order(static_cast<std::size_t>(o.bands));
  std::iota(band_order.begin(), band_order.end(), Index{0});
  spectra.shuffle(band_order.begin(), band_order.end());
  std::vector<bool> informative(static_cast<std::size_t>(o.bands), false);
  for (Index i = 0; i < o.informative_bands; ++i) informative[static_cast<std::size_t>(band_order[i])] = true;

  RowMatrix signature(o.classes, o.bands);
  for (Index k = 0; k < o.classes; ++k) {
    for (Index b = 0; b < o.bands; ++b) {
      signature(k, b) = informative[static_cast<std::size_t>(b)] ? o.signal * spectra.normal() : 0.0;
    }
  }

  struct Center {
    double r, c;
    int label;
  };
  std::vector<Center> centers;
  for (int k = 0; k < o.classes; ++k) {
    for (int i = 0; i < 3; ++i) {
      centers.push_back({layout.uniform() * static_cast<double>(o.h), layout.uniform() * static_cast<double>(o.w), k});
    }
  }

  SyntheticScene scene;
  scene.cube = {o.h, o.w, o.bands, Tensor({o.h, o.w, o.bands})};
  scene.labels = {o.h, o.w, o.classes, std::vector<std::uint16_t>(static_cast<std::size_t>(o.h * o.w), 0)};
  for (Index r = 0; r < o.h; ++r) {
    for (Index c = 0; c < o.w; ++c) {
      const auto nearest = std::min_element(centers.begin(), centers.end(), [r, c](const Center& a, const Center& b) {
        auto d = [r, c](const Center& x) { return std::hypot(x.r - static_cast<double>(r), x.c - static_cast<double>(c)); };
        return d(a) < d(b);
      });
      const int k = nearest->label;
      if (layout.uniform() >= o.unlabeled_fraction) {
        scene.labels.labels[static_cast<std::size_t>(r * o.w + c)] = static_cast<std::uint16_t>(k + 1);
      }
      for (Index b = 0; b < o.bands; ++b) {
        const double sd = informative[static_cast<std::size_t>(b)] ? o.noise : o.clutter;
        scene.cube.values.at({r, c, b}) = signature(k, b) + noise.normal(0.0, sd);
      }
    }
  }
  return scene;
}

LabelMap make_profile_label_map(const DatasetProfile& profile, Rng& rng) {
  const Index pixels = profile.h * profile.w;
  if (profile.labeled() > pixels) throw ConfigError("profile has more labels than pixels");
  std::vector<Index> order(static_cast<std::size_t>(pixels));
  std::iota(order.begin(), order.end(), Index{0});
  rng.shuffle(order.begin(), order.end());
  LabelMap map{profile.h, profile.w, profile.k, std::vector<std::uint16_t>(static_cast<std::size_t>(pixels), 0)};
  std::size_t next = 0;
  for (std::size_t k = 0; k < profile.class_counts.size(); ++k) {
    for (Index i = 0; i < profile.class_counts[k]; ++i) {
      map.labels[static_cast<std::size_t>(order[next++])] = static_cast<std::uint16_t>(k + 1);
    }
  }
  return map;
}

}  // namespace bacnn
