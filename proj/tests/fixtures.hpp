#pragma once

#include <memory>

#include "bacnn/data.hpp"
#include "bacnn/rng.hpp"

namespace bacnn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

/// Two-class scene whose class halves are far enough apart that every labeled
/// patch sees only its own class: 15 x 60 pixels, left half spectrum A, right
/// half spectrum B, 20 labeled pixels per half.
inline PatchSet separable_two_class(Index bands, std::uint64_t seed, Index patch = 15) {
  Rng rng(seed);
  const Index h = 15;
  const Index w = 60;
  auto cube = std::make_shared<HsiCube>();
  cube->h = h;
  cube->w = w;
  cube->c = bands;
  cube->values = Tensor({h, w, bands});
  std::vector<double> a(static_cast<std::size_t>(bands));
  std::vector<double> b(static_cast<std::size_t>(bands));
  for (Index k = 0; k < bands; ++k) {
    a[static_cast<std::size_t>(k)] = (k % 2 == 0) ? 1.0 : -1.0;
    b[static_cast<std::size_t>(k)] = -a[static_cast<std::size_t>(k)];
  }
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const auto& spectrum = c < w / 2 ? a : b;
      for (Index k = 0; k < bands; ++k) {
        cube->values.at({r, c, k}) = spectrum[static_cast<std::size_t>(k)] + rng.normal(0.0, 0.2);
      }
    }
  }
  std::vector<PatchRef> items;
  for (int i = 0; i < 20; ++i) {
    const Index row = i % h;
    items.push_back({row, (i % 4) * 3 + 1, 0});  // columns 1..10: the patch stays in the left half
    items.push_back({row, w - 1 - ((i % 4) * 3 + 1), 1});  // mirrored on the right
  }
  return PatchSet(cube, patch, 2, std::move(items), Split::train, seed);
}

}  // namespace bacnn::testing
