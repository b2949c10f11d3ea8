#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "fedsplitx/data/dataset.hpp"
#include "fedsplitx/rng.hpp"

namespace fedsplitx::data {

enum class SyntheticKind { blobs, spirals };

inline SyntheticKind parse_synthetic_kind(std::string_view s) {
  if (s == "blobs") return SyntheticKind::blobs;
  if (s == "spirals") return SyntheticKind::spirals;
  throw std::invalid_argument("unknown synthetic dataset '" + std::string(s) + "' (blobs | spirals)");
}

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::spirals;
  std::size_t n = 2000;
  std::size_t classes = 2;
  double noise = 0.05;
  std::uint64_t seed = 0;
  double turns = 1.0;   // spirals: revolutions of each arm
  double spread = 5.0;  // blobs: radius of the circle the centres sit on
};

// Blobs: class c is centred at angle 2*pi*c/classes on a circle.
// Spirals: arm c is r = t, theta = 2*pi*(turns*t + c/classes) for t in
// (0, 1], plus isotropic gaussian noise. Labels cycle so classes are balanced.
inline Dataset make_synthetic(const SyntheticSpec& s) {
  if (s.classes < 2) throw std::invalid_argument("make_synthetic: need at least 2 classes");
  if (s.n < s.classes) {
    throw std::invalid_argument("make_synthetic: n = " + std::to_string(s.n) + " is below the class count " +
                                std::to_string(s.classes));
  }
  if (!(s.noise >= 0.0) || !std::isfinite(s.noise)) throw std::invalid_argument("make_synthetic: noise must be >= 0");
  if (s.kind == SyntheticKind::spirals && !(s.turns > 0.0)) {
    throw std::invalid_argument("make_synthetic: spirals need turns > 0");
  }

  constexpr double two_pi = 6.283185307179586;
  Rng rng(derive_seed(s.seed, 0x73796eULL, static_cast<std::uint64_t>(s.kind)));
  Dataset d;
  d.num_classes = s.classes;
  d.features = nn::Tensor({s.n, 2});
  d.labels.resize(s.n);
  for (std::size_t i = 0; i < s.n; ++i) {
    const std::size_t c = i % s.classes;
    double x = 0.0, y = 0.0;
    if (s.kind == SyntheticKind::blobs) {
      const double a = two_pi * static_cast<double>(c) / static_cast<double>(s.classes);
      x = s.spread * std::cos(a);
      y = s.spread * std::sin(a);
    } else {
      const double t = 1.0 - rng.uniform();  // (0, 1]
      const double a = two_pi * (s.turns * t + static_cast<double>(c) / static_cast<double>(s.classes));
      x = t * std::cos(a);
      y = t * std::sin(a);
    }
    x += s.noise * rng.normal();
    y += s.noise * rng.normal();
    auto row = d.features.row(i);
    row[0] = static_cast<float>(x);
    row[1] = static_cast<float>(y);
    d.labels[i] = c;
  }
  return d;
}

}  // namespace fedsplitx::data
