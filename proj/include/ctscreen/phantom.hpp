#pragma once

// Analytic chest phantoms: air surround, soft-tissue body cylinder, two
// ellipsoidal lungs, optional vessel holes and ground-glass blobs.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ctscreen/grid.hpp"
#include "ctscreen/rng.hpp"

namespace ctscreen::phantom {

struct Ellipsoid {
  double cr, cc, cs;  // center (voxels)
  double ar, ac, as;  // semi-axes (voxels)

  bool contains(double r, double c, double s) const {
    const double x = (r - cr) / ar, y = (c - cc) / ac, z = (s - cs) / as;
    return x * x + y * y + z * z <= 1.0;
  }
};

struct ChestSpec {
  Shape3 shape{128, 128, 64};
  float air_hu = -1000.0f;
  float body_hu = 40.0f;
  float lung_hu = -800.0f;
  float noise_sigma = 15.0f;
  /// Body cylinder semi-axes as fractions of (R, C).
  double body_fr = 0.46, body_fc = 0.42;
  /// Lung semi-axes as fractions of (R, C, S); centers at R/2 +- lung_offset_fr * R.
  double lung_fr = 0.17, lung_fc = 0.30, lung_fs = 0.38;
  double lung_offset_fr = 0.21;
  /// Thin soft-tissue tubes along the slice axis, fully inside each lung.
  int vessels_per_lung = 0;
  double vessel_radius = 1.0;
  /// Ground-glass blobs (HU inside the lung, above the lung window).
  int ggo_blobs = 0;
  float ggo_hu = -350.0f;
  double ggo_radius_fraction = 0.06;
  std::uint64_t seed = 1;
  std::string source_id = "phantom";
};

struct Chest {
  Volume volume;
  Mask lungs;  // analytic ground truth (ellipsoid interiors)
  std::vector<Ellipsoid> lung_shapes;
};

inline std::vector<Ellipsoid> lung_ellipsoids(const ChestSpec& spec) {
  const auto R = static_cast<double>(spec.shape.r), C = static_cast<double>(spec.shape.c),
             S = static_cast<double>(spec.shape.s);
  const double cr = (R - 1) / 2, cc = (C - 1) / 2, cs = (S - 1) / 2;
  return {Ellipsoid{cr - spec.lung_offset_fr * R, cc, cs, spec.lung_fr * R, spec.lung_fc * C, spec.lung_fs * S},
          Ellipsoid{cr + spec.lung_offset_fr * R, cc, cs, spec.lung_fr * R, spec.lung_fc * C, spec.lung_fs * S}};
}

inline Chest make_chest(const ChestSpec& spec) {
  Rng rng(derive_seed(spec.seed, {0x6368657374ULL}));
  const Shape3 sh = spec.shape;
  const double cr = (static_cast<double>(sh.r) - 1) / 2, cc = (static_cast<double>(sh.c) - 1) / 2;
  const double br = spec.body_fr * static_cast<double>(sh.r), bc = spec.body_fc * static_cast<double>(sh.c);
  const auto lungs = lung_ellipsoids(spec);

  struct Tube {
    double r, c, s0, s1;
  };
  std::vector<Tube> tubes;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (const auto& e : lungs) {
    for (int i = 0; i < spec.vessels_per_lung; ++i) {
      // keep the tube well inside: in-plane offset within half the semi-axes,
      // slice extent within half the slice semi-axis
      const double r = e.cr + 0.45 * e.ar * unit(rng);
      const double c = e.cc + 0.45 * e.ac * unit(rng);
      tubes.push_back({r, c, e.cs - 0.5 * e.as, e.cs + 0.5 * e.as});
    }
  }
  std::vector<Ellipsoid> blobs;
  for (int i = 0; i < spec.ggo_blobs; ++i) {
    const Ellipsoid& e = lungs[static_cast<std::size_t>(i) % lungs.size()];
    const double rad = spec.ggo_radius_fraction * static_cast<double>(sh.r);
    blobs.push_back({e.cr + 0.5 * e.ar * unit(rng), e.cc + 0.5 * e.ac * unit(rng), e.cs + 0.5 * e.as * unit(rng),
                     rad, rad, std::max(1.5, rad * static_cast<double>(sh.s) / static_cast<double>(sh.r))});
  }

  Chest out;
  out.lung_shapes = lungs;
  out.volume.voxels = Grid3<float>(sh, spec.air_hu);
  out.volume.source_id = spec.source_id;
  out.lungs = Mask(sh, spec.source_id);
  std::normal_distribution<float> noise(0.0f, spec.noise_sigma);
  for (std::size_t k = 0; k < sh.s; ++k) {
    for (std::size_t c = 0; c < sh.c; ++c) {
      for (std::size_t r = 0; r < sh.r; ++r) {
        const auto rd = static_cast<double>(r), cd = static_cast<double>(c), kd = static_cast<double>(k);
        float hu = spec.air_hu;
        const double x = (rd - cr) / br, y = (cd - cc) / bc;
        if (x * x + y * y <= 1.0) hu = spec.body_hu;
        bool in_lung = false;
        for (const auto& e : lungs) in_lung = in_lung || e.contains(rd, cd, kd);
        if (in_lung) {
          hu = spec.lung_hu;
          out.lungs.bits(r, c, k) = 1;
          for (const auto& t : tubes) {
            const double dr = rd - t.r, dc = cd - t.c;
            if (kd >= t.s0 && kd <= t.s1 && dr * dr + dc * dc <= spec.vessel_radius * spec.vessel_radius)
              hu = spec.body_hu;
          }
          for (const auto& b : blobs)
            if (b.contains(rd, cd, kd)) hu = spec.ggo_hu;
        }
        if (spec.noise_sigma > 0) hu += noise(rng);
        out.volume.voxels(r, c, k) = hu;
      }
    }
  }
  return out;
}

/// A roomier chest whose lungs (semi-axes about 70 x 92 x 70 voxels) are large
/// relative to the default erosion radius.
inline ChestSpec large_chest_spec() {
  ChestSpec s;
  s.shape = {352, 256, 160};
  s.lung_fr = 70.0 / 352.0;
  s.lung_fc = 92.0 / 256.0;
  s.lung_fs = 0.44;
  s.lung_offset_fr = 80.0 / 352.0;
  s.body_fr = 0.47;
  s.body_fc = 0.45;
  return s;
}

}  // namespace ctscreen::phantom
