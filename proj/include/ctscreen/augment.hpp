#pragma once

// Online augmentation for normalized [0,1] sample tensors. Every transform is
// a pure function of (input, parameters, seed).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <tuple>
#include <vector>

#include "ctscreen/error.hpp"
#include "ctscreen/grid.hpp"
#include "ctscreen/patch_sampler.hpp"
#include "ctscreen/rng.hpp"

namespace ctscreen::augment {

enum class Interp { Bilinear, Nearest };

struct ElasticParams {
  std::array<std::size_t, 3> grid{4, 4, 2};  // control points along (R, C, S)
  double sigma = 2.0;                        // displacement std-dev in voxels
  double through_plane_scale = 0.25;         // slice-axis displacement relative to in-plane
};

struct AugmentPolicy {
  std::vector<double> rotation_angles{-25.0, -15.0, 10.0, 30.0};
  double shift_fraction = 0.20;
  std::vector<double> gammas{0.7, 1.7};
  double noise_sigma = 0.02;
  ElasticParams elastic;
  std::uint64_t seed = 0;

  static AugmentPolicy none() {
    AugmentPolicy p;
    p.rotation_angles.clear();
    p.shift_fraction = 0.0;
    p.gammas.clear();
    p.noise_sigma = 0.0;
    p.elastic.sigma = 0.0;
    return p;
  }

  void validate() const {
    require(shift_fraction >= 0.0 && shift_fraction < 1.0, ErrorCode::InvalidArgument, "shift_fraction in [0,1)");
    require(noise_sigma >= 0.0, ErrorCode::InvalidArgument, "noise_sigma >= 0");
    for (double g : gammas) require(g > 0.0, ErrorCode::InvalidArgument, "gammas must be > 0");
    for (auto n : elastic.grid) require(n >= 2, ErrorCode::InvalidArgument, "elastic grid needs >= 2 points per axis");
    require(elastic.sigma >= 0.0, ErrorCode::InvalidArgument, "elastic sigma >= 0");
  }
};

namespace detail {

/// Maps x onto [0, n-1], tolerating round-off at the edges; nullopt when outside.
inline std::optional<double> inside(double x, std::size_t n) {
  constexpr double tol = 1e-6;
  const double hi = static_cast<double>(n) - 1.0;
  if (x < -tol || x > hi + tol) return std::nullopt;
  return std::clamp(x, 0.0, hi);
}

inline std::pair<std::size_t, double> cell(double x, std::size_t n) {
  if (n == 1) return {0, 0.0};
  auto i = static_cast<std::size_t>(std::floor(x));
  if (i >= n - 1) i = n - 2;
  return {i, x - static_cast<double>(i)};
}

/// Trilinear sample; points outside the grid read as 0.
inline double sample(const Grid3<float>& g, double r, double c, double s) {
  const Shape3 sh = g.shape();
  const auto xr = inside(r, sh.r), xc = inside(c, sh.c), xs = inside(s, sh.s);
  if (!xr || !xc || !xs) return 0.0;
  const auto [r0, fr] = cell(*xr, sh.r);
  const auto [c0, fc] = cell(*xc, sh.c);
  const auto [s0, fs] = cell(*xs, sh.s);
  double acc = 0.0;
  for (std::size_t dk = 0; dk < 2; ++dk) {
    const double wk = dk ? fs : 1.0 - fs;
    if (wk == 0.0) continue;
    for (std::size_t dc = 0; dc < 2; ++dc) {
      const double wc = dc ? fc : 1.0 - fc;
      if (wc == 0.0) continue;
      for (std::size_t dr = 0; dr < 2; ++dr) {
        const double wr = dr ? fr : 1.0 - fr;
        if (wr == 0.0) continue;
        acc += wr * wc * wk * g(r0 + dr, c0 + dc, s0 + dk);
      }
    }
  }
  return acc;
}

}  // namespace detail

/// Rotates each axial slice about (R/2, C/2). A voxel at (r, c) moves to
/// (cr + dr cos - dc sin, cc + dr sin + dc cos) with (dr, dc) its offset from the center.
inline Grid3<float> rotate_inplane(const Grid3<float>& in, double angle_deg, Interp interp = Interp::Bilinear) {
  require(std::isfinite(angle_deg), ErrorCode::InvalidArgument, "angle must be finite");
  const Shape3 sh = in.shape();
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cr = static_cast<double>(sh.r) / 2.0, cc = static_cast<double>(sh.c) / 2.0;
  Grid3<float> out(sh, 0.0f);
  for (std::size_t c = 0; c < sh.c; ++c) {
    for (std::size_t r = 0; r < sh.r; ++r) {
      const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
      // inverse rotation
      const double sr = cr + dr * cs + dc * sn;
      const double sc = cc - dr * sn + dc * cs;
      if (interp == Interp::Nearest) {
        const long nr = std::lround(sr), nc = std::lround(sc);
        if (nr < 0 || nc < 0 || nr >= static_cast<long>(sh.r) || nc >= static_cast<long>(sh.c)) continue;
        for (std::size_t k = 0; k < sh.s; ++k)
          out(r, c, k) = in(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc), k);
      } else {
        for (std::size_t k = 0; k < sh.s; ++k)
          out(r, c, k) = static_cast<float>(detail::sample(in, sr, sc, static_cast<double>(k)));
      }
    }
  }
  return out;
}

/// Integer in-plane translation by round(fraction * extent); vacated voxels are 0.
inline Grid3<float> shift(const Grid3<float>& in, double dy_fraction, double dx_fraction) {
  const Shape3 sh = in.shape();
  const long dr = std::lround(dy_fraction * static_cast<double>(sh.r));
  const long dc = std::lround(dx_fraction * static_cast<double>(sh.c));
  Grid3<float> out(sh, 0.0f);
  for (std::size_t k = 0; k < sh.s; ++k)
    for (std::size_t c = 0; c < sh.c; ++c)
      for (std::size_t r = 0; r < sh.r; ++r) {
        const long sr = static_cast<long>(r) - dr, sc = static_cast<long>(c) - dc;
        if (in.contains(sr, sc, static_cast<long>(k)))
          out(r, c, k) = in(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc), k);
      }
  return out;
}

/// V_out = V_in ^ gamma, element-wise.
inline Grid3<float> gamma_correct(const Grid3<float>& in, double gamma) {
  require(gamma > 0.0, ErrorCode::InvalidArgument, "gamma must be > 0");
  Grid3<float> out = in;
  for (float& v : out.data()) v = static_cast<float>(std::pow(std::clamp(static_cast<double>(v), 0.0, 1.0), gamma));
  return out;
}

inline Grid3<float> add_gaussian_noise(const Grid3<float>& in, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, ErrorCode::InvalidArgument, "sigma must be >= 0");
  if (sigma == 0.0) return in;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  Grid3<float> out = in;
  for (float& v : out.data()) v = static_cast<float>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
  return out;
}

/// Displacements (in voxels, per axis r/c/s) at a regular control lattice whose
/// corner points coincide with the grid corners.
struct ControlField {
  std::array<std::size_t, 3> grid{2, 2, 2};
  std::vector<std::array<double, 3>> displacement;  // index: i + gr * (j + gc * k)

  std::array<double, 3>& at(std::size_t i, std::size_t j, std::size_t k) {
    return displacement[i + grid[0] * (j + grid[1] * k)];
  }
  const std::array<double, 3>& at(std::size_t i, std::size_t j, std::size_t k) const {
    return displacement[i + grid[0] * (j + grid[1] * k)];
  }

  static ControlField zeros(std::array<std::size_t, 3> grid) {
    ControlField f;
    f.grid = grid;
    f.displacement.assign(grid[0] * grid[1] * grid[2], {0.0, 0.0, 0.0});
    return f;
  }
};

inline ControlField random_control_field(const ElasticParams& p, std::uint64_t seed) {
  ControlField f = ControlField::zeros(p.grid);
  if (p.sigma == 0.0) return f;
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, p.sigma);
  for (auto& d : f.displacement) {
    d[0] = n(rng);
    d[1] = n(rng);
    d[2] = n(rng) * p.through_plane_scale;
  }
  return f;
}

/// Dense displacement at voxel (r, c, s): trilinear interpolation of the lattice.
inline std::array<double, 3> field_at(const ControlField& f, Shape3 shape, double r, double c, double s) {
  const std::array<double, 3> pos{r, c, s};
  std::array<std::size_t, 3> base{};
  std::array<double, 3> frac{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double spacing = (static_cast<double>(shape[a]) - 1.0) / (static_cast<double>(f.grid[a]) - 1.0);
    const double x = spacing > 0 ? pos[a] / spacing : 0.0;
    std::tie(base[a], frac[a]) = detail::cell(std::clamp(x, 0.0, static_cast<double>(f.grid[a]) - 1.0), f.grid[a]);
  }
  std::array<double, 3> u{0.0, 0.0, 0.0};
  for (std::size_t dk = 0; dk < 2; ++dk)
    for (std::size_t dj = 0; dj < 2; ++dj)
      for (std::size_t di = 0; di < 2; ++di) {
        const double w = (di ? frac[0] : 1 - frac[0]) * (dj ? frac[1] : 1 - frac[1]) * (dk ? frac[2] : 1 - frac[2]);
        if (w == 0.0) continue;
        const auto& d = f.at(base[0] + di, base[1] + dj, base[2] + dk);
        for (std::size_t a = 0; a < 3; ++a) u[a] += w * d[a];
      }
  return u;
}

/// out(p) = in(p + u(p)) with trilinear resampling; samples leaving the grid read 0.
inline Grid3<float> apply_elastic(const Grid3<float>& in, const ControlField& field) {
  const Shape3 sh = in.shape();
  Grid3<float> out(sh, 0.0f);
  for (std::size_t k = 0; k < sh.s; ++k)
    for (std::size_t c = 0; c < sh.c; ++c)
      for (std::size_t r = 0; r < sh.r; ++r) {
        const auto rd = static_cast<double>(r), cd = static_cast<double>(c), kd = static_cast<double>(k);
        const auto u = field_at(field, sh, rd, cd, kd);
        out(r, c, k) = static_cast<float>(detail::sample(in, rd + u[0], cd + u[1], kd + u[2]));
      }
  return out;
}

inline Grid3<float> elastic_deform(const Grid3<float>& in, const ElasticParams& params, std::uint64_t seed) {
  for (auto n : params.grid) require(n >= 2, ErrorCode::InvalidArgument, "elastic grid needs >= 2 points per axis");
  if (params.sigma == 0.0) return in;
  return apply_elastic(in, random_control_field(params, seed));
}

enum class TransformKind { Identity, Rotate, Shift, Gamma, Noise, Elastic };

struct Transform {
  TransformKind kind = TransformKind::Identity;
  double a = 0.0;  // angle, gamma, or dy fraction
  double b = 0.0;  // dx fraction
  std::uint64_t seed = 0;
};

/// The menu a draw is taken from: identity, each rotation angle, shift, each
/// gamma, noise, elastic (disabled entries omitted).
inline std::vector<Transform> transform_menu(const AugmentPolicy& p) {
  std::vector<Transform> menu{{TransformKind::Identity}};
  for (double angle : p.rotation_angles) menu.push_back({TransformKind::Rotate, angle});
  if (p.shift_fraction > 0.0) menu.push_back({TransformKind::Shift});
  for (double g : p.gammas) menu.push_back({TransformKind::Gamma, g});
  if (p.noise_sigma > 0.0) menu.push_back({TransformKind::Noise});
  if (p.elastic.sigma > 0.0) menu.push_back({TransformKind::Elastic});
  return menu;
}

/// Chooses one transform uniformly from the menu, with its random parameters,
/// from a stream keyed by (policy seed, epoch seed, sample index).
inline Transform draw_transform(const AugmentPolicy& p, std::uint64_t epoch_seed, std::uint64_t sample_index) {
  const auto menu = transform_menu(p);
  Rng rng(derive_seed(p.seed, {epoch_seed, sample_index}));
  std::uniform_int_distribution<std::size_t> pick(0, menu.size() - 1);
  Transform t = menu[pick(rng)];
  if (t.kind == TransformKind::Shift) {
    std::uniform_real_distribution<double> frac(-p.shift_fraction, p.shift_fraction);
    t.a = frac(rng);
    t.b = frac(rng);
  }
  t.seed = rng();
  return t;
}

inline Grid3<float> apply_transform(const Grid3<float>& in, const Transform& t, const AugmentPolicy& p) {
  switch (t.kind) {
    case TransformKind::Identity: return in;
    case TransformKind::Rotate: return rotate_inplane(in, t.a);
    case TransformKind::Shift: return shift(in, t.a, t.b);
    case TransformKind::Gamma: return gamma_correct(in, t.a);
    case TransformKind::Noise: return add_gaussian_noise(in, p.noise_sigma, t.seed);
    case TransformKind::Elastic: return elastic_deform(in, p.elastic, t.seed);
  }
  return in;
}

inline patch::Sample augment_sample(const patch::Sample& sample, const AugmentPolicy& policy, std::uint64_t epoch_seed,
                                    std::uint64_t sample_index) {
  patch::Sample out = sample;
  out.tensor = apply_transform(sample.tensor, draw_transform(policy, epoch_seed, sample_index), policy);
  return out;
}

}  // namespace ctscreen::augment
