#pragma once

// Unsupervised lung segmentation: HU window, border clearing, k largest
// regions, ball erosion and closing, hole filling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "ctscreen/error.hpp"
#include "ctscreen/grid.hpp"

namespace ctscreen::seg {

enum class Connectivity { Six = 6, TwentySix = 26 };

/// Which grid faces count as "border" when clearing border-connected blobs.
enum class BorderFaces { InPlane, All };

struct SegmentationParams {
  float hu_low = -1000.0f;
  float hu_high = -400.0f;
  int keep_k = 2;
  int erode_radius = 2;
  int close_radius = 4;
  Connectivity connectivity = Connectivity::TwentySix;
  BorderFaces border_faces = BorderFaces::InPlane;

  void validate() const {
    require(hu_low < hu_high, ErrorCode::InvalidArgument, "hu_low must be < hu_high");
    require(keep_k >= 1, ErrorCode::InvalidArgument, "keep_k must be >= 1");
    require(erode_radius >= 0 && close_radius >= 0, ErrorCode::InvalidArgument, "radii must be >= 0");
  }
};

namespace detail {

struct Offset {
  long dr, dc, ds;
};

inline std::vector<Offset> neighbor_offsets(Connectivity conn) {
  std::vector<Offset> out;
  for (long ds = -1; ds <= 1; ++ds)
    for (long dc = -1; dc <= 1; ++dc)
      for (long dr = -1; dr <= 1; ++dr) {
        const long manhattan = std::labs(dr) + std::labs(dc) + std::labs(ds);
        if (manhattan == 0) continue;
        if (conn == Connectivity::Six && manhattan != 1) continue;
        out.push_back({dr, dc, ds});
      }
  return out;
}

inline bool on_border(const Shape3& s, std::size_t r, std::size_t c, std::size_t k, BorderFaces faces) {
  const bool in_plane = r == 0 || c == 0 || r + 1 == s.r || c + 1 == s.c;
  if (faces == BorderFaces::InPlane) return in_plane;
  return in_plane || k == 0 || k + 1 == s.s;
}

/// Exact 1D squared distance transform (lower envelope of parabolas); infinite
/// samples are never inserted into the envelope.
inline void edt_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    const auto qd = static_cast<double>(q);
    if (!any) {
      any = true;
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const auto pd = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + pd * pd)) / (2.0 * qd - 2.0 * pd);
      if (s > z[k] || k == 0) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (!any) {
    std::fill(d, d + n, inf);
    return;
  }
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double dq = static_cast<double>(q) - static_cast<double>(v[j]);
    d[q] = dq * dq + f[v[j]];
  }
}

/// Squared Euclidean distance from every voxel to the nearest voxel with `source[i] != 0`.
inline std::vector<double> squared_distance_to(const Grid3<std::uint8_t>& source) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const Shape3 s = source.shape();
  std::vector<double> dist(source.size());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = source[i] ? 0.0 : inf;

  const std::size_t longest = std::max({s.r, s.c, s.s});
  std::vector<double> f(longest), d(longest);
  std::vector<std::size_t> v;
  std::vector<double> z;
  const std::array<std::size_t, 3> stride{1, s.r, s.r * s.c};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t n = s[axis];
    const std::size_t lines = source.size() / n;
    for (std::size_t line = 0; line < lines; ++line) {
      // base index of this line: decompose `line` over the two other axes
      std::size_t base;
      if (axis == 0) {
        base = line * s.r;
      } else if (axis == 1) {
        base = (line % s.r) + (line / s.r) * s.r * s.c;
      } else {
        base = line;
      }
      for (std::size_t q = 0; q < n; ++q) f[q] = dist[base + q * stride[axis]];
      edt_1d(f.data(), d.data(), n, v, z);
      for (std::size_t q = 0; q < n; ++q) dist[base + q * stride[axis]] = d[q];
    }
  }
  return dist;
}

}  // namespace detail

/// Component labels in scan order: label 1 owns the smallest linear index.
struct Labeling {
  Grid3<std::int32_t> labels;
  std::vector<std::size_t> sizes;  // sizes[l - 1] for label l

  std::size_t count() const { return sizes.size(); }
};

template <typename Pred>
Labeling label_where(const Shape3& shape, Pred is_member, Connectivity conn) {
  Labeling out{Grid3<std::int32_t>(shape, 0), {}};
  const auto offsets = detail::neighbor_offsets(conn);
  std::vector<std::size_t> queue;
  const std::size_t n = shape.voxels();
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (out.labels[seed] != 0 || !is_member(seed)) continue;
    const auto label = static_cast<std::int32_t>(out.sizes.size() + 1);
    out.labels[seed] = label;
    queue.clear();
    queue.push_back(seed);
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const auto [r, c, k] = out.labels.coords(queue[head]);
      for (const auto& o : offsets) {
        const long nr = static_cast<long>(r) + o.dr;
        const long nc = static_cast<long>(c) + o.dc;
        const long nk = static_cast<long>(k) + o.ds;
        if (!out.labels.contains(nr, nc, nk)) continue;
        const std::size_t ni = out.labels.index(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc),
                                                static_cast<std::size_t>(nk));
        if (out.labels[ni] != 0 || !is_member(ni)) continue;
        out.labels[ni] = label;
        queue.push_back(ni);
      }
    }
    out.sizes.push_back(queue.size());
  }
  return out;
}

inline Labeling label_components(const Mask& mask, Connectivity conn) {
  return label_where(mask.shape(), [&](std::size_t i) { return mask.bits[i] != 0; }, conn);
}

inline Mask threshold_lung(const Volume& volume, const SegmentationParams& params) {
  Mask out(volume.shape(), volume.source_id);
  for (std::size_t i = 0; i < out.bits.size(); ++i) {
    const float v = volume.voxels[i];
    out.bits[i] = (v >= params.hu_low && v <= params.hu_high) ? 1 : 0;
  }
  return out;
}

/// Clears every component that touches a border face.
inline Mask remove_border_components(const Mask& mask, Connectivity conn, BorderFaces faces = BorderFaces::All) {
  const Labeling lab = label_components(mask, conn);
  std::vector<bool> touches(lab.count() + 1, false);
  const Shape3 s = mask.shape();
  for (std::size_t k = 0; k < s.s; ++k)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t r = 0; r < s.r; ++r)
        if (detail::on_border(s, r, c, k, faces)) touches[static_cast<std::size_t>(lab.labels(r, c, k))] = true;
  Mask out = mask;
  for (std::size_t i = 0; i < out.bits.size(); ++i) {
    const auto l = static_cast<std::size_t>(lab.labels[i]);
    if (l != 0 && touches[l]) out.bits[i] = 0;
  }
  return out;
}

/// Keeps the k largest components; equal sizes resolve to the lower label.
inline Mask largest_components(const Mask& mask, int k, Connectivity conn) {
  require(k >= 1, ErrorCode::InvalidArgument, "k must be >= 1");
  const Labeling lab = label_components(mask, conn);
  std::vector<std::size_t> order(lab.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lab.sizes[a] > lab.sizes[b]; });
  std::vector<bool> keep(lab.count() + 1, false);
  for (std::size_t i = 0; i < order.size() && i < static_cast<std::size_t>(k); ++i) keep[order[i] + 1] = true;
  Mask out(mask.shape(), mask.source_id);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = keep[static_cast<std::size_t>(lab.labels[i])] ? 1 : 0;
  return out;
}

/// Erosion by the discrete ball {|d| <= radius}; voxels outside the grid are background.
inline Mask morph_erode(const Mask& mask, int radius) {
  require(radius >= 0, ErrorCode::InvalidArgument, "radius must be >= 0");
  if (radius == 0) return mask;
  // One padding layer of background is enough: the nearest out-of-grid voxel
  // to any interior point always lies in that layer.
  const Shape3 s = mask.shape();
  const Shape3 p{s.r + 2, s.c + 2, s.s + 2};
  Grid3<std::uint8_t> background(p, 1);
  for (std::size_t k = 0; k < s.s; ++k)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t r = 0; r < s.r; ++r) background(r + 1, c + 1, k + 1) = mask.bits(r, c, k) ? 0 : 1;
  const auto dist = detail::squared_distance_to(background);
  const double r2 = static_cast<double>(radius) * radius;
  Mask out(s, mask.source_id);
  for (std::size_t k = 0; k < s.s; ++k)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t r = 0; r < s.r; ++r)
        out.bits(r, c, k) = (mask.bits(r, c, k) && dist[background.index(r + 1, c + 1, k + 1)] > r2) ? 1 : 0;
  return out;
}

inline Mask morph_dilate(const Mask& mask, int radius) {
  require(radius >= 0, ErrorCode::InvalidArgument, "radius must be >= 0");
  if (radius == 0) return mask;
  const auto dist = detail::squared_distance_to(mask.bits);
  const double r2 = static_cast<double>(radius) * radius;
  Mask out(mask.shape(), mask.source_id);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = dist[i] <= r2 ? 1 : 0;
  return out;
}

inline Mask morph_close(const Mask& mask, int radius) {
  require(radius >= 0, ErrorCode::InvalidArgument, "radius must be >= 0");
  if (radius == 0) return mask;
  return morph_erode(morph_dilate(mask, radius), radius);
}

/// Sets background regions that cannot reach any grid face to foreground.
/// `background_conn` is the connectivity of the background, not the foreground.
inline Mask fill_holes(const Mask& mask, Connectivity background_conn = Connectivity::Six) {
  const Shape3 s = mask.shape();
  Grid3<std::uint8_t> reached(s, 0);
  std::vector<std::size_t> queue;
  for (std::size_t k = 0; k < s.s; ++k)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t r = 0; r < s.r; ++r) {
        const std::size_t i = reached.index(r, c, k);
        if (!mask.bits[i] && detail::on_border(s, r, c, k, BorderFaces::All)) {
          reached[i] = 1;
          queue.push_back(i);
        }
      }
  const auto offsets = detail::neighbor_offsets(background_conn);
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const auto [r, c, k] = reached.coords(queue[head]);
    for (const auto& o : offsets) {
      const long nr = static_cast<long>(r) + o.dr, nc = static_cast<long>(c) + o.dc, nk = static_cast<long>(k) + o.ds;
      if (!reached.contains(nr, nc, nk)) continue;
      const std::size_t ni =
          reached.index(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc), static_cast<std::size_t>(nk));
      if (reached[ni] || mask.bits[ni]) continue;
      reached[ni] = 1;
      queue.push_back(ni);
    }
  }
  Mask out(s, mask.source_id);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (mask.bits[i] || !reached[i]) ? 1 : 0;
  return out;
}

/// threshold -> clear border -> k largest -> erode -> close -> fill holes,
/// followed by a second k-largest pass since erosion can fragment a lung.
inline Mask segment_lung(const Volume& volume, const SegmentationParams& params = {}) {
  params.validate();
  Mask m = threshold_lung(volume, params);
  m = remove_border_components(m, params.connectivity, params.border_faces);
  m = largest_components(m, params.keep_k, params.connectivity);
  m = morph_erode(m, params.erode_radius);
  m = morph_close(m, params.close_radius);
  m = fill_holes(m, Connectivity::Six);
  m = largest_components(m, params.keep_k, params.connectivity);
  if (m.count() == 0) fail(ErrorCode::EmptySegmentation, "no lung voxels survive in '" + volume.source_id + "'");
  m.source_id = volume.source_id;
  return m;
}

inline double dice(const Mask& a, const Mask& b) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch, "dice on different shapes");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a.bits[i] != 0;
    nb += b.bits[i] != 0;
    inter += (a.bits[i] != 0 && b.bits[i] != 0);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace ctscreen::seg
