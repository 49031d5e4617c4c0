#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ctscreen/error.hpp"
#include "ctscreen/grid.hpp"
#include "ctscreen/io_util.hpp"
#include "ctscreen/rng.hpp"

namespace ctscreen::patch {

/// One rung of the patch pyramid. Named levels P1..P6 carry fixed shapes and
/// per-scan counts; `level == 0` marks a custom (scaled-down) rung.
struct PatchSpec {
  int level = 0;
  Shape3 shape;
  int per_scan_count = 1;

  std::string name() const { return level > 0 ? "P" + std::to_string(level) : "custom-" + shape.str(); }

  static PatchSpec standard(int level) {
    static constexpr std::array<Shape3, 6> shapes{Shape3{16, 16, 9},    Shape3{32, 32, 12},   Shape3{64, 64, 15},
                                                  Shape3{128, 128, 20}, Shape3{256, 256, 27}, Shape3{512, 512, 36}};
    static constexpr std::array<int, 6> counts{64, 32, 16, 8, 4, 1};
    require(level >= 1 && level <= 6, ErrorCode::InvalidArgument, "patch level must be 1..6");
    return {level, shapes[static_cast<std::size_t>(level - 1)], counts[static_cast<std::size_t>(level - 1)]};
  }

  static PatchSpec custom(Shape3 shape, int per_scan_count) {
    require(shape.voxels() > 0 && per_scan_count >= 1, ErrorCode::InvalidArgument, "invalid custom patch spec");
    return {0, shape, per_scan_count};
  }

  /// Parses "P1".."P6".
  static PatchSpec parse(const std::string& text) {
    if (text.size() == 2 && (text[0] == 'P' || text[0] == 'p') && text[1] >= '1' && text[1] <= '6')
      return standard(text[1] - '0');
    fail(ErrorCode::InvalidArgument, "unknown patch level '" + text + "'");
  }
};

inline constexpr Shape3 kStandardGrid{512, 512, 36};

struct Sample {
  Grid3<float> tensor;
  int label = 0;
  std::string source_id;
  int level = 0;
  std::array<std::size_t, 3> origin{0, 0, 0};
};

struct StandardizeParams {
  Shape3 target = kStandardGrid;
  float outside_hu = -1000.0f;
  float clip_low = -1000.0f;
  float clip_high = 400.0f;
};

/// Align-corners source coordinate for output index `o` of `out` samples over `in` samples.
inline double source_coord(std::size_t o, std::size_t in, std::size_t out) {
  if (out == 1) return (static_cast<double>(in) - 1.0) / 2.0;
  return static_cast<double>(o) * (static_cast<double>(in) - 1.0) / (static_cast<double>(out) - 1.0);
}

template <typename T>
Grid3<T> resample_trilinear(const Grid3<T>& in, Shape3 target) {
  const Shape3 s = in.shape();
  if (s == target) return in;
  Grid3<T> out(target);
  auto axis_taps = [](std::size_t n_in, std::size_t n_out) {
    std::vector<std::pair<std::size_t, double>> taps(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double x = source_coord(o, n_in, n_out);
      auto i0 = static_cast<std::size_t>(std::floor(x));
      if (i0 + 1 >= n_in) i0 = n_in >= 2 ? n_in - 2 : 0;
      taps[o] = {i0, n_in >= 2 ? x - static_cast<double>(i0) : 0.0};
    }
    return taps;
  };
  const auto tr = axis_taps(s.r, target.r), tc = axis_taps(s.c, target.c), ts = axis_taps(s.s, target.s);
  auto at = [&](std::size_t r, std::size_t c, std::size_t k) {
    return static_cast<double>(in(std::min(r, s.r - 1), std::min(c, s.c - 1), std::min(k, s.s - 1)));
  };
  for (std::size_t k = 0; k < target.s; ++k) {
    const auto [k0, wk] = ts[k];
    for (std::size_t c = 0; c < target.c; ++c) {
      const auto [c0, wc] = tc[c];
      for (std::size_t r = 0; r < target.r; ++r) {
        const auto [r0, wr] = tr[r];
        double acc = 0.0;
        for (int dk = 0; dk < 2; ++dk)
          for (int dc = 0; dc < 2; ++dc)
            for (int dr = 0; dr < 2; ++dr) {
              const double w = (dr ? wr : 1 - wr) * (dc ? wc : 1 - wc) * (dk ? wk : 1 - wk);
              if (w != 0.0) acc += w * at(r0 + static_cast<std::size_t>(dr), c0 + static_cast<std::size_t>(dc),
                                          k0 + static_cast<std::size_t>(dk));
            }
        out(r, c, k) = static_cast<T>(acc);
      }
    }
  }
  return out;
}

/// Nearest-neighbour resampling on the same align-corners grid as the volume.
inline Mask resample_mask(const Mask& mask, Shape3 target) {
  const Shape3 s = mask.shape();
  if (s == target) return mask;
  Mask out(target, mask.source_id);
  for (std::size_t k = 0; k < target.s; ++k) {
    const auto sk = static_cast<std::size_t>(std::lround(source_coord(k, s.s, target.s)));
    for (std::size_t c = 0; c < target.c; ++c) {
      const auto sc = static_cast<std::size_t>(std::lround(source_coord(c, s.c, target.c)));
      for (std::size_t r = 0; r < target.r; ++r) {
        const auto sr = static_cast<std::size_t>(std::lround(source_coord(r, s.r, target.r)));
        out.bits(r, c, k) = mask.bits(sr, sc, sk);
      }
    }
  }
  return out;
}

/// Masks out non-lung voxels, clips HU, resamples to the standard grid and maps
/// [clip_low, clip_high] linearly onto [0, 1].
inline Volume standardize_volume(const Volume& volume, const Mask& mask, const StandardizeParams& p = {}) {
  require(volume.shape() == mask.shape(), ErrorCode::ShapeMismatch,
          "mask " + mask.shape().str() + " not aligned with volume " + volume.shape().str());
  Grid3<float> clipped(volume.shape());
  for (std::size_t i = 0; i < clipped.size(); ++i) {
    const float hu = mask.bits[i] ? volume.voxels[i] : p.outside_hu;
    clipped[i] = std::clamp(hu, p.clip_low, p.clip_high);
  }
  Grid3<float> resampled = resample_trilinear(clipped, p.target);
  const float span = p.clip_high - p.clip_low;
  for (float& v : resampled.data()) v = std::clamp((v - p.clip_low) / span, 0.0f, 1.0f);
  const Spacing sp{volume.spacing.r * (static_cast<double>(volume.shape().r) / static_cast<double>(p.target.r)),
                   volume.spacing.c * (static_cast<double>(volume.shape().c) / static_cast<double>(p.target.c)),
                   volume.spacing.s * (static_cast<double>(volume.shape().s) / static_cast<double>(p.target.s))};
  return Volume{std::move(resampled), sp, volume.source_id};
}

struct BoundingBox {
  std::size_t r0, r1, c0, c1;  // inclusive in-plane extent
};

inline std::optional<BoundingBox> inplane_bbox(const Mask& mask) {
  const Shape3 s = mask.shape();
  BoundingBox b{s.r, 0, s.c, 0};
  bool any = false;
  for (std::size_t k = 0; k < s.s; ++k)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t r = 0; r < s.r; ++r)
        if (mask.bits(r, c, k)) {
          any = true;
          b.r0 = std::min(b.r0, r);
          b.r1 = std::max(b.r1, r);
          b.c0 = std::min(b.c0, c);
          b.c1 = std::max(b.c1, c);
        }
  if (!any) return std::nullopt;
  return b;
}

inline double overlap_1d(std::size_t start, std::size_t len, std::size_t lo, std::size_t hi) {
  const std::size_t a = std::max(start, lo), b = std::min(start + len, hi + 1);
  return b > a ? static_cast<double>(b - a) : 0.0;
}

/// Draws patch origins. In-plane origins are uniform over windows covering at
/// least `min_overlap` of their area with the mask bounding box (falling back to
/// the best-covering windows when none qualify); slice origins are uniform.
/// Returned origins are sorted.
inline std::vector<std::array<std::size_t, 3>> draw_origins(Shape3 grid, const BoundingBox& box, const PatchSpec& spec,
                                                            std::uint64_t seed, double min_overlap = 0.5) {
  const Shape3 p = spec.shape;
  require(p.r <= grid.r && p.c <= grid.c && p.s <= grid.s, ErrorCode::ShapeMismatch,
          "patch " + p.str() + " larger than grid " + grid.str());
  const std::size_t nr = grid.r - p.r + 1, nc = grid.c - p.c + 1;
  std::vector<std::uint32_t> candidates;
  double best = -1.0;
  std::vector<std::uint32_t> best_set;
  const double area = static_cast<double>(p.r * p.c);
  for (std::size_t c = 0; c < nc; ++c) {
    const double oc = overlap_1d(c, p.c, box.c0, box.c1);
    for (std::size_t r = 0; r < nr; ++r) {
      const double frac = overlap_1d(r, p.r, box.r0, box.r1) * oc / area;
      const auto id = static_cast<std::uint32_t>(r + nr * c);
      if (frac >= min_overlap) candidates.push_back(id);
      if (frac > best) {
        best = frac;
        best_set.assign(1, id);
      } else if (frac == best) {
        best_set.push_back(id);
      }
    }
  }
  if (candidates.empty()) candidates = std::move(best_set);

  Rng rng(seed);
  const auto count = static_cast<std::size_t>(spec.per_scan_count);
  std::vector<std::uint32_t> chosen;
  if (candidates.size() >= count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
      std::swap(candidates[i], candidates[pick(rng)]);
    }
    chosen.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    for (std::size_t i = 0; i < count; ++i) chosen.push_back(candidates[pick(rng)]);
  }
  std::uniform_int_distribution<std::size_t> slice(0, grid.s - p.s);
  std::vector<std::array<std::size_t, 3>> origins;
  for (auto id : chosen) origins.push_back({id % nr, id / nr, slice(rng)});
  std::sort(origins.begin(), origins.end());
  return origins;
}

inline Grid3<float> crop(const Grid3<float>& v, std::array<std::size_t, 3> origin, Shape3 size) {
  Grid3<float> out(size);
  for (std::size_t k = 0; k < size.s; ++k)
    for (std::size_t c = 0; c < size.c; ++c) {
      const float* src = &v(origin[0], origin[1] + c, origin[2] + k);
      std::copy(src, src + size.r, &out(0, c, k));
    }
  return out;
}

/// Extracts exactly spec.per_scan_count patches from a standardized volume.
inline std::vector<Sample> extract_patches(const Volume& volume, const Mask& mask, const PatchSpec& spec,
                                           std::uint64_t seed, int label = 0, double min_overlap = 0.5) {
  require(volume.shape() == mask.shape(), ErrorCode::ShapeMismatch, "mask not aligned with standardized volume");
  const auto box = inplane_bbox(mask);
  if (!box) fail(ErrorCode::NoLungRegion, "empty lung mask for '" + volume.source_id + "'");
  const auto origins = draw_origins(volume.shape(), *box, spec, seed, min_overlap);
  std::vector<Sample> out;
  out.reserve(origins.size());
  for (const auto& o : origins)
    out.push_back(Sample{crop(volume.voxels, o, spec.shape), label, volume.source_id, spec.level, o});
  return out;
}

// ---------------------------------------------------------------------------
// Pack files: "CTPK", u32 version, u32 level, u64 count, u32 r, c, s,
// count * r*c*s float32 tensors, then count label bytes. All little-endian.

struct PackHeader {
  int level = 0;
  std::uint64_t count = 0;
  Shape3 shape;
};

inline Bytes encode_pack(const std::vector<Sample>& samples, const PatchSpec& spec) {
  ByteWriter w;
  w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("CTPK"), 4));
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.level));
  w.put<std::uint64_t>(samples.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.shape.r));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.shape.c));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.shape.s));
  for (const auto& s : samples) {
    require(s.tensor.shape() == spec.shape, ErrorCode::ShapeMismatch, "sample shape differs from pack shape");
    w.put_array(std::span<const float>(s.tensor.data()));
  }
  for (const auto& s : samples) {
    require(s.label >= 0 && s.label < 256, ErrorCode::LabelOutOfRange, "label does not fit a byte");
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.label));
  }
  return w.take();
}

inline std::vector<Sample> decode_pack(std::span<const std::uint8_t> bytes, PackHeader* header_out = nullptr) {
  ByteReader r(bytes, ErrorCode::DataLengthMismatch);
  std::array<std::uint8_t, 4> magic{};
  r.get_array(std::span<std::uint8_t>(magic));
  if (std::string(magic.begin(), magic.end()) != "CTPK") fail(ErrorCode::BadMagic, "not a patch pack");
  if (r.get<std::uint32_t>() != 1) fail(ErrorCode::BadMagic, "unsupported pack version");
  PackHeader h;
  h.level = static_cast<int>(r.get<std::uint32_t>());
  h.count = r.get<std::uint64_t>();
  h.shape.r = r.get<std::uint32_t>();
  h.shape.c = r.get<std::uint32_t>();
  h.shape.s = r.get<std::uint32_t>();
  const std::size_t per = h.shape.voxels();
  if (per == 0 || h.count > r.remaining() / (per * sizeof(float) + 1))
    fail(ErrorCode::DataLengthMismatch, "pack header count does not match payload");
  std::vector<Sample> out(h.count);
  for (auto& s : out) {
    std::vector<float> data(per);
    r.get_array(std::span<float>(data));
    s.tensor = Grid3<float>(h.shape, std::move(data));
    s.level = h.level;
  }
  for (auto& s : out) s.label = r.get<std::uint8_t>();
  if (header_out) *header_out = h;
  return out;
}

inline std::string index_csv(const std::vector<Sample>& samples) {
  std::ostringstream os;
  os << "source_id,origin_r,origin_c,origin_s,label\n";
  for (const auto& s : samples)
    os << s.source_id << ',' << s.origin[0] << ',' << s.origin[1] << ',' << s.origin[2] << ',' << s.label << '\n';
  return os.str();
}

/// Restores source ids and origins from an index CSV written by index_csv.
inline void apply_index_csv(std::vector<Sample>& samples, const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  std::size_t i = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    require(i < samples.size(), ErrorCode::DataLengthMismatch, "index CSV has more rows than the pack");
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ls, field, ',')) f.push_back(field);
    require(f.size() == 5, ErrorCode::DataLengthMismatch, "bad index CSV row: " + line);
    samples[i].source_id = f[0];
    samples[i].origin = {std::stoul(f[1]), std::stoul(f[2]), std::stoul(f[3])};
    require(std::stoi(f[4]) == samples[i].label, ErrorCode::DataLengthMismatch, "index label differs from pack");
    ++i;
  }
  require(i == samples.size(), ErrorCode::DataLengthMismatch, "index CSV has fewer rows than the pack");
}

}  // namespace ctscreen::patch
