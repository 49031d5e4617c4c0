#pragma once

// Phantom scan datasets on disk for command-level tests.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ctscreen/io_util.hpp"
#include "ctscreen/nifti_io.hpp"
#include "ctscreen/phantom.hpp"

namespace fixtures {

namespace fs = std::filesystem;
using namespace ctscreen;

inline void write_scan(const fs::path& path, const Volume& v) {
  Grid3<std::int16_t> raw(v.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<std::int16_t>(std::lround(v.voxels[i]) + 1024);
  nifti::NiftiHeader h = nifti::make_header(v.shape(), nifti::Datatype::Int16, {0.8, 0.8, 8.0});
  h.scl_slope = 1.0f;
  h.scl_inter = -1024.0f;
  write_file_atomic(path, gzip(nifti::encode_values(raw, h)));
}

inline phantom::ChestSpec scan_spec(Shape3 shape, const std::string& label, std::uint64_t seed, const std::string& id) {
  phantom::ChestSpec s;
  s.shape = shape;
  s.seed = seed;
  s.source_id = id;
  s.noise_sigma = 10.0f;
  if (label != "NOR") {
    // blobs stay inside the lung field
    s.ggo_blobs = label == "MiNCP" ? 4 : 8;
    s.ggo_radius_fraction = 0.05;
  }
  return s;
}

struct Dataset {
  fs::path manifest;
  std::vector<fs::path> scans;
  std::vector<std::string> labels;
};

/// `labels[i]` names scan i; files are scan_0000.nii.gz, ... plus manifest.csv.
inline Dataset write_dataset(const fs::path& dir, const std::vector<std::string>& labels, Shape3 shape,
                             std::uint64_t seed) {
  fs::create_directories(dir);
  Dataset d;
  d.labels = labels;
  std::string csv;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scan_%04zu", i);
    const fs::path p = dir / (std::string(id) + ".nii.gz");
    write_scan(p, phantom::make_chest(scan_spec(shape, labels[i], seed * 1000 + i, id)).volume);
    d.scans.push_back(p);
    csv += p.filename().string() + "," + labels[i] + "\n";
  }
  d.manifest = dir / "manifest.csv";
  write_text_atomic(d.manifest, csv);
  return d;
}

/// Alternating NOR / MiNCP labels.
inline std::vector<std::string> binary_labels(std::size_t n) {
  std::vector<std::string> l;
  for (std::size_t i = 0; i < n; ++i) l.push_back(i % 2 ? "MiNCP" : "NOR");
  return l;
}

inline std::string slurp(const fs::path& p) {
  const Bytes b = read_file(p);
  return std::string(b.begin(), b.end());
}

}  // namespace fixtures
