#pragma once

// segment / patch / train / eval / predict. Each command returns a process exit
// code: 0 when every item succeeded, 1 when some item failed. Fatal errors throw.

#include <atomic>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ctscreen/cli/config.hpp"
#include "ctscreen/cli/manifest.hpp"
#include "ctscreen/metrics.hpp"
#include "ctscreen/nifti_io.hpp"
#include "ctscreen/nn/checkpoint.hpp"
#include "ctscreen/patch_sampler.hpp"
#include "ctscreen/segmentation.hpp"
#include "ctscreen/train.hpp"

namespace ctscreen::cli {

namespace fs = std::filesystem;

struct Options {
  RunConfig cfg;
  fs::path out;
  unsigned jobs = 1;
  bool deterministic = false;
  std::ostream* log = &std::cout;
  std::ostream* err = &std::cerr;

  unsigned workers() const { return deterministic ? 1u : std::max(1u, jobs); }
};

/// Runs fn(0..n-1) on up to `jobs` threads. fn must not throw.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min<std::size_t>(jobs, n); ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) fn(i);
    });
  for (auto& th : pool) th.join();
}

inline fs::path mask_path(const fs::path& dir, const std::string& source_id) {
  return dir / (source_id + "_mask.nii.gz");
}

inline void write_effective_config(const Options& o) {
  fs::create_directories(o.out);
  write_text_atomic(o.out / "effective_config.txt", dump_config(o.cfg));
}

/// Prints per-item failures and returns the exit code.
inline int report_failures(const Options& o, const std::vector<std::string>& errors, const char* what) {
  std::size_t failed = 0;
  for (const auto& e : errors)
    if (!e.empty()) {
      *o.err << "error: " << e << "\n";
      ++failed;
    }
  if (failed) *o.err << failed << " of " << errors.size() << " " << what << " failed\n";
  return failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// scan preparation

struct Standardized {
  Volume volume;  // [0,1] on the standard grid
  Mask mask;      // lung mask on the same grid
};

inline Standardized standardize(const Volume& v, const Mask& lung, const RunConfig& cfg) {
  return {patch::standardize_volume(v, lung, cfg.standardize), patch::resample_mask(lung, cfg.standardize.target)};
}

inline std::vector<patch::Sample> scan_samples(const Standardized& st, const patch::PatchSpec& spec,
                                               const RunConfig& cfg, std::uint64_t seed, int label) {
  if (spec.shape == st.volume.shape() && spec.per_scan_count == 1)
    return {patch::Sample{st.volume.voxels, label, st.volume.source_id, spec.level, {0, 0, 0}}};
  return patch::extract_patches(st.volume, st.mask, spec, seed, label, cfg.min_overlap);
}

inline std::uint64_t scan_seed(const RunConfig& cfg, std::size_t scan) { return derive_seed(cfg.seed, {scan}); }

// ---------------------------------------------------------------------------
// segment

inline int cmd_segment(const Manifest& m, const Options& o) {
  o.cfg.validate();
  write_effective_config(o);
  const std::size_t n = m.rows.size();
  std::vector<std::string> errors(n);
  std::vector<std::pair<std::size_t, std::size_t>> stats(n);
  parallel_for(n, o.workers(), [&](std::size_t i) {
    const ManifestRow& row = m.rows[i];
    try {
      const nifti::NiftiImage img = nifti::read_image_file(row.path);
      const Mask lung = seg::segment_lung(nifti::to_volume(img, row.source_id), o.cfg.seg);
      stats[i] = {lung.count(), seg::label_components(lung, o.cfg.seg.connectivity).count()};
      write_file_atomic(mask_path(o.out, row.source_id), gzip(nifti::write_mask(lung, img.header)));
    } catch (const std::exception& e) {
      errors[i] = row.path.string() + ": " + e.what();
    }
  });
  std::string csv = "source_id,lung_voxels,components\n";
  for (std::size_t i = 0; i < n; ++i)
    if (errors[i].empty())
      csv += m.rows[i].source_id + "," + std::to_string(stats[i].first) + "," + std::to_string(stats[i].second) + "\n";
  write_text_atomic(o.out / "segment_summary.csv", csv);
  return report_failures(o, errors, "scans");
}

// ---------------------------------------------------------------------------
// patch

inline fs::path pack_path(const fs::path& dir, const patch::PatchSpec& spec) { return dir / (spec.name() + ".pack"); }
inline fs::path index_path(const fs::path& dir, const patch::PatchSpec& spec) {
  return dir / (spec.name() + "_index.csv");
}

inline int cmd_patch(const Manifest& m, const fs::path& masks, const std::vector<patch::PatchSpec>& levels,
                     const Options& o) {
  o.cfg.validate();
  for (const auto& row : m.rows)
    if (!fs::exists(mask_path(masks, row.source_id)))
      fail(ErrorCode::MissingMask, "no mask for " + row.source_id + " in " + masks.string());
  write_effective_config(o);
  const std::size_t n = m.rows.size();
  const std::vector<int> labels = m.labels(o.cfg.protocol);
  std::vector<std::string> errors(n);
  std::vector<std::vector<std::vector<patch::Sample>>> per_scan(levels.size(), std::vector<std::vector<patch::Sample>>(n));
  parallel_for(n, o.workers(), [&](std::size_t i) {
    const ManifestRow& row = m.rows[i];
    try {
      const Volume v = nifti::read_volume_file(row.path);
      const Mask lung = nifti::to_mask(nifti::read_image_file(mask_path(masks, row.source_id)), row.source_id);
      const Standardized st = standardize(v, lung, o.cfg);
      for (std::size_t l = 0; l < levels.size(); ++l)
        per_scan[l][i] = scan_samples(st, levels[l], o.cfg, scan_seed(o.cfg, i), labels[i]);
    } catch (const std::exception& e) {
      errors[i] = row.path.string() + ": " + e.what();
    }
  });
  for (std::size_t l = 0; l < levels.size(); ++l) {
    std::vector<patch::Sample> all;
    for (auto& s : per_scan[l]) all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    write_file_atomic(pack_path(o.out, levels[l]), patch::encode_pack(all, levels[l]));
    write_text_atomic(index_path(o.out, levels[l]), patch::index_csv(all));
    *o.log << levels[l].name() << ": " << all.size() << " patches\n";
  }
  return report_failures(o, errors, "scans");
}

// ---------------------------------------------------------------------------
// train

struct ScanSplit {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<int> folds;

  std::string to_csv(int val_fold) const {
    std::string out = "source_id,label,fold,role\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
      out += ids[i] + "," + std::to_string(labels[i]) + "," + std::to_string(folds[i]) + "," +
             (folds[i] == val_fold ? "val" : "train") + "\n";
    return out;
  }
};

/// Manifest fold overrides win; the rest are dealt by k-fold over scans.
inline std::vector<int> kfold_split_or_fixed(const std::vector<int>& labels, const std::vector<std::optional<int>>& fixed,
                                             const RunConfig& cfg) {
  std::vector<int> free_labels;
  std::vector<std::size_t> free_index;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!fixed[i]) {
      free_labels.push_back(labels[i]);
      free_index.push_back(i);
    }
  std::vector<int> folds(labels.size());
  if (!free_labels.empty()) {
    const auto f = metrics::kfold_split(free_labels, cfg.eval.folds, cfg.seed, cfg.eval.stratified);
    for (std::size_t j = 0; j < f.size(); ++j) folds[free_index[j]] = f[j];
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (fixed[i]) {
      if (*fixed[i] >= cfg.eval.folds)
        fail(ErrorCode::ManifestError, "fold " + std::to_string(*fixed[i]) + " >= eval.folds");
      folds[i] = *fixed[i];
    }
  return folds;
}

/// Train/val split by scan so no scan contributes patches to both sides.
inline std::vector<train::LevelData> split_levels(const std::vector<patch::PatchSpec>& specs,
                                                  std::vector<std::vector<patch::Sample>> data,
                                                  const ScanSplit& split, int val_fold) {
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < split.ids.size(); ++i) fold_of[split.ids[i]] = split.folds[i];
  std::vector<train::LevelData> out;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    train::LevelData d{specs[l], {}, {}};
    for (auto& s : data[l]) {
      const auto it = fold_of.find(s.source_id);
      if (it == fold_of.end()) fail(ErrorCode::ManifestError, "patch from unknown scan " + s.source_id);
      (it->second == val_fold ? d.val : d.train).push_back(std::move(s));
    }
    out.push_back(std::move(d));
  }
  return out;
}

struct TrainInputs {
  std::vector<std::vector<patch::Sample>> per_level;
  ScanSplit split;
};

inline TrainInputs load_packs(const fs::path& dir, const Options& o) {
  TrainInputs in;
  for (const auto& spec : o.cfg.levels) {
    const fs::path p = pack_path(dir, spec);
    if (!fs::exists(p)) fail(ErrorCode::IoError, "missing pack " + p.string());
    patch::PackHeader h;
    auto samples = patch::decode_pack(read_file(p), &h);
    if (h.shape != spec.shape) fail(ErrorCode::ShapeMismatch, p.string() + " holds " + h.shape.str() + " patches");
    const Bytes idx = read_file(index_path(dir, spec));
    patch::apply_index_csv(samples, std::string(idx.begin(), idx.end()));
    in.per_level.push_back(std::move(samples));
  }
  std::map<std::string, std::size_t> seen;
  for (const auto& s : in.per_level.front()) {
    if (seen.emplace(s.source_id, in.split.ids.size()).second) {
      in.split.ids.push_back(s.source_id);
      in.split.labels.push_back(s.label);
    }
  }
  in.split.folds = kfold_split_or_fixed(in.split.labels, std::vector<std::optional<int>>(in.split.ids.size()), o.cfg);
  return in;
}

/// Segments and patches every scan in memory; returns per-item errors.
inline TrainInputs prepare_from_manifest(const Manifest& m, const Options& o, std::vector<std::string>& errors) {
  const std::size_t n = m.rows.size();
  const std::vector<int> labels = m.labels(o.cfg.protocol);
  const auto& levels = o.cfg.levels;
  errors.assign(n, {});
  std::vector<std::vector<std::vector<patch::Sample>>> per_scan(levels.size(), std::vector<std::vector<patch::Sample>>(n));
  parallel_for(n, o.workers(), [&](std::size_t i) {
    try {
      const Volume v = nifti::read_volume_file(m.rows[i].path);
      const Standardized st = standardize(v, seg::segment_lung(v, o.cfg.seg), o.cfg);
      for (std::size_t l = 0; l < levels.size(); ++l)
        per_scan[l][i] = scan_samples(st, levels[l], o.cfg, scan_seed(o.cfg, i), labels[i]);
    } catch (const std::exception& e) {
      errors[i] = m.rows[i].path.string() + ": " + e.what();
    }
  });
  TrainInputs in;
  std::vector<std::optional<int>> fixed;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) continue;
    in.split.ids.push_back(m.rows[i].source_id);
    in.split.labels.push_back(labels[i]);
    fixed.push_back(m.rows[i].fold);
  }
  in.split.folds = kfold_split_or_fixed(in.split.labels, fixed, o.cfg);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    std::vector<patch::Sample> all;
    for (auto& s : per_scan[l]) all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    in.per_level.push_back(std::move(all));
  }
  return in;
}

inline fs::path level_checkpoint_path(const fs::path& dir, std::size_t i, const patch::PatchSpec& spec) {
  return dir / ("level" + std::to_string(i + 1) + "_" + spec.name() + ".ckpt");
}

inline std::string history_csv(const std::vector<patch::PatchSpec>& specs,
                               const std::vector<train::TrainHistory>& histories) {
  std::string out = "level,epoch,train_loss,train_accuracy,val_loss,val_accuracy,lr\n";
  for (std::size_t l = 0; l < histories.size(); ++l)
    for (const auto& e : histories[l].epochs)
      out += specs[l].name() + "," + std::to_string(e.epoch) + "," + detail::fmt(e.train_loss) + "," +
             detail::fmt(e.train_accuracy) + "," + detail::fmt(e.val_loss) + "," + detail::fmt(e.val_accuracy) + "," +
             detail::fmt(e.lr) + "\n";
  return out;
}

inline nn::ModelSpec base_model(const RunConfig& cfg) {
  const auto& mp = cfg.model;
  return nn::reference_spec(train::input_shape_of(cfg.levels.front().shape), class_count(cfg.protocol), mp.blocks,
                            mp.base_channels, mp.dense_units, mp.dropout);
}

inline int train_on(TrainInputs in, const Options& o, int item_status) {
  const RunConfig& cfg = o.cfg;
  write_text_atomic(o.out / "split.csv", in.split.to_csv(cfg.eval.val_fold));
  auto levels = split_levels(cfg.levels, std::move(in.per_level), in.split, cfg.eval.val_fold);
  train::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  augment::AugmentPolicy policy = cfg.policy;
  policy.seed = derive_seed(cfg.seed, {0x617567ULL});

  std::ostream& log = *o.log;
  const auto result = train::progressive_fit<float>(
      base_model(cfg), levels, tc, cfg.augment ? &policy : nullptr, [&](std::size_t l, const train::EpochRecord& e) {
        std::ostringstream line;
        line << std::fixed << std::setprecision(4) << cfg.levels[l].name() << " epoch " << e.epoch << " loss "
             << e.train_loss << " acc " << e.train_accuracy << " val_loss " << e.val_loss << " val_acc "
             << e.val_accuracy << " lr " << std::setprecision(6) << e.lr << "\n";
        log << line.str() << std::flush;
      });
  for (std::size_t l = 0; l < result.levels.size(); ++l)
    nn::save_checkpoint(level_checkpoint_path(o.out, l, cfg.levels[l]), result.levels[l].spec,
                        result.levels[l].weights);
  nn::save_checkpoint(o.out / "final.ckpt", result.final_model().spec, result.final_model().weights);
  write_text_atomic(o.out / "history.csv", history_csv(cfg.levels, result.histories));
  return item_status;
}

inline int cmd_train_packs(const fs::path& packs, const Options& o) {
  o.cfg.validate();
  write_effective_config(o);
  return train_on(load_packs(packs, o), o, 0);
}

inline int cmd_train_manifest(const Manifest& m, const Options& o) {
  o.cfg.validate();
  write_effective_config(o);
  std::vector<std::string> errors;
  TrainInputs in = prepare_from_manifest(m, o, errors);
  const int status = report_failures(o, errors, "scans");
  return train_on(std::move(in), o, status);
}

// ---------------------------------------------------------------------------
// eval / predict

/// Patch shape the model consumes, and how many patches to average per scan.
inline patch::PatchSpec spec_for_model(const nn::ModelSpec& spec, const RunConfig& cfg) {
  const auto& in = spec.input_shape;
  if (in[0] != 1) fail(ErrorCode::IncompatibleSpec, "model expects " + std::to_string(in[0]) + " input channels");
  const Shape3 shape{in[3], in[2], in[1]};
  for (const auto& l : cfg.levels)
    if (l.shape == shape) return l;
  for (int l = 1; l <= 6; ++l)
    if (patch::PatchSpec::standard(l).shape == shape) return patch::PatchSpec::standard(l);
  return patch::PatchSpec::custom(shape, 1);
}

/// Mean class probabilities over the scan's patches.
inline std::vector<double> scan_probabilities(const nn::Checkpoint<float>& ck, const Volume& v, const RunConfig& cfg,
                                              std::uint64_t seed) {
  const Standardized st = standardize(v, seg::segment_lung(v, cfg.seg), cfg);
  const auto samples = scan_samples(st, spec_for_model(ck.spec, cfg), cfg, seed, 0);
  const std::size_t k = ck.spec.class_count;
  const auto probs = train::predict_proba(ck.spec, ck.weights, samples, cfg.train.batch_size);
  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t c = 0; c < k; ++c) mean[c] += probs[i * k + c] / static_cast<double>(samples.size());
  return mean;
}

inline nn::Checkpoint<float> load_model(const fs::path& path) {
  try {
    return nn::load_checkpoint<float>(path);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IoError || e.code() == ErrorCode::BadCheckpoint) throw;
    fail(ErrorCode::BadCheckpoint, path.string() + ": " + e.what());
  }
}

struct FoldMetrics {
  std::vector<std::pair<std::string, double>> values;
  metrics::ConfusionMatrix confusion;
  metrics::ClassificationReport report;
  std::vector<std::pair<int, metrics::RocCurve>> rocs;  // (positive class, curve)
};

inline FoldMetrics fold_metrics(const std::vector<double>& probs, const std::vector<int>& labels, std::size_t k,
                                const std::vector<std::string>& names) {
  FoldMetrics f;
  std::vector<int> pred;
  for (std::size_t i = 0; i < labels.size(); ++i) pred.push_back(static_cast<int>(train::argmax_row(&probs[i * k], k)));
  f.confusion = metrics::confusion_matrix(pred, labels, k);
  f.report = metrics::precision_recall_f1(f.confusion);
  double auc = 0.0;
  if (k == 2) {
    std::vector<double> s;
    for (std::size_t i = 0; i < labels.size(); ++i) s.push_back(probs[i * 2 + 1]);
    f.rocs.emplace_back(1, metrics::roc_auc(s, labels));
    auc = f.rocs.back().second.auc;
  } else {
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> s;
      std::vector<int> y;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        s.push_back(probs[i * k + c]);
        y.push_back(labels[i] == static_cast<int>(c) ? 1 : 0);
      }
      try {
        f.rocs.emplace_back(static_cast<int>(c), metrics::roc_auc(s, y));
      } catch (const Error& e) {
        fail(ErrorCode::MissingClass, "class " + names[c] + " absent from fold: " + e.what());
      }
      auc += f.rocs.back().second.auc / static_cast<double>(k);
    }
  }
  f.values.emplace_back("accuracy", f.report.accuracy);
  f.values.emplace_back("auc", auc);
  f.values.emplace_back("weighted_recall", f.report.weighted_recall);
  f.values.emplace_back("weighted_precision", f.report.weighted_precision);
  f.values.emplace_back("weighted_f1", f.report.weighted_f1);
  for (std::size_t c = 0; c < k; ++c) {
    f.values.emplace_back("recall_" + names[c], f.report.per_class[c].recall);
    f.values.emplace_back("precision_" + names[c], f.report.per_class[c].precision);
    f.values.emplace_back("f1_" + names[c], f.report.per_class[c].f1);
  }
  return f;
}

inline std::string confusion_text(const metrics::ConfusionMatrix& m, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << std::setw(12) << "pred\\actual";
  for (const auto& n : names) os << std::setw(8) << n;
  os << "\n";
  for (std::size_t p = 0; p < m.k; ++p) {
    os << std::setw(12) << names[p];
    for (std::size_t a = 0; a < m.k; ++a) os << std::setw(8) << m.at(p, a);
    os << "\n";
  }
  return os.str();
}

inline int cmd_eval(const fs::path& checkpoint, const Manifest& m, const Options& o) {
  const RunConfig& cfg = o.cfg;
  cfg.validate();
  const auto ck = load_model(checkpoint);
  const std::size_t k = ck.spec.class_count;
  if (k != class_count(cfg.protocol))
    fail(ErrorCode::ProtocolMismatch, "checkpoint has " + std::to_string(k) + " classes, protocol needs " +
                                          std::to_string(class_count(cfg.protocol)));
  write_effective_config(o);
  const auto names = class_names(k);
  const std::size_t n = m.rows.size();
  const std::vector<int> all_labels = m.labels(cfg.protocol);
  std::vector<std::string> errors(n);
  std::vector<std::vector<double>> scan_probs(n);
  parallel_for(n, o.workers(), [&](std::size_t i) {
    try {
      scan_probs[i] = scan_probabilities(ck, nifti::read_volume_file(m.rows[i].path), cfg, scan_seed(cfg, i));
    } catch (const std::exception& e) {
      errors[i] = m.rows[i].path.string() + ": " + e.what();
    }
  });
  const int status = report_failures(o, errors, "scans");

  std::vector<std::size_t> ok;
  std::vector<int> labels;
  std::vector<std::optional<int>> fixed;
  for (std::size_t i = 0; i < n; ++i)
    if (errors[i].empty()) {
      ok.push_back(i);
      labels.push_back(all_labels[i]);
      fixed.push_back(m.rows[i].fold);
    }
  const std::vector<int> folds = kfold_split_or_fixed(labels, fixed, cfg);

  std::string pred_csv = "source_id,label,fold";
  for (const auto& nm : names) pred_csv += ",p_" + nm;
  pred_csv += "\n";
  for (std::size_t j = 0; j < ok.size(); ++j) {
    pred_csv += m.rows[ok[j]].source_id + "," + names[static_cast<std::size_t>(labels[j])] + "," +
                std::to_string(folds[j] + 1);
    for (double p : scan_probs[ok[j]]) pred_csv += "," + detail::fmt(p);
    pred_csv += "\n";
  }
  write_text_atomic(o.out / "predictions.csv", pred_csv);

  std::vector<std::string> metric_names;
  std::vector<std::vector<double>> metric_values;
  std::ostringstream summary;
  metrics::ConfusionMatrix pooled(k);
  for (int f = 0; f < cfg.eval.folds; ++f) {
    std::vector<double> probs;
    std::vector<int> y;
    for (std::size_t j = 0; j < ok.size(); ++j)
      if (folds[j] == f) {
        probs.insert(probs.end(), scan_probs[ok[j]].begin(), scan_probs[ok[j]].end());
        y.push_back(labels[j]);
      }
    if (y.empty()) fail(ErrorCode::TooFewSamples, "fold " + std::to_string(f + 1) + " is empty");
    const FoldMetrics fm = fold_metrics(probs, y, k, names);
    const std::string tag = "fold" + std::to_string(f + 1);

    std::string report = "metric,value\n";
    for (const auto& [name, v] : fm.values) report += name + "," + detail::fmt(v) + "\n";
    write_text_atomic(o.out / (tag + "_report.csv"), report);
    std::string roc = "class,threshold,fpr,tpr\n";
    for (const auto& [c, curve] : fm.rocs)
      for (const auto& p : curve.points)
        roc += names[static_cast<std::size_t>(c)] + "," + detail::fmt(p.threshold) + "," + detail::fmt(p.fpr) + "," +
               detail::fmt(p.tpr) + "\n";
    write_text_atomic(o.out / (tag + "_roc.csv"), roc);

    if (metric_names.empty()) {
      for (const auto& [name, v] : fm.values) metric_names.push_back(name);
      metric_values.resize(metric_names.size());
    }
    for (std::size_t q = 0; q < fm.values.size(); ++q) metric_values[q].push_back(fm.values[q].second);
    for (std::size_t c = 0; c < pooled.counts.size(); ++c) pooled.counts[c] += fm.confusion.counts[c];
    summary << tag << " (" << y.size() << " scans)\n"
            << confusion_text(fm.confusion, names) << metrics::summary_table(fm.report, names) << "\n";
  }

  std::string agg = "metric,mean,std\n";
  std::ostringstream head;
  head << std::fixed << std::setprecision(3);
  for (std::size_t q = 0; q < metric_names.size(); ++q) {
    const auto ms = metrics::mean_std(metric_values[q]);
    agg += metric_names[q] + "," + detail::fmt(ms.mean) + "," + detail::fmt(ms.std) + "\n";
    if (metric_names[q] == "auc" || metric_names[q] == "accuracy")
      head << metric_names[q] << " " << ms.mean << " +- " << ms.std << "\n";
  }
  write_text_atomic(o.out / "aggregate.csv", agg);
  const auto pooled_rep = metrics::precision_recall_f1(pooled);
  summary << "all folds\n" << confusion_text(pooled, names) << metrics::summary_table(pooled_rep, names);
  write_text_atomic(o.out / "summary.txt", head.str() + "\n" + summary.str());
  *o.log << head.str();
  return status;
}

inline int cmd_predict(const fs::path& checkpoint, const fs::path& scan, const Options& o) {
  o.cfg.validate();
  const auto ck = load_model(checkpoint);
  const auto names = class_names(ck.spec.class_count);
  const auto probs = scan_probabilities(ck, nifti::read_volume_file(scan), o.cfg, scan_seed(o.cfg, 0));
  std::size_t best = 0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    *o.log << names[c] << "," << detail::fmt(probs[c]) << "\n";
    if (probs[c] > probs[best]) best = c;
  }
  *o.log << "label," << names[best] << "\n";
  return 0;
}

}  // namespace ctscreen::cli
