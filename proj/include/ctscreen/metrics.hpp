#pragma once

// Evaluation: confusion matrices (rows = predicted, columns = actual),
// per-class and support-weighted precision/recall/F1, ROC/AUC, stratified k-fold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctscreen/error.hpp"
#include "ctscreen/rng.hpp"

namespace ctscreen::metrics {

struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;  // counts[predicted * k + actual]

  explicit ConfusionMatrix(std::size_t classes = 0) : k(classes), counts(classes * classes, 0) {}

  std::uint64_t& at(std::size_t predicted, std::size_t actual) { return counts[predicted * k + actual]; }
  std::uint64_t at(std::size_t predicted, std::size_t actual) const { return counts[predicted * k + actual]; }

  std::uint64_t actual_total(std::size_t a) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k; ++p) s += at(p, a);
    return s;
  }
  std::uint64_t predicted_total(std::size_t p) const {
    std::uint64_t s = 0;
    for (std::size_t a = 0; a < k; ++a) s += at(p, a);
    return s;
  }
  std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

  /// Builds a matrix from rows of predicted-class counts.
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix m(rows.size());
    for (std::size_t p = 0; p < rows.size(); ++p) {
      require(rows[p].size() == rows.size(), ErrorCode::ShapeMismatch, "confusion matrix must be square");
      for (std::size_t a = 0; a < rows.size(); ++a) m.at(p, a) = rows[p][a];
    }
    return m;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& predicted, const std::vector<int>& actual,
                                        std::size_t k) {
  require(predicted.size() == actual.size(), ErrorCode::ShapeMismatch, "label lists differ in length");
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int p = predicted[i], a = actual[i];
    if (p < 0 || a < 0 || static_cast<std::size_t>(p) >= k || static_cast<std::size_t>(a) >= k)
      fail(ErrorCode::LabelOutOfRange, "label outside [0," + std::to_string(k) + ") at sample " + std::to_string(i));
    ++m.at(static_cast<std::size_t>(p), static_cast<std::size_t>(a));
  }
  return m;
}

struct ClassScores {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;  // actual count
  bool recall_undefined = false;
  bool precision_undefined = false;
};

struct ClassificationReport {
  std::vector<ClassScores> per_class;
  double weighted_recall = 0.0;
  double weighted_precision = 0.0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
};

/// Undefined ratios (zero denominator) are reported as 0 and flagged.
inline ClassificationReport precision_recall_f1(const ConfusionMatrix& m) {
  ClassificationReport rep;
  rep.per_class.resize(m.k);
  const auto total = static_cast<double>(m.total());
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < m.k; ++c) {
    ClassScores& s = rep.per_class[c];
    const std::uint64_t tp = m.at(c, c);
    correct += tp;
    s.support = m.actual_total(c);
    const std::uint64_t pred = m.predicted_total(c);
    s.recall_undefined = s.support == 0;
    s.precision_undefined = pred == 0;
    s.recall = s.recall_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(s.support);
    s.precision = s.precision_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(pred);
    s.f1 = (s.recall + s.precision) > 0 ? 2.0 * s.recall * s.precision / (s.recall + s.precision) : 0.0;
    if (total > 0) {
      const double w = static_cast<double>(s.support) / total;
      rep.weighted_recall += w * s.recall;
      rep.weighted_precision += w * s.precision;
      rep.weighted_f1 += w * s.f1;
    }
  }
  rep.accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
  return rep;
}

struct RocPoint {
  double threshold;  // samples with score >= threshold are predicted positive
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Sweeps thresholds over the unique scores (plus +inf / -inf end points);
/// AUC by the trapezoidal rule. `labels` are 1 for positive, 0 otherwise.
inline RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), ErrorCode::ShapeMismatch, "scores and labels differ in length");
  std::uint64_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) fail(ErrorCode::SingleClassInput, "ROC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  constexpr double inf = std::numeric_limits<double>::infinity();
  roc.points.push_back({inf, 0.0, 0.0});
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    roc.points.push_back({thr, static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
  }
  roc.points.push_back({-inf, 1.0, 1.0});
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    roc.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return roc;
}

/// Probability rows are sample-major: probs[i * k + c].
inline std::vector<double> ovr_aucs(const std::vector<double>& probs, const std::vector<int>& labels, std::size_t k) {
  require(k >= 2, ErrorCode::InvalidArgument, "need at least two classes");
  require(probs.size() == labels.size() * k, ErrorCode::ShapeMismatch, "probability matrix shape");
  std::vector<double> aucs(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> s(labels.size());
    std::vector<int> y(labels.size());
    bool present = false, absent = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = probs[i * k + c];
      y[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
      (y[i] ? present : absent) = true;
    }
    if (!present || !absent) fail(ErrorCode::MissingClass, "class " + std::to_string(c) + " absent or universal");
    aucs[c] = roc_auc(s, y).auc;
  }
  return aucs;
}

inline double macro_auc_ovr(const std::vector<double>& probs, const std::vector<int>& labels, std::size_t k) {
  const auto aucs = ovr_aucs(probs, labels, k);
  return std::accumulate(aucs.begin(), aucs.end(), 0.0) / static_cast<double>(k);
}

/// Stratified assignment: each class is shuffled and dealt round-robin, with the
/// starting fold rotated across classes so overall fold sizes stay balanced.
inline std::vector<int> kfold_split(const std::vector<int>& labels, int k, std::uint64_t seed,
                                    bool stratified = true) {
  require(k >= 2, ErrorCode::InvalidArgument, "k must be >= 2");
  if (labels.size() < static_cast<std::size_t>(k))
    fail(ErrorCode::TooFewSamples, "fewer samples than folds");
  std::vector<int> folds(labels.size(), -1);
  Rng rng(derive_seed(seed, {0x6b666f6c64ULL}));
  std::vector<std::vector<std::size_t>> groups;
  if (stratified) {
    int max_label = -1;
    for (int l : labels) {
      require(l >= 0, ErrorCode::LabelOutOfRange, "negative label");
      max_label = std::max(max_label, l);
    }
    groups.resize(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i) groups[static_cast<std::size_t>(labels[i])].push_back(i);
    for (std::size_t c = 0; c < groups.size(); ++c)
      if (!groups[c].empty() && groups[c].size() < static_cast<std::size_t>(k))
        fail(ErrorCode::TooFewSamples, "class " + std::to_string(c) + " has fewer than k samples");
  } else {
    groups.emplace_back(labels.size());
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }
  std::size_t offset = 0;
  for (auto& g : groups) {
    std::shuffle(g.begin(), g.end(), rng);
    for (std::size_t j = 0; j < g.size(); ++j) folds[g[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(k));
    offset = (offset + g.size()) % static_cast<std::size_t>(k);
  }
  return folds;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation (ddof = 0)
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return r;
}

/// Per-class and weighted recall/precision in the column layout of a summary table.
inline std::string summary_table(const ClassificationReport& rep, const std::vector<std::string>& names) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "class      recall%  precision%  f1%     support\n";
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
    const auto& s = rep.per_class[c];
    std::string name = c < names.size() ? names[c] : std::to_string(c);
    name.resize(10, ' ');
    os << name << ' ' << 100 * s.recall << "    " << 100 * s.precision << (s.precision_undefined ? "*" : "")
       << "      " << 100 * s.f1 << "   " << s.support << '\n';
  }
  os << "weighted   " << 100 * rep.weighted_recall << "    " << 100 * rep.weighted_precision << "      "
     << 100 * rep.weighted_f1 << '\n';
  return os.str();
}

}  // namespace ctscreen::metrics
