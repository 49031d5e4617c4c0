#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ctscreen/error.hpp"

namespace ctscreen::rebalance {

/// paper_formula: W_n = N_n / N (literal; favours the majority class).
/// inverse_frequency: W_n = N / (K * N_n) (favours minorities; the default).
enum class WeightMode { PaperFormula, InverseFrequency, Uniform };

inline WeightMode parse_weight_mode(const std::string& s) {
  if (s == "paper_formula") return WeightMode::PaperFormula;
  if (s == "inverse_frequency") return WeightMode::InverseFrequency;
  if (s == "uniform") return WeightMode::Uniform;
  fail(ErrorCode::InvalidArgument, "unknown weight mode '" + s + "'");
}

inline std::string to_string(WeightMode m) {
  switch (m) {
    case WeightMode::PaperFormula: return "paper_formula";
    case WeightMode::InverseFrequency: return "inverse_frequency";
    case WeightMode::Uniform: return "uniform";
  }
  return "?";
}

struct ClassWeights {
  std::vector<double> weights;
  WeightMode mode = WeightMode::Uniform;
};

inline ClassWeights class_weights(const std::vector<std::uint64_t>& counts, WeightMode mode) {
  require(!counts.empty(), ErrorCode::ZeroClassCount, "no classes");
  for (std::size_t n = 0; n < counts.size(); ++n)
    require(counts[n] >= 1, ErrorCode::ZeroClassCount, "class " + std::to_string(n) + " has no samples");
  const auto total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
  const auto k = static_cast<double>(counts.size());
  ClassWeights out{std::vector<double>(counts.size(), 1.0), mode};
  for (std::size_t n = 0; n < counts.size(); ++n) {
    const auto nn = static_cast<double>(counts[n]);
    switch (mode) {
      case WeightMode::PaperFormula: out.weights[n] = nn / total; break;
      case WeightMode::InverseFrequency: out.weights[n] = total / (k * nn); break;
      case WeightMode::Uniform: break;
    }
  }
  return out;
}

}  // namespace ctscreen::rebalance
