#pragma once

// Run configuration: flat "section.key = value" text, one entry per line,
// '#' starts a comment. Unset keys keep their defaults.

#include <charconv>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ctscreen/augment.hpp"
#include "ctscreen/error.hpp"
#include "ctscreen/patch_sampler.hpp"
#include "ctscreen/segmentation.hpp"
#include "ctscreen/train.hpp"

namespace ctscreen::cli {

enum class Protocol { Binary, Multiclass };

inline std::size_t class_count(Protocol p) { return p == Protocol::Binary ? 2 : 4; }

struct ModelParams {
  std::size_t blocks = 4;
  std::size_t base_channels = 16;
  std::size_t dense_units = 64;
  double dropout = 0.5;
};

struct EvalParams {
  int folds = 5;
  bool stratified = true;
  int val_fold = 0;  // fold held out for validation during training
};

struct RunConfig {
  Protocol protocol = Protocol::Binary;
  std::uint64_t seed = 0;
  seg::SegmentationParams seg;
  patch::StandardizeParams standardize;
  std::vector<patch::PatchSpec> levels{patch::PatchSpec::standard(4), patch::PatchSpec::standard(5),
                                       patch::PatchSpec::standard(6)};
  double min_overlap = 0.5;
  bool augment = true;
  augment::AugmentPolicy policy;
  train::TrainConfig train;
  ModelParams model;
  EvalParams eval;

  void validate() const {
    try {
      seg.validate();
      policy.validate();
      train.validate();
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, e.what());
    }
    require(!levels.empty(), ErrorCode::ConfigError, "patch.levels is empty");
    for (const auto& l : levels)
      for (std::size_t a = 0; a < 3; ++a)
        require(l.shape[a] <= standardize.target[a], ErrorCode::ConfigError,
                "patch level " + l.name() + " exceeds patch.grid");
    require(standardize.clip_low < standardize.clip_high, ErrorCode::ConfigError, "patch.clip_low >= clip_high");
    require(min_overlap >= 0.0 && min_overlap <= 1.0, ErrorCode::ConfigError, "patch.min_overlap outside [0,1]");
    require(model.blocks >= 1 && model.base_channels >= 1 && model.dense_units >= 1, ErrorCode::ConfigError,
            "model sizes must be >= 1");
    require(model.dropout >= 0.0 && model.dropout < 1.0, ErrorCode::ConfigError, "model.dropout outside [0,1)");
    require(eval.folds >= 2, ErrorCode::ConfigError, "eval.folds must be >= 2");
    require(eval.val_fold >= 0 && eval.val_fold < eval.folds, ErrorCode::ConfigError, "eval.val_fold out of range");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || p != end) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

template <typename T>
std::string fmt(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
  return std::string(buf, r.ptr);
}

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(parse_number<double>(item));
  return out;
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

inline Shape3 parse_shape(const std::string& s) {
  const auto parts = split(s, 'x');
  if (parts.size() != 3) throw std::invalid_argument("expected RxCxS, got '" + s + "'");
  return {parse_number<std::size_t>(parts[0]), parse_number<std::size_t>(parts[1]), parse_number<std::size_t>(parts[2])};
}

/// "P4" or "RxCxS:count".
inline patch::PatchSpec parse_level(const std::string& s) {
  if (s.size() == 2 && (s[0] == 'P' || s[0] == 'p')) return patch::PatchSpec::parse(s);
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("expected Pn or RxCxS:count, got '" + s + "'");
  return patch::PatchSpec::custom(parse_shape(s.substr(0, colon)), parse_number<int>(s.substr(colon + 1)));
}

inline std::string fmt_level(const patch::PatchSpec& p) {
  return p.level > 0 ? p.name() : p.shape.str() + ":" + std::to_string(p.per_scan_count);
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field number(std::string key, T& ref) {
  return {std::move(key), [&ref](const std::string& v) { ref = parse_number<T>(v); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) return fmt(ref);
            else return std::to_string(ref);
          }};
}

inline Field boolean(std::string key, bool& ref) {
  return {std::move(key), [&ref](const std::string& v) { ref = parse_bool(v); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

inline std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  f.push_back({"run.protocol",
               [&c](const std::string& v) {
                 if (v == "binary") c.protocol = Protocol::Binary;
                 else if (v == "multiclass") c.protocol = Protocol::Multiclass;
                 else throw std::invalid_argument("expected binary or multiclass");
               },
               [&c] { return std::string(c.protocol == Protocol::Binary ? "binary" : "multiclass"); }});
  f.push_back(number("run.seed", c.seed));

  f.push_back(number("seg.hu_low", c.seg.hu_low));
  f.push_back(number("seg.hu_high", c.seg.hu_high));
  f.push_back(number("seg.keep_k", c.seg.keep_k));
  f.push_back(number("seg.erode_radius", c.seg.erode_radius));
  f.push_back(number("seg.close_radius", c.seg.close_radius));
  f.push_back({"seg.connectivity",
               [&c](const std::string& v) {
                 const int n = parse_number<int>(v);
                 if (n != 6 && n != 26) throw std::invalid_argument("expected 6 or 26");
                 c.seg.connectivity = n == 6 ? seg::Connectivity::Six : seg::Connectivity::TwentySix;
               },
               [&c] { return std::to_string(static_cast<int>(c.seg.connectivity)); }});
  f.push_back({"seg.border_faces",
               [&c](const std::string& v) {
                 if (v == "inplane") c.seg.border_faces = seg::BorderFaces::InPlane;
                 else if (v == "all") c.seg.border_faces = seg::BorderFaces::All;
                 else throw std::invalid_argument("expected inplane or all");
               },
               [&c] { return std::string(c.seg.border_faces == seg::BorderFaces::InPlane ? "inplane" : "all"); }});

  f.push_back({"patch.grid", [&c](const std::string& v) { c.standardize.target = parse_shape(v); },
               [&c] { return c.standardize.target.str(); }});
  f.push_back(number("patch.clip_low", c.standardize.clip_low));
  f.push_back(number("patch.clip_high", c.standardize.clip_high));
  f.push_back(number("patch.outside_hu", c.standardize.outside_hu));
  f.push_back(number("patch.min_overlap", c.min_overlap));
  f.push_back({"patch.levels",
               [&c](const std::string& v) {
                 c.levels.clear();
                 for (const auto& item : split(v, ',')) c.levels.push_back(parse_level(item));
               },
               [&c] {
                 std::string out;
                 for (std::size_t i = 0; i < c.levels.size(); ++i) out += (i ? "," : "") + fmt_level(c.levels[i]);
                 return out;
               }});

  f.push_back(boolean("augment.enabled", c.augment));
  f.push_back({"augment.rotation_angles", [&c](const std::string& v) { c.policy.rotation_angles = parse_list(v); },
               [&c] { return fmt_list(c.policy.rotation_angles); }});
  f.push_back(number("augment.shift_fraction", c.policy.shift_fraction));
  f.push_back({"augment.gammas", [&c](const std::string& v) { c.policy.gammas = parse_list(v); },
               [&c] { return fmt_list(c.policy.gammas); }});
  f.push_back(number("augment.noise_sigma", c.policy.noise_sigma));
  f.push_back(number("augment.elastic_sigma", c.policy.elastic.sigma));
  f.push_back(number("augment.elastic_through_plane", c.policy.elastic.through_plane_scale));
  f.push_back({"augment.elastic_grid",
               [&c](const std::string& v) {
                 const auto s = parse_shape(v);
                 c.policy.elastic.grid = {s.r, s.c, s.s};
               },
               [&c] {
                 const auto& g = c.policy.elastic.grid;
                 return Shape3{g[0], g[1], g[2]}.str();
               }});

  f.push_back(number("train.lr0", c.train.lr0));
  f.push_back(number("train.beta1", c.train.beta1));
  f.push_back(number("train.beta2", c.train.beta2));
  f.push_back(number("train.epsilon", c.train.epsilon));
  f.push_back(boolean("train.amsgrad", c.train.amsgrad));
  f.push_back(number("train.decay_rate", c.train.decay_rate));
  f.push_back(number("train.max_epochs", c.train.max_epochs));
  f.push_back(number("train.patience", c.train.patience));
  f.push_back(number("train.batch_size", c.train.batch_size));
  f.push_back({"train.weight_mode",
               [&c](const std::string& v) { c.train.weight_mode = rebalance::parse_weight_mode(v); },
               [&c] { return rebalance::to_string(c.train.weight_mode); }});
  f.push_back({"train.monitor", [&c](const std::string& v) { c.train.monitor = train::parse_monitor(v); },
               [&c] { return train::to_string(c.train.monitor); }});
  f.push_back(boolean("train.restore_best", c.train.restore_best));

  f.push_back(number("model.blocks", c.model.blocks));
  f.push_back(number("model.base_channels", c.model.base_channels));
  f.push_back(number("model.dense_units", c.model.dense_units));
  f.push_back(number("model.dropout", c.model.dropout));

  f.push_back(number("eval.folds", c.eval.folds));
  f.push_back(boolean("eval.stratified", c.eval.stratified));
  f.push_back(number("eval.val_fold", c.eval.val_fold));
  return f;
}

}  // namespace detail

/// Applies the entries in `text` on top of `base`. Errors carry the line number.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  auto fs = detail::fields(base);
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) fail(ErrorCode::ConfigError, where + "expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq)), value = detail::trim(t.substr(eq + 1));
    auto it = std::find_if(fs.begin(), fs.end(), [&](const detail::Field& f) { return f.key == key; });
    if (it == fs.end()) fail(ErrorCode::ConfigError, where + "unknown key '" + key + "'");
    try {
      it->set(value);
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, where + "bad value for '" + key + "': " + e.what());
    } catch (const std::exception& e) {
      fail(ErrorCode::ConfigError, where + "bad value for '" + key + "': " + e.what());
    }
  }
  return base;
}

/// Every key with its resolved value; parse_config(dump_config(c)) reproduces c.
inline std::string dump_config(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  for (const auto& f : detail::fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

}  // namespace ctscreen::cli
