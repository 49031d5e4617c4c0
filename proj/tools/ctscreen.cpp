#include <CLI11.hpp>

#include <iostream>

#include "ctscreen/cli/commands.hpp"

using namespace ctscreen;
using namespace ctscreen::cli;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned jobs = 1;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config, "config file (section.key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override one config entry, e.g. train.lr0=0.001");
  cmd->add_option("--seed", c.seed, "global seed (overrides run.seed)");
  cmd->add_option("--jobs", c.jobs, "worker threads for per-scan work")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", c.deterministic, "single worker, byte-identical artifacts");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
}

Options make_options(const Common& c) {
  Options o;
  if (!c.config.empty()) {
    const Bytes b = read_file(c.config);
    o.cfg = parse_config(std::string(b.begin(), b.end()));
  }
  std::string extra;
  for (const auto& s : c.sets) extra += s + "\n";
  o.cfg = parse_config(extra, o.cfg);
  if (c.seed) o.cfg.seed = *c.seed;
  o.out = c.out;
  o.jobs = c.jobs;
  o.deterministic = c.deterministic;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctscreen: chest CT screening pipeline"};
  app.require_subcommand(1);

  Common seg_c, patch_c, train_c, eval_c, pred_c;
  std::string manifest, masks, packs, checkpoint, scan;
  std::vector<std::string> levels;
  std::optional<int> folds;
  std::optional<std::string> protocol;

  auto* seg_cmd = app.add_subcommand("segment", "lung masks for every scan in a manifest");
  add_common(seg_cmd, seg_c, true);
  seg_cmd->add_option("--manifest", manifest, "path,label[,fold] CSV")->required()->check(CLI::ExistingFile);

  auto* patch_cmd = app.add_subcommand("patch", "patch packs from scans and their masks");
  add_common(patch_cmd, patch_c, true);
  patch_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  patch_cmd->add_option("--masks", masks, "directory written by segment")->required();
  patch_cmd->add_option("--level", levels, "P1..P6 or RxCxS:count (default: patch.levels)");

  auto* train_cmd = app.add_subcommand("train", "progressive training over patch.levels");
  add_common(train_cmd, train_c, true);
  auto* packs_opt = train_cmd->add_option("--packs", packs, "directory written by patch");
  auto* man_opt = train_cmd->add_option("--manifest", manifest)->check(CLI::ExistingFile);
  packs_opt->excludes(man_opt);

  auto* eval_cmd = app.add_subcommand("eval", "k-fold evaluation of a checkpoint");
  add_common(eval_cmd, eval_c, true);
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--folds", folds, "number of folds (overrides eval.folds)");
  eval_cmd->add_option("--protocol", protocol, "binary or multiclass (overrides run.protocol)");

  auto* pred_cmd = app.add_subcommand("predict", "class probabilities for one scan");
  add_common(pred_cmd, pred_c, false);
  pred_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("scan", scan, "NIfTI scan")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*seg_cmd) return cmd_segment(load_manifest(manifest), make_options(seg_c));
    if (*patch_cmd) {
      Options o = make_options(patch_c);
      std::vector<patch::PatchSpec> specs = o.cfg.levels;
      if (!levels.empty()) {
        specs.clear();
        for (const auto& l : levels) specs.push_back(detail::parse_level(l));
      }
      return cmd_patch(load_manifest(manifest), masks, specs, o);
    }
    if (*train_cmd) {
      const Options o = make_options(train_c);
      if (packs.empty() && manifest.empty()) fail(ErrorCode::ConfigError, "train needs --packs or --manifest");
      return packs.empty() ? cmd_train_manifest(load_manifest(manifest), o) : cmd_train_packs(packs, o);
    }
    if (*eval_cmd) {
      Options o = make_options(eval_c);
      std::string extra;
      if (folds) extra += "eval.folds = " + std::to_string(*folds) + "\n";
      if (protocol) extra += "run.protocol = " + *protocol + "\n";
      o.cfg = parse_config(extra, o.cfg);
      return cmd_eval(checkpoint, load_manifest(manifest), o);
    }
    if (*pred_cmd) return cmd_predict(checkpoint, scan, make_options(pred_c));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
