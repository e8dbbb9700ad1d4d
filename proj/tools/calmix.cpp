// Command-line front end for the calibration-aware mixup pipeline:
//   calmix categorize  phase-1 margin recording and high/low split
//   calmix train       phase-2 training with the configured strategy
//   calmix evaluate    ID/OOD calibration reports, optionally temperature-scaled
//   calmix matrix      8-method x seeds grid with mean/std aggregation
//
// Exit codes: 0 ok, 1 generic failure (including failed matrix cells),
// 2 invalid configuration, 3 missing category manifest, 4 checkpoint/config
// mismatch.
#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "calmix/model.hpp"
#include "calmix/pipeline.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInvalidConfig = 2;
constexpr int kExitMissingManifest = 3;
constexpr int kExitCheckpointMismatch = 4;

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::string> ablation;
  std::optional<double> label_smoothing;
  bool no_label_smoothing = false;
  std::optional<bool> temperature_scaling;
  std::optional<std::string> out_dir;
  std::string checkpoint;
  bool inline_categorize = false;
};

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_path, "Run config JSON path")
      ->required();
  cmd->add_option("--seed", opt.seed, "Seed override (default: first seed)");
  cmd->add_option("--strategy", opt.strategy,
                  "none|proposed|input_mixup|manifold_mixup");
  cmd->add_option("--ablation", opt.ablation,
                  "full|no_aum|no_saliency|no_similar|no_dissimilar");
  cmd->add_option("--label-smoothing", opt.label_smoothing,
                  "Smoothing mass sigma in (0,1)");
  cmd->add_flag("--no-label-smoothing", opt.no_label_smoothing,
                "Disable label smoothing regardless of the config");
  cmd->add_option("--temperature-scaling", opt.temperature_scaling,
                  "Fit a dev-set temperature during evaluation (true/false)");
  cmd->add_option("--out", opt.out_dir, "Output directory override");
}

calmix::RunConfig resolve_config(const CliOptions& opt) {
  calmix::RunConfig cfg = calmix::load_run_config(opt.config_path);
  if (opt.strategy)
    cfg.mixup.strategy = calmix::strategy_from_string(*opt.strategy);
  if (opt.ablation)
    cfg.mixup.ablation = calmix::ablation_from_string(*opt.ablation);
  if (opt.label_smoothing) cfg.training.label_smoothing = *opt.label_smoothing;
  if (opt.no_label_smoothing) cfg.training.label_smoothing.reset();
  if (opt.temperature_scaling)
    cfg.temperature_scaling = *opt.temperature_scaling;
  if (opt.out_dir) cfg.out_dir = *opt.out_dir;
  cfg.validate();
  return cfg;
}

std::uint64_t resolve_seed(const CliOptions& opt,
                           const calmix::RunConfig& cfg) {
  return opt.seed ? *opt.seed : cfg.seeds.front();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration-aware mixup training toolkit"};
  app.require_subcommand(1);

  CliOptions opt;
  CLI::App* categorize = app.add_subcommand(
      "categorize", "Phase-1 margin recording and high/low split");
  add_common_flags(categorize, opt);

  CLI::App* train =
      app.add_subcommand("train", "Phase-2 training with the chosen strategy");
  add_common_flags(train, opt);
  train->add_flag("--inline-categorize", opt.inline_categorize,
                  "Run the categorize phase inline when the manifest is absent");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Calibration reports on the ID and OOD test sets");
  add_common_flags(evaluate, opt);
  evaluate->add_option("--checkpoint", opt.checkpoint,
                       "Checkpoint path (default: <out>/model.ckpt)");

  CLI::App* matrix = app.add_subcommand(
      "matrix", "8-method grid over all configured seeds");
  add_common_flags(matrix, opt);

  CLI11_PARSE(app, argc, argv);

  try {
    const calmix::RunConfig cfg = resolve_config(opt);
    if (categorize->parsed()) {
      const std::uint64_t seed = resolve_seed(opt, cfg);
      const calmix::Categorization cat = calmix::run_categorize(cfg, seed);
      std::cout << "categorized " << cat.high.size() + cat.low.size()
                << " samples: " << cat.high.size() << " high, "
                << cat.low.size() << " low -> " << cfg.out_dir << "\n";
    } else if (train->parsed()) {
      const std::uint64_t seed = resolve_seed(opt, cfg);
      const auto stats = calmix::run_train(cfg, seed, opt.inline_categorize);
      std::cout << "trained " << stats.size() << " epochs (final loss "
                << stats.back().loss_combined << ") -> " << cfg.out_dir
                << "/model.ckpt\n";
    } else if (evaluate->parsed()) {
      const std::uint64_t seed = resolve_seed(opt, cfg);
      const calmix::EvalOutcome ev =
          calmix::run_evaluate(cfg, seed, opt.checkpoint);
      std::cout << "ece id " << ev.id_nots.ece << ", ood " << ev.ood_nots.ece;
      if (ev.temperature)
        std::cout << "; T=" << *ev.temperature << ": id " << ev.id_ts->ece
                  << ", ood " << ev.ood_ts->ece;
      std::cout << " -> " << cfg.out_dir << "\n";
    } else if (matrix->parsed()) {
      const calmix::MatrixResult res = calmix::run_matrix(cfg);
      std::cout << "matrix: " << res.cells.size() << " cells, "
                << res.failures << " failed -> " << cfg.out_dir
                << "/matrix.csv\n";
      if (res.failures > 0) {
        for (const calmix::MatrixCell& c : res.cells)
          if (!c.ok)
            std::cerr << "cell " << c.method << " seed " << c.seed
                      << " failed: " << c.error << "\n";
        return kExitFailure;
      }
    }
  } catch (const calmix::MissingManifest& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingManifest;
  } catch (const calmix::CheckpointMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckpointMismatch;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
