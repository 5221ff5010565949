// wmodl: command line driver for the simulation / reconstruction / mapping pipeline.
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "wmodl/errors.hpp"
#include "wmodl/pipeline.hpp"

using namespace wmodl;

namespace {

struct Options
{
  std::string config;
  std::vector<std::string> overrides;
  std::string method;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::string checkpoint;
  std::optional<int> steps;
  std::optional<double> noise_sigma;
};

ExperimentConfig resolve(Options const &o)
{
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  std::vector<std::string> sets = o.overrides;
  // dedicated flags are shorthands for --set and win over it
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  if (!o.method.empty()) {
    sets.push_back("recon.method=\"" + o.method + "\"");
  }
  if (o.lambda) {
    sets.push_back("recon.lambda=" + num(*o.lambda));
  }
  if (o.seed) {
    sets.push_back("seed=" + std::to_string(*o.seed));
  }
  if (!o.output_dir.empty()) {
    cfg.output_dir = o.output_dir;
  }
  if (!o.checkpoint.empty()) {
    cfg.recon.checkpoint = o.checkpoint;
  }
  if (o.steps) {
    sets.push_back("training.steps=" + std::to_string(*o.steps));
  }
  if (o.noise_sigma) {
    sets.push_back("noise_sigma=" + num(*o.noise_sigma));
  }
  return apply_overrides(cfg, sets);
}

void print(RunReport const &r)
{
  std::cout << format_metrics(r.metrics);
  std::cout << "wrote " << r.files.size() << " files to " << r.directory.string() << "\n";
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Wave-encoded model-based reconstruction and QALAS mapping on simulated data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kLibraryVersion));

  Options o;
  auto add_common = [&o](CLI::App *sub) {
    sub->add_option("-c,--config", o.config, "experiment JSON")->check(CLI::ExistingFile);
    sub->add_option("--set", o.overrides, "override a config key, e.g. --set wave.cycles=5");
    sub->add_option("--method", o.method, "sense, wave, modl or wave-modl");
    sub->add_option("--lambda", o.lambda, "Tikhonov weight for linear recons");
    sub->add_option("--seed", o.seed, "experiment seed");
    sub->add_option("-o,--output-dir", o.output_dir, "run directory (WMODL_OUTPUT_DIR wins)");
    sub->add_option("--checkpoint", o.checkpoint, "trained model for modl methods");
    sub->add_option("--steps", o.steps, "training steps");
    sub->add_option("--noise-sigma", o.noise_sigma, "k-space noise standard deviation");
  };

  struct Command
  {
    char const *name;
    char const *help;
    RunReport (*run)(ExperimentConfig const &);
  };
  Command const commands[] = {
    {"phantom", "write ground-truth contrasts, labels and parameter maps", run_phantom},
    {"acquire", "simulate undersampled multi-coil k-space", run_acquire},
    {"recon", "reconstruct with the configured method", run_recon},
    {"train", "train a MoDL model and write a checkpoint", run_train},
    {"fit-qalas", "reconstruct QALAS contrasts and fit T1/T2/PD maps", run_fit_qalas},
    {"synth", "synthesize clinical contrasts from fitted maps", run_synth},
    {"gfactor", "pseudo-replica g-factor map of a linear recon", run_gfactor},
  };
  RunReport (*selected)(ExperimentConfig const &) = nullptr;
  for (auto const &c : commands) {
    auto *sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    sub->callback([&selected, &c] { selected = c.run; });
  }

  std::string recon_file;
  std::string reference_file;
  std::string roi_file;
  auto *metrics = app.add_subcommand("metrics", "NRMSE of a volume file against a reference");
  metrics->add_option("recon", recon_file, "reconstructed volume")->required();
  metrics->add_option("reference", reference_file, "reference volume")->required();
  metrics->add_option("--roi", roi_file, "label volume; nonzero voxels form the roi");

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    int const rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (metrics->parsed()) {
      std::cout << format_metrics(compare_volumes(recon_file, reference_file, roi_file));
      return 0;
    }
    ExperimentConfig cfg;
    try {
      cfg = resolve(o);
    } catch (ConfigError const &e) {
      throw StageError("config", ErrorKind::Config, e.what());
    } catch (IoError const &e) {
      throw StageError("config", ErrorKind::Io, e.what());
    }
    print(selected(cfg));
    return 0;
  } catch (StageError const &e) {
    std::cerr << "wmodl: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (std::exception const &e) {
    std::cerr << "wmodl: " << e.what() << "\n";
    return 1;
  }
}
