#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wmodl/metrics.hpp"
#include "wmodl/modl.hpp"
#include "wmodl/phantom.hpp"
#include "wmodl/qalas.hpp"

namespace wmodl {

inline constexpr char const *kLibraryVersion = "1.0.0";

/// Every physical quantity carries its unit in the key name (_mm, _ms, _hz, _mT_per_m).
struct ExperimentConfig
{
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  struct Phantom
  {
    std::array<Index, 3> dims{64, 48, 32};
    ContrastGenerator generator = ContrastGenerator::Direct;
    double jitter = 0.0;
    double intensity_scale = 1.0; ///< receiver gain applied to every contrast; divided out before fitting
    std::map<std::int32_t, TissueProps> tissues = default_tissue_table();
  } phantom;

  struct Geometry
  {
    std::array<double, 3> fov_mm{256.0, 256.0, 192.0};
    std::array<double, 3> voxel_mm{1.0, 1.0, 1.0}; ///< native resolution the bandwidth refers to
  } geometry;

  struct Coils
  {
    int count = 8;
    double width = 0.6;
    double x_stagger = 0.5;
    double phase_cycles = 0.25;
    bool restrict_to_object = false; ///< zero the maps outside the phantom foreground
  } coils;

  struct Wave
  {
    double gmax_mT_per_m = 8.8;
    int cycles = 11;
    double bw_per_pixel_hz = 200.0;
    int osx = 2;
    WaveAssignment assignment = WaveAssignment::CosineY;
    /// Scale the bandwidth by (native readout matrix / grid nx) so the wave spread
    /// covers the same fraction of the readout field of view as at native resolution.
    bool scale_bandwidth_to_grid = true;
  } wave;

  struct Sampling
  {
    AccelSpec accel{4, 4, 2};
    StaggerMode mode = StaggerMode::Fixed;
    std::vector<std::pair<int, int>> stagger; ///< empty selects the default enumeration
  } sampling;

  double noise_sigma = 0.01;

  enum class Method
  {
    Sense,
    Wave,
    Modl,
    WaveModl
  };

  struct Recon
  {
    Method method = Method::Wave;
    int cg_iters = 30;
    double cg_tolerance = 0.0;
    double lambda = 0.0;    ///< Tikhonov weight for sense and wave
    std::string checkpoint; ///< modl methods; empty uses freshly initialized parameters
  } recon;

  struct Training
  {
    int steps = 200;
    double learning_rate = 0.1;
    std::optional<double> lambda_learning_rate;
    int n_outer = 10;
    int cg_iters = 10;
    int width = 24;
    int hidden_layers = 5;
    int kernel = 3;
    double leaky_slope = 0.1;
    ConvInit init = ConvInit::HeUniform;
    double init_scale = 1e-2;
    double lambda_init = 0.05;
    std::vector<double> loss_weights; ///< empty means all ones
    int samples = 1;                  ///< training phantoms, jittered with their own seeds
    double jitter = 0.0;
    int batch = 1;
    int checkpoint_every = 0; ///< 0 writes only the final checkpoint
  } training;

  struct Qalas
  {
    QalasTiming timing{};
    double t1_min_ms = 100.0;
    double t1_max_ms = 5000.0;
    int t1_steps = 64;
    double t2_min_ms = 10.0;
    double t2_max_ms = 2500.0;
    int t2_steps = 48;
    std::vector<SynthKind> synth{SynthKind::T1w, SynthKind::T2w, SynthKind::FLAIR,
                                 SynthKind::PDw, SynthKind::DIR, SynthKind::PSIR};
  } qalas;

  struct GFactor
  {
    int replicas = 100;
    double sigma = 1.0;
  } gfactor;

  struct Roi
  {
    int n_boxes = 50;
    int box = 5;
    std::vector<std::int32_t> tissues{kWhiteMatter, kGrayMatter};
  } roi;

  void validate() const;
};

/// Strict parse: unknown keys, wrong types and out-of-range values raise ConfigError
/// naming the offending key path. Missing keys keep their defaults.
ExperimentConfig parse_config(std::string const &json_text);
ExperimentConfig load_config(std::filesystem::path const &path);

/// Canonical JSON of every field (defaults included), stable across runs.
std::string dump_config(ExperimentConfig const &cfg);

/// Apply "a.b.c=value" overrides; value is JSON, or a bare string when it does not parse.
ExperimentConfig apply_overrides(ExperimentConfig const &cfg, std::vector<std::string> const &assignments);

std::uint64_t fnv1a64(std::string const &bytes);
std::string config_hash(ExperimentConfig const &cfg);

std::string to_string(ExperimentConfig::Method m);
ExperimentConfig::Method parse_method(std::string const &name);

/// Seed for a named sub-stream of the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string const &stream);

/// The bandwidth actually simulated after grid scaling.
double effective_bandwidth_hz(ExperimentConfig const &cfg);
WaveGradientSpec wave_spec(ExperimentConfig const &cfg, bool wave_on);

enum class ErrorKind
{
  Config,
  Numerical,
  Io
};

/// A module error tagged with the stage that raised it.
class StageError : public std::runtime_error
{
public:
  StageError(std::string stage, ErrorKind kind, std::string const &what)
    : std::runtime_error("stage '" + stage + "': " + what)
    , stage_(std::move(stage))
    , kind_(kind)
  {
  }

  std::string const &stage() const { return stage_; }
  ErrorKind kind() const { return kind_; }

private:
  std::string stage_;
  ErrorKind kind_;
};

/// CLI exit code: 2 config, 3 numerical, 4 I/O.
int exit_code(ErrorKind kind);

struct MetricRecord
{
  std::string name;
  std::string roi;
  double value = 0.0;
};

std::string format_metrics(std::vector<MetricRecord> const &records);

/// In-memory experiment: each stage is computed once, on demand, from the config.
class Experiment
{
public:
  explicit Experiment(ExperimentConfig cfg);

  ExperimentConfig const &config() const { return cfg_; }
  Dims dims() const;

  wmodl::Phantom const &phantom();
  LabelVolume foreground();
  WaveOperator const &encoding(bool wave_on);
  SamplingPattern const &pattern();
  std::vector<MultiCoilData> const &kspace(bool wave_on);

  /// Reconstruction with the configured method.
  ContrastStack const &reconstruction();
  ModlParams modl_params();
  CgConfig recon_cg() const;
  CgConfig modl_cg() const;

  /// Training phantoms and the operator their samples were simulated with.
  struct TrainingSet
  {
    std::vector<TrainingSample> samples;
    WaveOperator op;
  };
  TrainingSet training_set(bool wave_on) const;
  TrainConfig train_config() const;

  Dictionary dictionary() const;
  ParameterMaps const &fitted_maps();

  static bool uses_wave(ExperimentConfig::Method m);
  static bool uses_modl(ExperimentConfig::Method m);

private:
  WaveOperator make_operator(bool wave_on, LabelVolume const *support) const;

  ExperimentConfig cfg_;
  std::optional<wmodl::Phantom> phantom_;
  std::map<bool, WaveOperator> ops_;
  std::optional<SamplingPattern> pattern_;
  std::map<bool, std::vector<MultiCoilData>> kspace_;
  std::optional<ContrastStack> recon_;
  std::optional<ParameterMaps> maps_;
};

/// Result of one CLI command: files written (relative to the run directory) and metrics.
struct RunReport
{
  std::filesystem::path directory;
  std::vector<std::string> files;
  std::vector<MetricRecord> metrics;
};

/// Output directory after the WMODL_OUTPUT_DIR override.
std::filesystem::path output_directory(ExperimentConfig const &cfg);

RunReport run_phantom(ExperimentConfig const &cfg);
RunReport run_acquire(ExperimentConfig const &cfg);
RunReport run_recon(ExperimentConfig const &cfg);
RunReport run_train(ExperimentConfig const &cfg);
RunReport run_fit_qalas(ExperimentConfig const &cfg);
RunReport run_synth(ExperimentConfig const &cfg);
RunReport run_gfactor(ExperimentConfig const &cfg);

/// NRMSE of a complex volume file against a reference file, optionally on a label roi.
std::vector<MetricRecord> compare_volumes(std::filesystem::path const &recon,
                                          std::filesystem::path const &reference,
                                          std::filesystem::path const &roi = {});

} // namespace wmodl
