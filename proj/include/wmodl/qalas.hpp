#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "wmodl/volume.hpp"

namespace wmodl {

inline constexpr int kQalasContrasts = 5;
using QalasSignal = Eigen::Array<double, kQalasContrasts, 1>;

/// One QALAS cycle: T2-prep, readout 1, gap, inversion, then readouts 2..5
/// separated by the same gap, then the recovery delay. Times in ms.
struct QalasTiming
{
  double t2prep_te_ms = 100.0;
  double gap_ms = 900.0;
  double flip_deg = 4.0;
  double echo_spacing_ms = 5.8;
  int shots_per_train = 128;
  double recovery_ms = 0.0;

  double train_ms() const { return shots_per_train * echo_spacing_ms; }
  /// Time from one cycle start to the next (T2-prep assumed instantaneous for T1 recovery).
  double cycle_ms() const { return kQalasContrasts * train_ms() + 4.0 * gap_ms + recovery_ms; }
  void validate() const;
};

/// Longitudinal magnetization (equilibrium = 1) over one cycle.
struct QalasCycle
{
  double mz_end = 0.0;
  QalasSignal mz_at_center = QalasSignal::Zero(); ///< Mz before the center shot of each train
};

double t2prep_factor(double t2_ms, QalasTiming const &timing);

/// Propagate Mz through one cycle starting from mz_start. Affine in mz_start.
QalasCycle qalas_cycle(double t1_ms, double t2_ms, QalasTiming const &timing, double mz_start);

/// Fixed point of the cycle map (Mz at cycle start in steady state).
double qalas_steady_state(double t1_ms, double t2_ms, QalasTiming const &timing);

/// Steady-state Mz a time t after the inversion pulse, evaluated exactly through
/// the readout trains and gaps that follow it.
double qalas_mz_after_inversion(double t1_ms, double t2_ms, QalasTiming const &timing, double t_ms);

/// Five steady-state signals pd * sin(flip) * Mz at the train centers (signed).
QalasSignal qalas_signal(double t1_ms, double t2_ms, double pd, QalasTiming const &timing);

/// Norm-ratio weights of the contrasts relative to the last one, from a set of
/// training images; the default loss weighting is exposed as kQalasLossWeights.
std::vector<double> contrast_norm_ratios(ContrastStack const &images);
inline std::vector<double> const kQalasLossWeights{3.26, 2.36, 1.57, 1.12, 1.0};

std::vector<double> log_spaced(double lo, double hi, int n);

struct Dictionary
{
  std::vector<double> t1_grid;
  std::vector<double> t2_grid;
  std::vector<int> t1_index; ///< per atom
  std::vector<int> t2_index; ///< per atom
  Eigen::Matrix<double, kQalasContrasts, Eigen::Dynamic> atoms; ///< unit-norm magnitude signals
  Eigen::VectorXd raw_norm;                                     ///< norm of the pd = 1 magnitude signal
  QalasTiming timing;

  Index size() const { return atoms.cols(); }
};

/// Default grid: T1 100..5000 ms (64 log steps), T2 10..2500 ms (48 log steps).
Dictionary build_dictionary(std::vector<double> const &t1_grid,
                            std::vector<double> const &t2_grid,
                            QalasTiming const &timing);
Dictionary build_default_dictionary(QalasTiming const &timing);

struct ParameterMaps
{
  RealVolume t1;
  RealVolume t2;
  RealVolume pd;
  RealVolume residual;
  LabelVolume flags; ///< 1 where the signal was zero and the fit is undefined
};

struct AtomMatch
{
  Index atom = 0;
  double pd = 0.0;
  double residual = 0.0;
  bool zero_signal = false;
};

AtomMatch match_signal(QalasSignal const &magnitudes, Dictionary const &dict);

/// Dictionary match every voxel with foreground != 0.
ParameterMaps fit_parameter_maps(ContrastStack const &recon, Dictionary const &dict, LabelVolume const &foreground);

enum class SynthKind
{
  T1w,
  T2w,
  FLAIR,
  PDw,
  DIR,
  PSIR
};

struct SynthParams
{
  double tr_ms = 0.0;
  double te_ms = 0.0;
  double ti_ms = 0.0;
  double ti1_ms = 0.0; ///< DIR only
  double ti2_ms = 0.0; ///< DIR only
};

SynthKind parse_synth_kind(std::string const &name);
std::string to_string(SynthKind kind);
SynthParams default_synth_params(SynthKind kind);

/// Closed-form synthetic intensity for one voxel (signed; PSIR keeps the sign).
double synth_intensity(double t1_ms, double t2_ms, double pd, SynthKind kind, SynthParams const &p);

RealVolume synthesize_contrast(ParameterMaps const &maps, SynthKind kind, SynthParams const &p);

} // namespace wmodl
