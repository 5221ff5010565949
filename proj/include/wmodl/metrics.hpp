#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include <Eigen/Core>

#include "wmodl/qalas.hpp"
#include "wmodl/sampling.hpp"
#include "wmodl/volume.hpp"
#include "wmodl/wave.hpp"

namespace wmodl {

enum class NrmseMode
{
  Complex,  ///< |x - ref| on the complex difference
  Magnitude ///< ||x| - |ref||
};

/// 100 * ||x - ref|| / ||ref|| over voxels where roi != 0 (all voxels when roi is null).
double nrmse(ComplexVolume const &x, ComplexVolume const &ref, LabelVolume const *roi = nullptr,
             NrmseMode mode = NrmseMode::Complex);

/// Stacked over contrasts.
double nrmse(ContrastStack const &x, ContrastStack const &ref, LabelVolume const *roi = nullptr,
             NrmseMode mode = NrmseMode::Complex);

struct GFactorConfig
{
  int n_replicas = 100;
  double sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear reconstruction of one acquisition under a given mask.
using ReconFn = std::function<ComplexVolume(MultiCoilData const &, Mask const &)>;

struct GFactorMap
{
  RealVolume g;
  LabelVolume flags; ///< 1 where std at R = 1 vanished and g is undefined (emitted as 0)
  RealVolume std_accel;
  RealVolume std_full;
};

/// Pseudo multiple replica: g = std_R / (std_1 sqrt(R)) from noise-only acquisitions
/// reconstructed under `mask` and under the fully sampled mask.
GFactorMap gfactor_map(ReconFn const &recon, WaveOperator const &op, Mask const &mask, double R, GFactorConfig const &cfg);

/// Per-voxel standard deviation over replicas of recon(noise).
RealVolume replica_std(ReconFn const &recon, WaveOperator const &op, Mask const &mask, GFactorConfig const &cfg,
                       std::uint64_t stream);

/// Closed-form SENSE g-factor with identity noise covariance. Rows of `enc` are
/// coils, columns are the aliased voxels; returns g for every column.
Eigen::VectorXd sense_gfactor_analytic(Eigen::MatrixXcd const &enc);

double mean_over(RealVolume const &v, LabelVolume const &mask);

struct LinearFit
{
  double slope = 0.0;
  double intercept = 0.0;
  double r = 0.0;
  double slope_stderr = 0.0;
  Index n = 0;
};

/// Ordinary least squares of b on a. Degenerate (constant a) fits report NaN slope and r.
LinearFit ols_fit(std::vector<double> const &a, std::vector<double> const &b);

enum MapQuantity : int
{
  kT1 = 0,
  kT2 = 1,
  kPD = 2
};

struct BoxStats
{
  std::vector<double> a; ///< per-box means under maps_a
  std::vector<double> b;
  double mean_a = 0.0;
  double std_a = 0.0;
  double mean_b = 0.0;
  double std_b = 0.0;
  LinearFit fit;
};

struct RoiRegression
{
  std::map<std::int32_t, std::vector<std::array<Index, 3>>> boxes; ///< lower corners per tissue
  std::map<std::int32_t, std::array<BoxStats, 3>> per_tissue;
  std::array<LinearFit, 3> pooled; ///< all tissues' boxes together
};

/// Corners (x, y, z) whose box x box x box block lies entirely inside `label`.
std::vector<std::array<Index, 3>> valid_box_corners(LabelVolume const &labels, std::int32_t label, int box);

RoiRegression roi_box_regression(ParameterMaps const &maps_a,
                                 ParameterMaps const &maps_b,
                                 LabelVolume const &labels,
                                 std::vector<std::int32_t> const &tissues,
                                 int n_boxes = 50,
                                 int box = 5,
                                 std::uint64_t seed = 0);

} // namespace wmodl
