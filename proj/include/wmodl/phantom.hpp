#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "wmodl/qalas.hpp"
#include "wmodl/sampling.hpp"
#include "wmodl/volume.hpp"
#include "wmodl/wave.hpp"

namespace wmodl {

struct TissueProps
{
  double t1_ms = 0.0;
  double t2_ms = 0.0;
  double pd = 0.0;
};

enum TissueLabel : std::int32_t
{
  kBackground = 0,
  kWhiteMatter = 1,
  kGrayMatter = 2,
  kCsf = 3
};

struct TissueMap
{
  LabelVolume labels;
  std::map<std::int32_t, TissueProps> table;

  void validate() const;
  ParameterMaps truth_maps() const;
};

/// WM / GM / CSF at 3T-typical values.
std::map<std::int32_t, TissueProps> default_tissue_table();

struct Ellipsoid
{
  std::array<double, 3> center{0, 0, 0};    ///< normalized [-1, 1] grid coordinates
  std::array<double, 3> semi_axes{1, 1, 1}; ///< normalized
  double rotation_rad = 0.0;                ///< about the z axis, in the (x, y) plane
  std::int32_t label = 0;

  bool contains(double x, double y, double z) const;
};

enum class ContrastGenerator
{
  Direct, ///< one contrast, intensity = PD of the label
  Qalas   ///< five QALAS contrasts from the tissue table
};

struct PhantomSpec
{
  Dims dims{64, 48, 32};
  std::vector<Ellipsoid> ellipsoids;
  std::map<std::int32_t, TissueProps> table = default_tissue_table();
  ContrastGenerator generator = ContrastGenerator::Direct;
  QalasTiming timing{};

  void validate() const;
};

/// Normalized grid coordinate of voxel i on an n-point axis (centered).
inline double normalized_coordinate(Index i, Index n) { return (static_cast<double>(i) - n / 2) / (0.5 * n); }

/// Head-like layout: GM shell around a WM core, CSF ventricles, a deep GM nucleus.
/// `jitter` > 0 perturbs centers and axes deterministically from `seed`.
PhantomSpec brain_phantom_spec(Dims dims, double jitter = 0.0, std::uint64_t seed = 0);

struct Phantom
{
  TissueMap tissue;
  ContrastStack contrasts;
};

/// Rasterizes ellipsoids in order (later ones overwrite) and generates contrasts.
Phantom make_phantom(PhantomSpec const &spec);

struct CoilProfile
{
  double width = 0.6;       ///< Gaussian width as a fraction of the cylinder radius
  double x_stagger = 0.5;   ///< odd coils sit at +stagger*fx/2, even at -stagger*fx/2 along the readout
  double phase_cycles = 0.25; ///< linear phase across the radius, in cycles
  std::array<double, 3> fov_m{0.256, 0.256, 0.192};
};

/// Unnormalized sensitivity of coil c at physical position (x, y, z).
Cx coil_profile_at(int coil, int ncoils, CoilProfile const &profile, double x, double y, double z);

/// Coils on a cylinder (axis along x) circumscribing the (y, z) field of view, at
/// angles 2 pi c / ncoils, scaled by a single constant so max RSS = 1.
CoilSensitivities make_coil_sensitivities(int ncoils, Index nx, Index ny, Index nz, CoilProfile const &profile);

/// Zero every map outside `support` (nonzero labels), the way estimated maps
/// vanish outside the object.
CoilSensitivities restrict_to_support(CoilSensitivities sens, LabelVolume const &support);

/// The normalization constant make_coil_sensitivities applied.
double coil_normalization(int ncoils, Index nx, Index ny, Index nz, CoilProfile const &profile);

/// b_m = A_m x_m + n on sampled entries, n complex Gaussian with per-component std sigma.
std::vector<MultiCoilData> simulate_acquisition(ContrastStack const &truth,
                                                WaveOperator const &op,
                                                SamplingPattern const &pattern,
                                                double noise_sigma,
                                                std::uint64_t seed);

/// Noise-only acquisition on the sampled entries of `mask`.
MultiCoilData sample_noise(WaveOperator const &op, Mask const &mask, double noise_sigma, std::uint64_t seed);

} // namespace wmodl
