#pragma once

#include <array>
#include <vector>

#include "wmodl/sampling.hpp"
#include "wmodl/volume.hpp"

namespace wmodl {

/// Gyromagnetic ratio over 2*pi for 1H, Hz/T.
inline constexpr double kGammaBarHzPerT = 42.5764e6;

enum class WaveAssignment
{
  CosineY, ///< g_y ~ cos, g_z ~ sin
  SineY    ///< g_y ~ sin, g_z ~ cos
};

struct WaveGradientSpec
{
  double gmax_mT_per_m = 0.0; ///< 0 means wave off (plain Cartesian)
  int cycles = 0;
  double bw_per_pixel_hz = 200.0;
  std::array<double, 3> fov_m{0.256, 0.256, 0.192};
  int osx = 2;
  WaveAssignment assignment = WaveAssignment::CosineY;

  double readout_duration_s() const { return 1.0 / bw_per_pixel_hz; }
  double wave_frequency_hz() const { return cycles * bw_per_pixel_hz; }
  void validate() const;
};

/// k-space offsets (cycles/m) at each readout sample.
struct GradientMoments
{
  std::vector<double> ky;
  std::vector<double> kz;
};

/// Closed-form moments of the sinusoidal wave gradients at sample centers
/// t_j = (j + 0.5) T_ro / nsamples.
GradientMoments gradient_moment(WaveGradientSpec const &spec, Index nsamples);

/// Unit-modulus phase table over the hybrid (kx, y, z) grid of size (osx*nx, ny, nz).
struct WavePsf
{
  ComplexVolume table;
  int osx = 1;

  Dims image_dims() const { return {table.dims().nx / osx, table.dims().ny, table.dims().nz}; }
};

/// Centered physical coordinate of index i on an n-point grid spanning fov.
inline double centered_coordinate(Index i, Index n, double fov) { return (static_cast<double>(i) - n / 2) * fov / n; }

WavePsf make_wave_psf(WaveGradientSpec const &spec, Index nx, Index ny, Index nz);

/// A = W F_yz P F_x C, with readout zero-padding to osx*nx before F_x.
/// Sensitivities and PSF are shared by all contrasts; the mask picks the contrast.
class WaveOperator
{
public:
  WaveOperator(CoilSensitivities sens, WavePsf psf);

  Dims image_dims() const { return image_dims_; }
  Dims kspace_dims() const { return psf_.table.dims(); }
  Index ncoils() const { return sens_.ncoils(); }
  int osx() const { return psf_.osx; }
  CoilSensitivities const &sensitivities() const { return sens_; }
  WavePsf const &psf() const { return psf_; }

  MultiCoilData forward(ComplexVolume const &x, Mask const &mask) const;
  ComplexVolume adjoint(MultiCoilData const &b, Mask const &mask) const;
  /// A^H A x without materializing the coil data.
  ComplexVolume normal(ComplexVolume const &x, Mask const &mask) const;

private:
  void check_image(ComplexVolume const &x) const;
  void check_mask(Mask const &mask) const;
  ComplexVolume encode_coil(ComplexVolume const &x, Index coil, Mask const &mask) const;
  void decode_coil_accumulate(ComplexVolume &&k, Index coil, Mask const &mask, ComplexVolume &acc) const;

  CoilSensitivities sens_;
  WavePsf psf_;
  Dims image_dims_;
};

MultiCoilData wave_forward(ComplexVolume const &x, CoilSensitivities const &C, WavePsf const &P, Mask const &mask);
ComplexVolume wave_adjoint(MultiCoilData const &b, CoilSensitivities const &C, WavePsf const &P, Mask const &mask);

} // namespace wmodl
