// Shared helpers for the test binaries: seeded generators and dense oracles
// built directly from the operator definitions (never from the code under test).
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "wmodl/phantom.hpp"
#include "wmodl/sampling.hpp"
#include "wmodl/volume.hpp"
#include "wmodl/wave.hpp"

namespace wmodl::testing {

class Rng
{
public:
  explicit Rng(std::uint64_t seed)
    : eng_(seed)
  {
  }

  double uniform(double lo = -1.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
  Cx cnormal() { return {normal(), normal()}; }

  ComplexVolume volume(Dims d)
  {
    ComplexVolume v(d);
    for (Index i = 0; i < v.size(); i++) {
      v[i] = cnormal();
    }
    return v;
  }

  MultiCoilData multicoil(Dims d, Index ncoils)
  {
    MultiCoilData b;
    for (Index c = 0; c < ncoils; c++) {
      auto v = volume(d);
      v.set_domains({Domain::Frequency, Domain::Frequency, Domain::Frequency});
      b.volumes.push_back(std::move(v));
    }
    return b;
  }

  std::mt19937_64 &engine() { return eng_; }

private:
  std::mt19937_64 eng_;
};

inline double rel_diff(ComplexVolume const &a, ComplexVolume const &b)
{
  double const den = std::max(norm(b), 1e-300);
  return (a.array() - b.array()).matrix().norm() / den;
}

inline double rel_diff(Eigen::VectorXcd const &a, Eigen::VectorXcd const &b)
{
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Centered unitary DFT matrix entry, straight from the definition.
inline Cx dft_entry(Index k, Index j, Index n)
{
  double const ph = -2.0 * std::numbers::pi * static_cast<double>((k - n / 2) * (j - n / 2)) / static_cast<double>(n);
  return std::polar(1.0 / std::sqrt(static_cast<double>(n)), ph);
}

/// Dense centered unitary DFT over all three axes applied to a volume, O(N^2).
inline ComplexVolume naive_dft3(ComplexVolume const &v)
{
  Dims const d = v.dims();
  ComplexVolume out(d);
  for (Index kz = 0; kz < d.nz; kz++) {
    for (Index ky = 0; ky < d.ny; ky++) {
      for (Index kx = 0; kx < d.nx; kx++) {
        Cx s = 0.0;
        for (Index z = 0; z < d.nz; z++) {
          for (Index y = 0; y < d.ny; y++) {
            for (Index x = 0; x < d.nx; x++) {
              s += v(x, y, z) * dft_entry(kx, x, d.nx) * dft_entry(ky, y, d.ny) * dft_entry(kz, z, d.nz);
            }
          }
        }
        out(kx, ky, kz) = s;
      }
    }
  }
  return out;
}

/// Wave PSF phase from composite Simpson integration of the gradient waveform.
inline Cx psf_quadrature(WaveGradientSpec const &s, Index j, Index nsamples, double y, double z)
{
  double const tro = 1.0 / s.bw_per_pixel_hz;
  double const t = (j + 0.5) * tro / nsamples;
  double const w = 2.0 * std::numbers::pi * s.cycles / tro;
  double const g = s.gmax_mT_per_m * 1e-3;
  int const steps = 20000;
  double ky = 0.0;
  double kz = 0.0;
  double const h = t / steps;
  for (int i = 0; i <= steps; i++) {
    double const tau = i * h;
    double const wt = (i == 0 || i == steps) ? 1.0 / 3.0 : (i % 2 ? 4.0 / 3.0 : 2.0 / 3.0);
    double const gc = g * std::cos(w * tau);
    double const gs = g * std::sin(w * tau);
    ky += wt * h * (s.assignment == WaveAssignment::CosineY ? gc : gs);
    kz += wt * h * (s.assignment == WaveAssignment::CosineY ? gs : gc);
  }
  ky *= kGammaBarHzPerT;
  kz *= kGammaBarHzPerT;
  return std::polar(1.0, -2.0 * std::numbers::pi * (ky * y + kz * z));
}

/// Explicit encoding matrix of A = W F_yz P F_x C, assembled entry by entry.
/// Rows: (coil, kx, ky, kz) over sampled (ky, kz) only. Columns: x-fastest voxels.
inline Eigen::MatrixXcd dense_wave_matrix(CoilSensitivities const &C, WaveGradientSpec const &spec, Dims d,
                                          Mask const &mask)
{
  Index const N = spec.osx * d.nx;
  Index const off = N / 2 - d.nx / 2;
  Index const ns = sample_count(mask);
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(C.ncoils() * N * ns, d.size());
  // psf by quadrature, indexed (k, y, z)
  std::vector<Cx> psf(static_cast<std::size_t>(N * d.ny * d.nz));
  for (Index z = 0; z < d.nz; z++) {
    for (Index y = 0; y < d.ny; y++) {
      for (Index k = 0; k < N; k++) {
        double const yc = (static_cast<double>(y) - d.ny / 2) * spec.fov_m[1] / d.ny;
        double const zc = (static_cast<double>(z) - d.nz / 2) * spec.fov_m[2] / d.nz;
        psf[k + N * (y + d.ny * z)] = spec.gmax_mT_per_m == 0.0 ? Cx(1.0) : psf_quadrature(spec, k, N, yc, zc);
      }
    }
  }
  Index row = 0;
  for (Index c = 0; c < C.ncoils(); c++) {
    for (Index kz = 0; kz < d.nz; kz++) {
      for (Index ky = 0; ky < d.ny; ky++) {
        if (!mask(ky, kz)) {
          continue;
        }
        for (Index k = 0; k < N; k++) {
          for (Index z = 0; z < d.nz; z++) {
            for (Index y = 0; y < d.ny; y++) {
              Cx const yz = psf[k + N * (y + d.ny * z)] * dft_entry(ky, y, d.ny) * dft_entry(kz, z, d.nz);
              for (Index x = 0; x < d.nx; x++) {
                Index const col = x + d.nx * (y + d.ny * z);
                A(row + k, col) = C.maps[c][col] * dft_entry(k, x + off, N) * yz;
              }
            }
          }
        }
        row += N;
      }
    }
  }
  return A;
}

/// Stack the sampled entries of multi-coil data in dense_wave_matrix row order.
inline Eigen::VectorXcd stack_sampled(MultiCoilData const &b, Mask const &mask)
{
  Dims const d = b.dims();
  std::vector<Cx> out;
  for (auto const &v : b.volumes) {
    for (Index kz = 0; kz < d.nz; kz++) {
      for (Index ky = 0; ky < d.ny; ky++) {
        if (!mask(ky, kz)) {
          continue;
        }
        for (Index k = 0; k < d.nx; k++) {
          out.push_back(v(k, ky, kz));
        }
      }
    }
  }
  return Eigen::Map<Eigen::VectorXcd>(out.data(), static_cast<Index>(out.size()));
}

inline Eigen::VectorXcd as_vector(ComplexVolume const &v) { return v.array().matrix(); }

inline ComplexVolume as_volume(Eigen::VectorXcd const &v, Dims d) { return ComplexVolume(d, v.array()); }

/// Small wave setup used across suites.
struct WaveSetup
{
  Dims dims;
  WaveGradientSpec spec;
  CoilSensitivities sens;
  WaveOperator op;
};

inline WaveGradientSpec desk_wave_spec(double gmax, int osx = 2, int cycles = 3)
{
  WaveGradientSpec s;
  s.gmax_mT_per_m = gmax;
  s.cycles = gmax > 0.0 ? cycles : 0;
  s.bw_per_pixel_hz = 800.0;
  s.osx = osx;
  return s;
}

inline WaveSetup make_setup(Dims d, int ncoils, double gmax, int osx = 2, int cycles = 3)
{
  auto spec = desk_wave_spec(gmax, osx, cycles);
  CoilProfile prof;
  prof.fov_m = spec.fov_m;
  auto sens = make_coil_sensitivities(ncoils, d.nx, d.ny, d.nz, prof);
  WaveOperator op(sens, make_wave_psf(spec, d.nx, d.ny, d.nz));
  return {d, spec, std::move(sens), std::move(op)};
}

} // namespace wmodl::testing
