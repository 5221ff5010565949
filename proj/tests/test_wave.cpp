#include "doctest.h"

#include "support.hpp"

using namespace wmodl;
using namespace wmodl::testing;

TEST_CASE("gradient moments")
{
  WaveGradientSpec off;
  auto const z = gradient_moment(off, 16);
  for (Index j = 0; j < 16; j++) {
    CHECK(z.ky[j] == 0.0);
    CHECK(z.kz[j] == 0.0);
  }
  CHECK_THROWS_AS(gradient_moment(off, 0), InvalidInput);

  WaveGradientSpec mp;
  mp.gmax_mT_per_m = 8.8;
  mp.cycles = 11;
  mp.bw_per_pixel_hz = 200.0;
  double const fwave = 11 * 200.0;
  double const peak = kGammaBarHzPerT * 8.8e-3 / (2.0 * std::numbers::pi * fwave);
  // dense sampling so the maximum is hit closely
  Index const ns = 11 * 20000;
  auto const m = gradient_moment(mp, ns);
  double mx = 0.0;
  for (double v : m.ky) {
    mx = std::max(mx, std::abs(v));
  }
  CHECK(std::abs(mx - peak) < 1e-6 * peak);
  // kz returns to zero after each full period; sample centers straddle t = T_ro
  double const last = m.kz.back();
  double const kz_at_end = peak * (1.0 - std::cos(2.0 * std::numbers::pi * 11 * (ns - 0.5) / ns));
  CHECK(std::abs(last - kz_at_end) < 1e-9 * peak);
  CHECK(std::abs(kz_at_end) < 1e-3 * peak);

  // closed form vs Simpson quadrature of the waveform
  Index const n = 64;
  auto const q = gradient_moment(mp, n);
  for (Index j = 0; j < n; j += 7) {
    double const y = 0.05;
    Cx const want = psf_quadrature(mp, j, n, y, 0.0);
    Cx const got = std::polar(1.0, -2.0 * std::numbers::pi * q.ky[j] * y);
    CHECK(std::abs(want - got) < 1e-6 * 2.0 * std::numbers::pi * peak * y);
  }
}

TEST_CASE("PSF structure")
{
  auto spec = desk_wave_spec(8.8, 2, 5);
  auto const psf = make_wave_psf(spec, 8, 6, 4);
  auto const &t = psf.table;
  CHECK(t.dims() == Dims{16, 6, 4});
  CHECK(((t.array().abs() - 1.0).abs() < 1e-9).all());
  for (Index j = 0; j < 16; j++) {
    CHECK(std::abs(t(j, 3, 2) - Cx(1.0)) < 1e-9);
  }
  // mirror through isocenter: index i <-> n - i on even grids
  for (Index z = 1; z < 4; z++) {
    for (Index y = 1; y < 6; y++) {
      for (Index j = 0; j < 16; j++) {
        CHECK(std::abs(t(j, y, z) - std::conj(t(j, 6 - y, 4 - z))) < 1e-9);
      }
    }
  }
  auto const flat = make_wave_psf(desk_wave_spec(0.0), 8, 6, 4);
  CHECK((flat.table.array() == Cx(1.0)).all());
}

TEST_CASE("A reduces to the 3D FFT for one uniform coil without wave")
{
  Rng rng(1);
  Dims const d{8, 6, 4};
  CoilSensitivities one{{ComplexVolume(d, Cx(1.0))}};
  auto spec = desk_wave_spec(0.0, 1);
  auto const psf = make_wave_psf(spec, d.nx, d.ny, d.nz);
  auto const x = rng.volume(d);
  Mask const full = full_mask(d.ny, d.nz);
  auto const b = wave_forward(x, one, psf, full);
  CHECK(rel_diff(b.volumes[0], fft_centered(x, kAxesXYZ, FftDirection::Forward)) < 1e-12);
  auto const back = wave_adjoint(b, one, psf, full);
  CHECK(rel_diff(back, x) < 1e-12);
  CHECK(norm(wave_forward(ComplexVolume(d), one, psf, full)) == 0.0);
  auto const y = rng.multicoil(d, 1);
  CHECK(rel_diff(wave_adjoint(y, one, psf, full), fft_centered(y.volumes[0], kAxesXYZ, FftDirection::Inverse)) < 1e-12);
}

TEST_CASE("forward and adjoint match the explicitly assembled matrix")
{
  Rng rng(8);
  Dims const d{8, 6, 4};
  for (double g : {0.0, 8.8}) {
    auto s = make_setup(d, 3, g, 2, 5);
    Mask const mask = make_caipi_mask(d.ny, d.nz, {2, 2, 1});
    auto const A = dense_wave_matrix(s.sens, s.spec, d, mask);
    auto const x = rng.volume(d);
    auto const b = s.op.forward(x, mask);
    CHECK(rel_diff(stack_sampled(b, mask), Eigen::VectorXcd(A * as_vector(x))) < 1e-10);
    // unsampled columns are exactly zero
    for (auto const &v : b.volumes) {
      for (Index z = 0; z < d.nz; z++) {
        for (Index y = 0; y < d.ny; y++) {
          if (!mask(y, z)) {
            for (Index k = 0; k < v.dims().nx; k++) {
              CHECK(v(k, y, z) == Cx(0.0));
            }
          }
        }
      }
    }
    auto const y = rng.multicoil(s.op.kspace_dims(), 3);
    Eigen::VectorXcd const aty = A.adjoint() * stack_sampled(y, mask);
    CHECK(rel_diff(as_vector(s.op.adjoint(y, mask)), aty) < 1e-10);
  }
}

TEST_CASE("property: adjoint identity, Hermitian PSD normal operator, energy bound")
{
  Rng rng(99);
  for (int trial = 0; trial < 12; trial++) {
    Dims const d{2 * rng.integer(2, 5), rng.integer(3, 7), rng.integer(2, 5)};
    double const g = trial % 3 == 0 ? 0.0 : rng.uniform(1.0, 16.0);
    int const osx = rng.integer(1, 2);
    auto s = make_setup(d, rng.integer(1, 4), g, osx, rng.integer(1, 6));
    AccelSpec acc{rng.integer(1, 2), rng.integer(1, 2), 0};
    Mask const mask = make_caipi_mask(d.ny, d.nz, acc);
    auto const x = rng.volume(d);
    auto const y = rng.multicoil(s.op.kspace_dims(), s.op.ncoils());
    Cx const lhs = inner_product(s.op.forward(x, mask), y);
    Cx const rhs = inner_product(x, s.op.adjoint(y, mask));
    CHECK(std::abs(lhs - rhs) <= 1e-9 * norm(x) * norm(y));
    Cx const q = inner_product(x, s.op.normal(x, mask));
    CHECK(std::abs(q.imag()) <= 1e-10 * squared_norm(x));
    CHECK(q.real() >= -1e-12 * squared_norm(x));
    auto const xf = s.op.forward(x, full_mask(d.ny, d.nz));
    CHECK(norm(xf) <= norm(x) * (1.0 + 1e-12));
  }
}

TEST_CASE("gmax = 0 equals a direct Cartesian SENSE model")
{
  Rng rng(4);
  Dims const d{8, 6, 4};
  auto s = make_setup(d, 3, 0.0, 2);
  Mask const mask = make_caipi_mask(d.ny, d.nz, {2, 1, 0});
  auto const x = rng.volume(d);
  auto const b = s.op.forward(x, mask);
  for (Index c = 0; c < 3; c++) {
    // zero-pad, then plain 3D FFT, then mask
    ComplexVolume pad(s.op.kspace_dims());
    for (Index z = 0; z < d.nz; z++) {
      for (Index y = 0; y < d.ny; y++) {
        for (Index xx = 0; xx < d.nx; xx++) {
          pad(xx + 4, y, z) = s.sens.maps[c](xx, y, z) * x(xx, y, z);
        }
      }
    }
    auto k = fft_centered(pad, kAxesXYZ, FftDirection::Forward);
    for (Index z = 0; z < d.nz; z++) {
      for (Index y = 0; y < d.ny; y++) {
        for (Index kx = 0; kx < 16; kx++) {
          if (!mask(y, z)) {
            k(kx, y, z) = 0.0;
          }
        }
      }
    }
    CHECK(rel_diff(b.volumes[c], k) < 1e-10);
  }
}

TEST_CASE("operator shape and domain errors")
{
  Dims const d{8, 6, 4};
  auto s = make_setup(d, 2, 4.0);
  Mask const mask = full_mask(d.ny, d.nz);
  CHECK_THROWS_AS(s.op.forward(ComplexVolume(Dims{8, 6, 5}), mask), InvalidInput);
  CHECK_THROWS_AS(s.op.forward(ComplexVolume(d), full_mask(6, 5)), InvalidInput);
  auto k = fft_centered(ComplexVolume(d), kAxesXYZ, FftDirection::Forward);
  CHECK_THROWS_AS(s.op.forward(k, mask), InvalidInput);
  Rng rng(2);
  auto b = rng.multicoil(s.op.kspace_dims(), 2);
  b.volumes[1].set_domain(0, Domain::Image);
  CHECK_THROWS_AS(s.op.adjoint(b, mask), InvalidInput);
  CHECK_THROWS_AS(s.op.adjoint(rng.multicoil(s.op.kspace_dims(), 3), mask), InvalidInput);
  CoilSensitivities wrong{{ComplexVolume(Dims{8, 6, 5})}};
  CHECK_THROWS_AS(WaveOperator(wrong, make_wave_psf(s.spec, 8, 6, 4)), InvalidInput);
}
