#include "doctest.h"

#include <map>

#include "support.hpp"
#include "wmodl/solvers.hpp"

using namespace wmodl;
using namespace wmodl::testing;

namespace {

// Independent point-in-ellipsoid rasterizer.
std::int32_t brute_label(PhantomSpec const &spec, Index ix, Index iy, Index iz)
{
  auto coord = [](Index i, Index n) { return (static_cast<double>(i) - static_cast<double>(n / 2)) * 2.0 / n; };
  double const x = coord(ix, spec.dims.nx);
  double const y = coord(iy, spec.dims.ny);
  double const z = coord(iz, spec.dims.nz);
  std::int32_t label = 0;
  for (auto const &e : spec.ellipsoids) {
    double const c = std::cos(e.rotation_rad);
    double const s = std::sin(e.rotation_rad);
    double const px = x - e.center[0];
    double const py = y - e.center[1];
    double const pz = z - e.center[2];
    double const u = c * px + s * py;
    double const v = -s * px + c * py;
    double const q = std::pow(u / e.semi_axes[0], 2) + std::pow(v / e.semi_axes[1], 2) + std::pow(pz / e.semi_axes[2], 2);
    if (q <= 1.0) {
      label = e.label;
    }
  }
  return label;
}

} // namespace

TEST_CASE("single ellipsoid indicator")
{
  PhantomSpec spec;
  spec.dims = {8, 8, 8};
  spec.table = {{1, {1000.0, 100.0, 1.0}}};
  spec.ellipsoids = {{{0, 0, 0}, {1.0, 1.0, 1.0}, 0.0, 1}};
  auto const ph = make_phantom(spec);
  REQUIRE(ph.contrasts.size() == 1);
  for (Index z = 0; z < 8; z++) {
    for (Index y = 0; y < 8; y++) {
      for (Index x = 0; x < 8; x++) {
        double const want = brute_label(spec, x, y, z) ? 1.0 : 0.0;
        CHECK(ph.contrasts[0](x, y, z) == Cx(want));
      }
    }
  }
}

TEST_CASE("painter's order for nested ellipsoids")
{
  PhantomSpec spec;
  spec.dims = {16, 16, 16};
  spec.ellipsoids = {{{0, 0, 0}, {0.9, 0.9, 0.9}, 0.0, kGrayMatter}, {{0, 0, 0}, {0.4, 0.4, 0.4}, 0.0, kWhiteMatter}};
  auto const ph = make_phantom(spec);
  CHECK(ph.tissue.labels(8, 8, 8) == kWhiteMatter);
  CHECK(ph.tissue.labels(8, 8, 2) == kGrayMatter);
  CHECK(ph.tissue.labels(0, 0, 0) == kBackground);
  CHECK(ph.contrasts[0](8, 8, 8) == Cx(0.7));
}

TEST_CASE("default brain phantom matches brute-force rasterization")
{
  for (double jitter : {0.0, 1.0}) {
    auto const spec = brain_phantom_spec({64, 48, 32}, jitter, 17);
    auto const ph = make_phantom(spec);
    std::map<std::int32_t, Index> got, want;
    for (Index z = 0; z < 32; z++) {
      for (Index y = 0; y < 48; y++) {
        for (Index x = 0; x < 64; x++) {
          got[ph.tissue.labels(x, y, z)]++;
          want[brute_label(spec, x, y, z)]++;
        }
      }
    }
    CHECK(got == want);
    CHECK(got[kWhiteMatter] > 0);
    CHECK(got[kGrayMatter] > 0);
    CHECK(got[kCsf] > 0);
  }
}

TEST_CASE("phantom determinism and validation")
{
  auto const a = make_phantom(brain_phantom_spec({16, 12, 8}, 0.5, 3));
  auto const b = make_phantom(brain_phantom_spec({16, 12, 8}, 0.5, 3));
  CHECK((a.tissue.labels.array() == b.tissue.labels.array()).all());
  PhantomSpec bad;
  CHECK_THROWS_AS(make_phantom(bad), InvalidInput);
  auto small = brain_phantom_spec({8, 8, 7});
  CHECK_THROWS_AS(make_phantom(small), InvalidInput);
  auto t = brain_phantom_spec({8, 8, 8});
  t.table[kWhiteMatter].t2_ms = 900.0;
  CHECK_THROWS_AS(make_phantom(t), InvalidInput);
}

TEST_CASE("QALAS generator emits the signal model per label")
{
  auto spec = brain_phantom_spec({16, 12, 8});
  spec.generator = ContrastGenerator::Qalas;
  auto const ph = make_phantom(spec);
  REQUIRE(ph.contrasts.size() == 5);
  auto const wm = qalas_signal(830.0, 70.0, 0.7, spec.timing);
  for (Index i = 0; i < ph.tissue.labels.size(); i++) {
    if (ph.tissue.labels[i] == kWhiteMatter) {
      for (int m = 0; m < 5; m++) {
        CHECK(ph.contrasts[m][i] == Cx(wm[m]));
      }
    }
  }
}

TEST_CASE("coil sensitivities: normalization and single coil")
{
  CoilProfile prof;
  auto const one = make_coil_sensitivities(1, 8, 8, 8, prof);
  auto const rss = one.rss();
  CHECK(rss.array().maxCoeff() <= 1.0 + 1e-12);
  CHECK(std::abs(rss.array().maxCoeff() - 1.0) < 1e-12);
  auto const eight = make_coil_sensitivities(8, 16, 12, 8, prof);
  CHECK(eight.rss().array().maxCoeff() <= 1.0 + 1e-9);
  CHECK_NOTHROW(eight.validate());
  CHECK_THROWS_AS(make_coil_sensitivities(0, 8, 8, 8, prof), InvalidInput);
}

TEST_CASE("coil rotational symmetry")
{
  CoilProfile prof;
  prof.fov_m = {0.2, 0.2, 0.2};
  auto check_rotation = [&](int ncoils, int step) {
    double const ang = 2.0 * std::numbers::pi * step / ncoils;
    double worst = 0.0;
    Rng rng(5);
    for (int i = 0; i < 200; i++) {
      double const x = rng.uniform(-0.1, 0.1);
      double const y = rng.uniform(-0.1, 0.1);
      double const z = rng.uniform(-0.1, 0.1);
      double const ry = std::cos(ang) * y - std::sin(ang) * z;
      double const rz = std::sin(ang) * y + std::cos(ang) * z;
      for (int c = 0; c < ncoils; c++) {
        Cx const a = coil_profile_at((c + step) % ncoils, ncoils, prof, x, ry, rz);
        Cx const b = coil_profile_at(c, ncoils, prof, x, y, z);
        worst = std::max(worst, std::abs(a - b));
      }
    }
    return worst;
  };
  prof.x_stagger = 0.0;
  CHECK(check_rotation(8, 1) < 1e-6);
  // with the readout stagger the symmetry steps over coil pairs
  prof.x_stagger = 0.5;
  CHECK(check_rotation(8, 2) < 1e-6);
  CHECK(check_rotation(8, 1) > 1e-3);

  // on a square grid, a quarter turn maps voxels onto voxels
  prof.x_stagger = 0.0;
  auto const s = make_coil_sensitivities(4, 4, 8, 8, prof);
  for (Index z = 1; z < 8; z++) {
    for (Index y = 1; y < 8; y++) {
      // (y, z) -> (-z, y) in centered indices
      Index const ry = 8 - z;
      Index const rz = y;
      for (int c = 0; c < 4; c++) {
        CHECK(std::abs(s.maps[(c + 1) % 4](2, ry, rz) - s.maps[c](2, y, z)) < 1e-6);
      }
    }
  }
}

TEST_CASE("acquisition simulation")
{
  Rng rng(12);
  Dims const d{8, 8, 8};
  CoilSensitivities one{{ComplexVolume(d, Cx(1.0))}};
  WaveOperator op(one, make_wave_psf(desk_wave_spec(0.0, 1), 8, 8, 8));
  ContrastStack truth{rng.volume(d)};
  auto const full = make_multicontrast_pattern(8, 8, {1, 1, 0}, 1, StaggerMode::Fixed);
  auto const b = simulate_acquisition(truth, op, full, 0.0, 1);
  CHECK(rel_diff(b[0].volumes[0], fft_centered(truth[0], kAxesXYZ, FftDirection::Forward)) < 1e-13);
  CHECK_THROWS_AS(simulate_acquisition(truth, op, full, -1.0, 1), InvalidInput);

  auto const acc = make_multicontrast_pattern(8, 8, {2, 2, 1}, 1, StaggerMode::Fixed);
  auto const noisy = simulate_acquisition(truth, op, acc, 0.5, 9);
  auto const again = simulate_acquisition(truth, op, acc, 0.5, 9);
  CHECK((noisy[0].volumes[0].array() == again[0].volumes[0].array()).all());
  for (Index z = 0; z < 8; z++) {
    for (Index y = 0; y < 8; y++) {
      if (!acc.masks[0](y, z)) {
        for (Index x = 0; x < 8; x++) {
          CHECK(noisy[0].volumes[0](x, y, z) == Cx(0.0));
        }
      }
    }
  }
}

TEST_CASE("noise-only acquisition has variance 2 sigma^2")
{
  Dims const d{32, 32, 32};
  auto s = make_setup(d, 4, 0.0, 1);
  double const sigma = 0.3;
  Mask const m = full_mask(d.ny, d.nz);
  auto const b = sample_noise(s.op, m, sigma, 4);
  double sum = 0.0;
  Index n = 0;
  for (auto const &v : b.volumes) {
    sum += squared_norm(v);
    n += v.size();
  }
  REQUIRE(n >= 100000);
  double const var = sum / static_cast<double>(n);
  CHECK(std::abs(var / (2.0 * sigma * sigma) - 1.0) < 0.05);
}

TEST_CASE("fully sampled noiseless acquisition is recovered by CG")
{
  Dims const d{8, 6, 4};
  auto s = make_setup(d, 4, 8.8, 2, 3);
  Rng rng(6);
  auto const x = rng.volume(d);
  auto const pat = make_multicontrast_pattern(d.ny, d.nz, {1, 1, 0}, 1, StaggerMode::Fixed);
  auto const b = simulate_acquisition({x}, s.op, pat, 0.0, 0);
  CgConfig cfg;
  cfg.max_iters = 200;
  cfg.tolerance = 1e-14;
  auto const rec = wave_caipi_recon(b[0], s.op, pat.masks[0], cfg);
  CHECK(rel_diff(rec, x) < 1e-8);
}

TEST_CASE("sensitivities restricted to a support")
{
  Dims const d{10, 12, 8};
  auto const ph = make_phantom(brain_phantom_spec(d));
  auto s = make_setup(d, 4, 8.8);
  auto const masked = restrict_to_support(s.sens, ph.tissue.labels);
  for (Index c = 0; c < 4; c++) {
    for (Index i = 0; i < d.size(); i++) {
      CHECK(masked.maps[c][i] == (ph.tissue.labels[i] != 0 ? s.sens.maps[c][i] : Cx(0.0)));
    }
  }
  // objects inside the support see the same encoding
  WaveOperator const op(masked, s.op.psf());
  Mask const mask = make_caipi_mask(d.ny, d.nz, {2, 2, 1});
  auto const a = op.forward(ph.contrasts[0], mask);
  auto const b = s.op.forward(ph.contrasts[0], mask);
  for (Index c = 0; c < 4; c++) {
    CHECK((a.volumes[c].array() == b.volumes[c].array()).all());
  }
  CHECK_THROWS_AS(restrict_to_support(s.sens, LabelVolume(Dims{10, 12, 7})), InvalidInput);
}
