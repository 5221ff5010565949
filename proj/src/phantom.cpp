#include "wmodl/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace wmodl {

std::map<std::int32_t, TissueProps> default_tissue_table()
{
  return {{kWhiteMatter, {830.0, 70.0, 0.7}}, {kGrayMatter, {1300.0, 90.0, 0.85}}, {kCsf, {4000.0, 2000.0, 1.0}}};
}

void TissueMap::validate() const
{
  for (auto const &[label, p] : table) {
    if (!(p.t1_ms > p.t2_ms) || !(p.t2_ms > 0.0) || p.pd < 0.0) {
      throw InvalidInput("tissue " + std::to_string(label) + " violates T1 > T2 > 0, PD >= 0");
    }
  }
  for (Index i = 0; i < labels.size(); i++) {
    if (labels[i] != 0 && !table.contains(labels[i])) {
      throw InvalidInput("label " + std::to_string(labels[i]) + " missing from tissue table");
    }
  }
}

ParameterMaps TissueMap::truth_maps() const
{
  Dims const d = labels.dims();
  ParameterMaps m{RealVolume(d), RealVolume(d), RealVolume(d), RealVolume(d), LabelVolume(d)};
  for (Index i = 0; i < d.size(); i++) {
    if (labels[i] == 0) {
      continue;
    }
    auto const &p = table.at(labels[i]);
    m.t1[i] = p.t1_ms;
    m.t2[i] = p.t2_ms;
    m.pd[i] = p.pd;
  }
  return m;
}

bool Ellipsoid::contains(double x, double y, double z) const
{
  double const dx = x - center[0];
  double const dy = y - center[1];
  double const dz = z - center[2];
  double const c = std::cos(rotation_rad);
  double const s = std::sin(rotation_rad);
  double const u = (c * dx + s * dy) / semi_axes[0];
  double const v = (-s * dx + c * dy) / semi_axes[1];
  double const w = dz / semi_axes[2];
  return u * u + v * v + w * w <= 1.0;
}

void PhantomSpec::validate() const
{
  if (dims.nx < 8 || dims.ny < 8 || dims.nz < 8) {
    throw InvalidInput("phantom grid must be at least 8 voxels per axis, got " + to_string(dims));
  }
  if (ellipsoids.empty()) {
    throw InvalidInput("phantom spec has no ellipsoids");
  }
  for (auto const &e : ellipsoids) {
    for (double a : e.semi_axes) {
      if (!(a > 0.0)) {
        throw InvalidInput("ellipsoid semi-axes must be positive");
      }
    }
    if (e.label != 0 && !table.contains(e.label)) {
      throw InvalidInput("ellipsoid label " + std::to_string(e.label) + " not in tissue table");
    }
  }
}

PhantomSpec brain_phantom_spec(Dims dims, double jitter, std::uint64_t seed)
{
  PhantomSpec spec;
  spec.dims = dims;
  spec.ellipsoids = {
    {{0.0, 0.0, 0.0}, {0.86, 0.86, 0.86}, 0.0, kGrayMatter},
    {{0.0, 0.03, 0.0}, {0.62, 0.60, 0.50}, 0.0, kWhiteMatter},
    {{0.05, 0.16, 0.08}, {0.30, 0.07, 0.14}, 0.25, kCsf},
    {{0.05, -0.14, 0.08}, {0.30, 0.07, 0.14}, -0.25, kCsf},
    {{-0.30, -0.28, -0.18}, {0.13, 0.11, 0.16}, 0.0, kGrayMatter},
    {{0.38, -0.30, 0.22}, {0.07, 0.07, 0.08}, 0.0, kCsf},
  };
  if (jitter > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto &e : spec.ellipsoids) {
      for (int a = 0; a < 3; a++) {
        e.center[a] += 0.08 * jitter * u(rng);
        e.semi_axes[a] *= 1.0 + 0.12 * jitter * u(rng);
      }
      e.rotation_rad += 0.3 * jitter * u(rng);
    }
  }
  return spec;
}

Phantom make_phantom(PhantomSpec const &spec)
{
  spec.validate();
  Dims const d = spec.dims;
  Phantom ph;
  ph.tissue.table = spec.table;
  ph.tissue.labels = LabelVolume(d);
  for (Index iz = 0; iz < d.nz; iz++) {
    double const z = normalized_coordinate(iz, d.nz);
    for (Index iy = 0; iy < d.ny; iy++) {
      double const y = normalized_coordinate(iy, d.ny);
      for (Index ix = 0; ix < d.nx; ix++) {
        double const x = normalized_coordinate(ix, d.nx);
        for (auto const &e : spec.ellipsoids) {
          if (e.contains(x, y, z)) {
            ph.tissue.labels(ix, iy, iz) = e.label;
          }
        }
      }
    }
  }
  ph.tissue.validate();

  if (spec.generator == ContrastGenerator::Direct) {
    ComplexVolume img(d);
    for (Index i = 0; i < d.size(); i++) {
      auto const l = ph.tissue.labels[i];
      img[i] = l == 0 ? 0.0 : spec.table.at(l).pd;
    }
    ph.contrasts.push_back(std::move(img));
    return ph;
  }

  std::map<std::int32_t, QalasSignal> signals;
  for (auto const &[label, p] : spec.table) {
    signals[label] = qalas_signal(p.t1_ms, p.t2_ms, p.pd, spec.timing);
  }
  for (int m = 0; m < kQalasContrasts; m++) {
    ComplexVolume img(d);
    for (Index i = 0; i < d.size(); i++) {
      auto const l = ph.tissue.labels[i];
      img[i] = l == 0 ? 0.0 : signals.at(l)[m];
    }
    ph.contrasts.push_back(std::move(img));
  }
  return ph;
}

Cx coil_profile_at(int coil, int ncoils, CoilProfile const &profile, double x, double y, double z)
{
  double const radius = 0.5 * std::hypot(profile.fov_m[1], profile.fov_m[2]);
  double const theta = 2.0 * std::numbers::pi * coil / ncoils;
  double const uy = std::cos(theta);
  double const uz = std::sin(theta);
  double xc = 0.0;
  if (ncoils > 1 && profile.x_stagger != 0.0) {
    xc = (coil % 2 ? 1.0 : -1.0) * profile.x_stagger * 0.5 * profile.fov_m[0];
  }
  double const w = profile.width * radius;
  double const d2 = (x - xc) * (x - xc) + (y - radius * uy) * (y - radius * uy) + (z - radius * uz) * (z - radius * uz);
  double const mag = std::exp(-d2 / (2.0 * w * w));
  double const phase = 2.0 * std::numbers::pi * profile.phase_cycles * (y * uy + z * uz) / radius;
  return std::polar(mag, phase);
}

namespace {

std::vector<ComplexVolume> raw_coils(int ncoils, Index nx, Index ny, Index nz, CoilProfile const &profile)
{
  std::vector<ComplexVolume> maps;
  for (int c = 0; c < ncoils; c++) {
    ComplexVolume m(Dims{nx, ny, nz});
    for (Index iz = 0; iz < nz; iz++) {
      double const z = centered_coordinate(iz, nz, profile.fov_m[2]);
      for (Index iy = 0; iy < ny; iy++) {
        double const y = centered_coordinate(iy, ny, profile.fov_m[1]);
        for (Index ix = 0; ix < nx; ix++) {
          double const x = centered_coordinate(ix, nx, profile.fov_m[0]);
          m(ix, iy, iz) = coil_profile_at(c, ncoils, profile, x, y, z);
        }
      }
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

} // namespace

double coil_normalization(int ncoils, Index nx, Index ny, Index nz, CoilProfile const &profile)
{
  CoilSensitivities s{raw_coils(ncoils, nx, ny, nz, profile)};
  return 1.0 / s.rss().array().maxCoeff();
}

CoilSensitivities make_coil_sensitivities(int ncoils, Index nx, Index ny, Index nz, CoilProfile const &profile)
{
  if (ncoils < 1) {
    throw InvalidInput("need at least one coil");
  }
  if (nx < 1 || ny < 1 || nz < 1) {
    throw InvalidInput("coil grid dims must be positive");
  }
  CoilSensitivities s{raw_coils(ncoils, nx, ny, nz, profile)};
  double const scale = 1.0 / s.rss().array().maxCoeff();
  for (auto &m : s.maps) {
    m.array() *= scale;
  }
  return s;
}

namespace {

void add_noise(MultiCoilData &b, Mask const &mask, double sigma, std::mt19937_64 &rng)
{
  std::normal_distribution<double> n(0.0, sigma);
  for (auto &v : b.volumes) {
    Dims const d = v.dims();
    for (Index iz = 0; iz < d.nz; iz++) {
      for (Index iy = 0; iy < d.ny; iy++) {
        if (!mask(iy, iz)) {
          continue;
        }
        for (Index ix = 0; ix < d.nx; ix++) {
          double const re = n(rng);
          double const im = n(rng);
          v(ix, iy, iz) += Cx(re, im);
        }
      }
    }
  }
}

} // namespace

CoilSensitivities restrict_to_support(CoilSensitivities sens, LabelVolume const &support)
{
  for (auto &m : sens.maps) {
    if (m.dims() != support.dims()) {
      throw InvalidInput("support shape " + to_string(support.dims()) + " differs from sensitivities " + to_string(m.dims()));
    }
    m.array() *= (support.array() != 0).cast<double>();
  }
  return sens;
}

std::vector<MultiCoilData> simulate_acquisition(ContrastStack const &truth,
                                                WaveOperator const &op,
                                                SamplingPattern const &pattern,
                                                double noise_sigma,
                                                std::uint64_t seed)
{
  if (noise_sigma < 0.0) {
    throw InvalidInput("noise sigma must be >= 0");
  }
  if (static_cast<int>(truth.size()) != pattern.ncontrasts()) {
    throw InvalidInput("simulate_acquisition: " + std::to_string(truth.size()) + " contrasts but pattern has " +
                       std::to_string(pattern.ncontrasts()));
  }
  std::mt19937_64 rng(seed);
  std::vector<MultiCoilData> out;
  for (std::size_t m = 0; m < truth.size(); m++) {
    MultiCoilData b = op.forward(truth[m], pattern.masks[m]);
    if (noise_sigma > 0.0) {
      add_noise(b, pattern.masks[m], noise_sigma, rng);
    }
    out.push_back(std::move(b));
  }
  return out;
}

MultiCoilData sample_noise(WaveOperator const &op, Mask const &mask, double noise_sigma, std::uint64_t seed)
{
  if (noise_sigma < 0.0) {
    throw InvalidInput("noise sigma must be >= 0");
  }
  MultiCoilData b;
  for (Index c = 0; c < op.ncoils(); c++) {
    ComplexVolume v(op.kspace_dims());
    v.set_domains({Domain::Frequency, Domain::Frequency, Domain::Frequency});
    b.volumes.push_back(std::move(v));
  }
  std::mt19937_64 rng(seed);
  add_noise(b, mask, noise_sigma, rng);
  return b;
}

} // namespace wmodl
