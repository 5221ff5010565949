#include "wmodl/wave.hpp"

#include <cmath>
#include <numbers>

namespace wmodl {

void WaveGradientSpec::validate() const
{
  if (gmax_mT_per_m < 0.0) {
    throw InvalidInput("gmax must be >= 0");
  }
  if (gmax_mT_per_m > 0.0 && cycles < 1) {
    throw InvalidInput("wave cycles must be >= 1 when gmax > 0");
  }
  if (!(bw_per_pixel_hz > 0.0)) {
    throw InvalidInput("bandwidth per pixel must be positive");
  }
  if (osx < 1) {
    throw InvalidInput("readout oversampling must be >= 1");
  }
  for (double f : fov_m) {
    if (!(f > 0.0)) {
      throw InvalidInput("field of view must be positive");
    }
  }
}

GradientMoments gradient_moment(WaveGradientSpec const &spec, Index nsamples)
{
  spec.validate();
  if (nsamples < 1) {
    throw InvalidInput("gradient_moment: nsamples must be >= 1");
  }
  GradientMoments m;
  m.ky.assign(nsamples, 0.0);
  m.kz.assign(nsamples, 0.0);
  if (spec.gmax_mT_per_m == 0.0) {
    return m;
  }
  double const t_ro = spec.readout_duration_s();
  double const omega = 2.0 * std::numbers::pi * spec.wave_frequency_hz();
  double const amp = kGammaBarHzPerT * spec.gmax_mT_per_m * 1e-3 / omega;
  for (Index j = 0; j < nsamples; j++) {
    double const t = (j + 0.5) * t_ro / nsamples;
    double const from_cos = amp * std::sin(omega * t);       // integral of cos
    double const from_sin = amp * (1.0 - std::cos(omega * t)); // integral of sin
    if (spec.assignment == WaveAssignment::CosineY) {
      m.ky[j] = from_cos;
      m.kz[j] = from_sin;
    } else {
      m.ky[j] = from_sin;
      m.kz[j] = from_cos;
    }
  }
  return m;
}

WavePsf make_wave_psf(WaveGradientSpec const &spec, Index nx, Index ny, Index nz)
{
  if (nx < 1 || ny < 1 || nz < 1) {
    throw InvalidInput("make_wave_psf: dims must be >= 1");
  }
  Index const ns = spec.osx * nx;
  auto const k = gradient_moment(spec, ns);
  WavePsf psf;
  psf.osx = spec.osx;
  psf.table = ComplexVolume(Dims{ns, ny, nz}, Cx{1.0, 0.0});
  psf.table.set_domain(0, Domain::Frequency);
  double const two_pi = 2.0 * std::numbers::pi;
  for (Index iz = 0; iz < nz; iz++) {
    double const z = centered_coordinate(iz, nz, spec.fov_m[2]);
    for (Index iy = 0; iy < ny; iy++) {
      double const y = centered_coordinate(iy, ny, spec.fov_m[1]);
      for (Index j = 0; j < ns; j++) {
        double const phase = -two_pi * (k.ky[j] * y + k.kz[j] * z);
        psf.table(j, iy, iz) = std::polar(1.0, phase);
      }
    }
  }
  return psf;
}

WaveOperator::WaveOperator(CoilSensitivities sens, WavePsf psf)
  : sens_(std::move(sens))
  , psf_(std::move(psf))
{
  if (sens_.maps.empty()) {
    throw InvalidInput("WaveOperator: no coils");
  }
  if (psf_.osx < 1 || psf_.table.dims().nx % psf_.osx != 0) {
    throw InvalidInput("WaveOperator: PSF readout length is not a multiple of osx");
  }
  image_dims_ = psf_.image_dims();
  for (auto const &m : sens_.maps) {
    if (!(m.dims() == image_dims_)) {
      throw InvalidInput("WaveOperator: sensitivity dims " + to_string(m.dims()) + " do not match PSF image dims " +
                         to_string(image_dims_));
    }
  }
}

void WaveOperator::check_image(ComplexVolume const &x) const
{
  if (!(x.dims() == image_dims_)) {
    throw InvalidInput("wave operator: image dims " + to_string(x.dims()) + " expected " + to_string(image_dims_));
  }
  for (int a = 0; a < 3; a++) {
    if (x.domain(a) != Domain::Image) {
      throw InvalidInput("wave operator: input must be in the image domain");
    }
  }
}

void WaveOperator::check_mask(Mask const &mask) const
{
  if (mask.rows() != image_dims_.ny || mask.cols() != image_dims_.nz) {
    throw InvalidInput("wave operator: mask dims do not match (ny, nz)");
  }
}

ComplexVolume WaveOperator::encode_coil(ComplexVolume const &x, Index coil, Mask const &mask) const
{
  Dims const kd = kspace_dims();
  Index const nx = image_dims_.nx;
  Index const offset = kd.nx / 2 - nx / 2;
  ComplexVolume k(kd);
  auto const &s = sens_.maps[coil];
  for (Index iz = 0; iz < kd.nz; iz++) {
    for (Index iy = 0; iy < kd.ny; iy++) {
      Index const src = image_dims_.nx * (iy + image_dims_.ny * iz);
      Index const dst = kd.nx * (iy + kd.ny * iz) + offset;
      for (Index ix = 0; ix < nx; ix++) {
        k[dst + ix] = x[src + ix] * s[src + ix];
      }
    }
  }
  fft_centered_inplace(k, kAxisX, FftDirection::Forward);
  k.array() *= psf_.table.array();
  fft_centered_inplace(k, kAxesYZ, FftDirection::Forward);
  for (Index iz = 0; iz < kd.nz; iz++) {
    for (Index iy = 0; iy < kd.ny; iy++) {
      if (!mask(iy, iz)) {
        k.array().segment(kd.nx * (iy + kd.ny * iz), kd.nx).setZero();
      }
    }
  }
  return k;
}

void WaveOperator::decode_coil_accumulate(ComplexVolume &&k, Index coil, Mask const &mask, ComplexVolume &acc) const
{
  Dims const kd = kspace_dims();
  for (Index iz = 0; iz < kd.nz; iz++) {
    for (Index iy = 0; iy < kd.ny; iy++) {
      if (!mask(iy, iz)) {
        k.array().segment(kd.nx * (iy + kd.ny * iz), kd.nx).setZero();
      }
    }
  }
  fft_centered_inplace(k, kAxesYZ, FftDirection::Inverse);
  k.array() *= psf_.table.array().conjugate();
  fft_centered_inplace(k, kAxisX, FftDirection::Inverse);
  Index const nx = image_dims_.nx;
  Index const offset = kd.nx / 2 - nx / 2;
  auto const &s = sens_.maps[coil];
  for (Index iz = 0; iz < kd.nz; iz++) {
    for (Index iy = 0; iy < kd.ny; iy++) {
      Index const dst = image_dims_.nx * (iy + image_dims_.ny * iz);
      Index const src = kd.nx * (iy + kd.ny * iz) + offset;
      for (Index ix = 0; ix < nx; ix++) {
        acc[dst + ix] += std::conj(s[dst + ix]) * k[src + ix];
      }
    }
  }
}

MultiCoilData WaveOperator::forward(ComplexVolume const &x, Mask const &mask) const
{
  check_image(x);
  check_mask(mask);
  MultiCoilData out;
  out.volumes.reserve(ncoils());
  for (Index c = 0; c < ncoils(); c++) {
    out.volumes.push_back(encode_coil(x, c, mask));
  }
  return out;
}

ComplexVolume WaveOperator::adjoint(MultiCoilData const &b, Mask const &mask) const
{
  check_mask(mask);
  if (b.ncoils() != ncoils()) {
    throw InvalidInput("wave_adjoint: coil count mismatch");
  }
  ComplexVolume acc(image_dims_);
  for (Index c = 0; c < ncoils(); c++) {
    if (!(b.volumes[c].dims() == kspace_dims())) {
      throw InvalidInput("wave_adjoint: k-space dims " + to_string(b.volumes[c].dims()) + " expected " +
                         to_string(kspace_dims()));
    }
    for (int a = 0; a < 3; a++) {
      if (b.volumes[c].domain(a) != Domain::Frequency) {
        throw InvalidInput("wave_adjoint: k-space input must be tagged frequency on every axis");
      }
    }
    ComplexVolume k = b.volumes[c];
    decode_coil_accumulate(std::move(k), c, mask, acc);
  }
  return acc;
}

ComplexVolume WaveOperator::normal(ComplexVolume const &x, Mask const &mask) const
{
  check_image(x);
  check_mask(mask);
  ComplexVolume acc(image_dims_);
  for (Index c = 0; c < ncoils(); c++) {
    decode_coil_accumulate(encode_coil(x, c, mask), c, mask, acc);
  }
  return acc;
}

MultiCoilData wave_forward(ComplexVolume const &x, CoilSensitivities const &C, WavePsf const &P, Mask const &mask)
{
  return WaveOperator(C, P).forward(x, mask);
}

ComplexVolume wave_adjoint(MultiCoilData const &b, CoilSensitivities const &C, WavePsf const &P, Mask const &mask)
{
  return WaveOperator(C, P).adjoint(b, mask);
}

} // namespace wmodl
