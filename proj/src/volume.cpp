#include "wmodl/volume.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <utility>

#include <unsupported/Eigen/FFT>

namespace wmodl {

std::string to_string(Dims const &d)
{
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

void MultiCoilData::validate() const
{
  if (volumes.empty()) {
    throw InvalidInput("multi-coil data has no coils");
  }
  for (auto const &v : volumes) {
    if (!(v.dims() == volumes.front().dims()) || v.domains() != volumes.front().domains()) {
      throw InvalidInput("coil volumes differ in dimensions or domain");
    }
  }
}

RealVolume CoilSensitivities::rss() const
{
  RealVolume out(dims());
  for (auto const &m : maps) {
    out.array() += m.array().abs2();
  }
  out.array() = out.array().sqrt();
  return out;
}

void CoilSensitivities::validate(double tol) const
{
  if (maps.empty()) {
    throw InvalidInput("coil sensitivities have no coils");
  }
  for (auto const &m : maps) {
    if (!(m.dims() == maps.front().dims())) {
      throw InvalidInput("coil maps differ in dimensions");
    }
    if (!all_finite(m)) {
      throw InvalidInput("coil map contains non-finite values");
    }
  }
  if (rss().array().maxCoeff() > 1.0 + tol) {
    throw InvalidInput("coil sensitivities are not normalized (RSS > 1)");
  }
}

namespace {

Eigen::FFT<double> &fft_engine()
{
  thread_local Eigen::FFT<double> engine = [] {
    Eigen::FFT<double> f;
    f.SetFlag(Eigen::FFT<double>::Unscaled);
    return f;
  }();
  return engine;
}

// Short axes go through a dense centered unitary DFT matrix as one GEMM per slab;
// per-line FFT calls cost more than the extra flops at these lengths.
constexpr Index kDenseDftMax = 64;

Eigen::MatrixXcd const &dense_dft(Index n, FftDirection dir)
{
  thread_local std::map<std::pair<Index, int>, Eigen::MatrixXcd> cache;
  auto key = std::make_pair(n, dir == FftDirection::Forward ? 0 : 1);
  auto it = cache.find(key);
  if (it != cache.end()) {
    return it->second;
  }
  double const sgn = dir == FftDirection::Forward ? -1.0 : 1.0;
  double const scale = 1.0 / std::sqrt(static_cast<double>(n));
  Eigen::MatrixXcd F(n, n);
  for (Index k = 0; k < n; k++) {
    for (Index j = 0; j < n; j++) {
      // reduce the phase index mod n before converting, to keep the angle small
      Index const e = (((k - n / 2) * (j - n / 2)) % n + n) % n;
      F(k, j) = std::polar(scale, sgn * 2.0 * std::numbers::pi * static_cast<double>(e) / static_cast<double>(n));
    }
  }
  return cache.emplace(key, std::move(F)).first->second;
}

void dft_axis_dense(Cx *data, Dims const &d, int axis, FftDirection dir)
{
  Index const n = d[axis];
  auto const &F = dense_dft(n, dir);
  using Map = Eigen::Map<Eigen::MatrixXcd>;
  if (axis == 0) {
    Map m(data, d.nx, d.ny * d.nz);
    m = (F * m).eval();
  } else if (axis == 1) {
    for (Index z = 0; z < d.nz; z++) {
      Map m(data + z * d.nx * d.ny, d.nx, d.ny);
      m = (m * F.transpose()).eval();
    }
  } else {
    Map m(data, d.nx * d.ny, d.nz);
    m = (m * F.transpose()).eval();
  }
}

// Transform every line along one axis. stride/lines describe the layout.
void fft_axis(Cx *data, Dims const &d, int axis, FftDirection dir)
{
  Index const n = d[axis];
  if (n == 1) {
    return;
  }
  if (n <= kDenseDftMax) {
    dft_axis_dense(data, d, axis, dir);
    return;
  }
  Index const stride = axis == 0 ? 1 : (axis == 1 ? d.nx : d.nx * d.ny);
  Index const outer = axis == 2 ? 1 : (axis == 1 ? d.nz : d.ny * d.nz);
  Index const inner = axis == 0 ? 1 : (axis == 1 ? d.nx : d.nx * d.ny);
  // Lines are addressed by (o, i): base = o * n * inner + i  (inner == stride)
  Index const half = n / 2;
  Index const ceil_half = n - half;
  double const scale = 1.0 / std::sqrt(static_cast<double>(n));

  auto &engine = fft_engine();
  std::vector<Cx> in(n), out(n);
  for (Index o = 0; o < outer; o++) {
    for (Index i = 0; i < inner; i++) {
      Cx *line = data + o * n * inner + i;
      for (Index k = 0; k < n; k++) {
        Index const src = k + half < n ? k + half : k + half - n;
        in[k] = line[src * stride];
      }
      if (dir == FftDirection::Forward) {
        engine.fwd(out.data(), in.data(), n);
      } else {
        engine.inv(out.data(), in.data(), n);
      }
      for (Index k = 0; k < n; k++) {
        Index const src = k + ceil_half < n ? k + ceil_half : k + ceil_half - n;
        line[k * stride] = out[src] * scale;
      }
    }
  }
}

} // namespace

void fft_centered_inplace(ComplexVolume &v, unsigned axes, FftDirection dir)
{
  if ((axes & kAxesXYZ) == 0) {
    throw InvalidInput("fft_centered: empty axis set");
  }
  Dims const d = v.dims();
  for (int axis = 0; axis < 3; axis++) {
    if ((axes & (1u << axis)) && d[axis] == 0) {
      throw InvalidInput("fft_centered: zero-length axis " + std::to_string(axis));
    }
  }
  if (d.size() == 0) {
    return;
  }
  for (int axis = 0; axis < 3; axis++) {
    if (axes & (1u << axis)) {
      fft_axis(v.data(), d, axis, dir);
      v.set_domain(axis, v.domain(axis) == Domain::Image ? Domain::Frequency : Domain::Image);
    }
  }
}

ComplexVolume fft_centered(ComplexVolume const &v, unsigned axes, FftDirection dir)
{
  ComplexVolume out = v;
  fft_centered_inplace(out, axes, dir);
  return out;
}

Cx inner_product(ComplexVolume const &a, ComplexVolume const &b)
{
  if (!a.same_shape(b)) {
    throw InvalidInput("inner_product: shape mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  }
  return (a.array().conjugate() * b.array()).sum();
}

Cx inner_product(MultiCoilData const &a, MultiCoilData const &b)
{
  if (a.ncoils() != b.ncoils()) {
    throw InvalidInput("inner_product: coil count mismatch");
  }
  Cx sum{0.0, 0.0};
  for (Index c = 0; c < a.ncoils(); c++) {
    sum += inner_product(a.volumes[c], b.volumes[c]);
  }
  return sum;
}

double squared_norm(ComplexVolume const &v) { return v.array().abs2().sum(); }

double squared_norm(MultiCoilData const &v)
{
  double s = 0.0;
  for (auto const &c : v.volumes) {
    s += squared_norm(c);
  }
  return s;
}

double norm(ComplexVolume const &v) { return std::sqrt(squared_norm(v)); }
double norm(MultiCoilData const &v) { return std::sqrt(squared_norm(v)); }

bool all_finite(ComplexVolume const &v)
{
  return v.array().real().allFinite() && v.array().imag().allFinite();
}

RealVolume magnitude(ComplexVolume const &v)
{
  RealVolume out(v.dims());
  out.array() = v.array().abs();
  return out;
}

ComplexVolume to_complex(RealVolume const &v)
{
  ComplexVolume out(v.dims());
  out.array() = v.array().cast<Cx>();
  return out;
}

} // namespace wmodl
