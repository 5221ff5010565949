#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wmodl/errors.hpp"

namespace wmodl {

using Index = Eigen::Index;
using Cx = std::complex<double>;

enum class Domain : std::uint8_t
{
  Image = 0,
  Frequency = 1
};

/// Bit set over the three spatial axes. x is the readout axis.
enum AxisSet : unsigned
{
  kAxisX = 1u,
  kAxisY = 2u,
  kAxisZ = 4u,
  kAxesYZ = kAxisY | kAxisZ,
  kAxesXYZ = kAxisX | kAxisY | kAxisZ
};

enum class FftDirection
{
  Forward,
  Inverse
};

struct Dims
{
  Index nx = 0;
  Index ny = 0;
  Index nz = 0;

  Index size() const { return nx * ny * nz; }
  Index operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  bool operator==(Dims const &) const = default;
};

std::string to_string(Dims const &d);

/// Dense 3D array, x-fastest storage, with a domain tag per axis.
template <typename Scalar>
class Volume
{
public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Volume() = default;

  explicit Volume(Dims dims, Scalar fill = Scalar(0))
    : dims_(dims)
    , data_(Storage::Constant(dims.size(), fill))
  {
    if (dims.nx < 0 || dims.ny < 0 || dims.nz < 0) {
      throw InvalidInput("negative volume dimension " + to_string(dims));
    }
  }

  Volume(Dims dims, Storage data)
    : dims_(dims)
    , data_(std::move(data))
  {
    if (data_.size() != dims.size()) {
      throw InvalidInput("volume data length does not match " + to_string(dims));
    }
  }

  static Volume Zero(Dims dims) { return Volume(dims); }

  Dims const &dims() const { return dims_; }
  Index size() const { return data_.size(); }

  Storage &array() { return data_; }
  Storage const &array() const { return data_; }
  Scalar *data() { return data_.data(); }
  Scalar const *data() const { return data_.data(); }

  Index linear(Index x, Index y, Index z) const { return x + dims_.nx * (y + dims_.ny * z); }
  Scalar &operator()(Index x, Index y, Index z) { return data_[linear(x, y, z)]; }
  Scalar const &operator()(Index x, Index y, Index z) const { return data_[linear(x, y, z)]; }
  Scalar &operator[](Index i) { return data_[i]; }
  Scalar const &operator[](Index i) const { return data_[i]; }

  Domain domain(int axis) const { return domains_[axis]; }
  void set_domain(int axis, Domain d) { domains_[axis] = d; }
  std::array<Domain, 3> const &domains() const { return domains_; }
  void set_domains(std::array<Domain, 3> const &d) { domains_ = d; }

  bool same_shape(Volume const &o) const { return dims_ == o.dims_; }

private:
  Dims dims_{};
  Storage data_;
  std::array<Domain, 3> domains_{Domain::Image, Domain::Image, Domain::Image};
};

using ComplexVolume = Volume<Cx>;
using RealVolume = Volume<double>;
using LabelVolume = Volume<std::int32_t>;

/// One ComplexVolume per receive coil, all with identical dims.
struct MultiCoilData
{
  std::vector<ComplexVolume> volumes;

  Index ncoils() const { return static_cast<Index>(volumes.size()); }
  Dims dims() const { return volumes.empty() ? Dims{} : volumes.front().dims(); }
  void validate() const;
};

/// Image-domain coil maps, normalized so the root-sum-of-squares is at most one.
struct CoilSensitivities
{
  std::vector<ComplexVolume> maps;

  Index ncoils() const { return static_cast<Index>(maps.size()); }
  Dims dims() const { return maps.empty() ? Dims{} : maps.front().dims(); }
  RealVolume rss() const;
  void validate(double tol = 1e-9) const;
};

/// One image per contrast.
using ContrastStack = std::vector<ComplexVolume>;

/// Centered, unitary DFT along the requested axes. Domain tags of the
/// transformed axes are flipped.
ComplexVolume fft_centered(ComplexVolume const &v, unsigned axes, FftDirection dir);

/// In-place variant used by the operators.
void fft_centered_inplace(ComplexVolume &v, unsigned axes, FftDirection dir);

/// sum conj(a) * b
Cx inner_product(ComplexVolume const &a, ComplexVolume const &b);
Cx inner_product(MultiCoilData const &a, MultiCoilData const &b);

double squared_norm(ComplexVolume const &v);
double squared_norm(MultiCoilData const &v);
double norm(ComplexVolume const &v);
double norm(MultiCoilData const &v);

bool all_finite(ComplexVolume const &v);

RealVolume magnitude(ComplexVolume const &v);
ComplexVolume to_complex(RealVolume const &v);

} // namespace wmodl
