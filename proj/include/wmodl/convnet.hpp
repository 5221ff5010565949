#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "wmodl/volume.hpp"

namespace wmodl {

/// Real feature maps, channels x pixels. Pixel p = iy + ny * iz + ny * nz * ix, so
/// every readout position ix owns one contiguous (y, z) plane.
using FeatureMap = Eigen::MatrixXd;

struct PlaneGeometry
{
  Index planes = 0; ///< nx
  Index ny = 0;
  Index nz = 0;

  Index plane_size() const { return ny * nz; }
  Index pixels() const { return planes * ny * nz; }
};

struct ConvLayer
{
  Eigen::MatrixXd weight; ///< out x (in * k * k), column = (in * k + ky) * k + kz
  Eigen::VectorXd bias;

  Index in_channels(int kernel) const { return weight.cols() / (kernel * kernel); }
  Index out_channels() const { return weight.rows(); }
};

enum class ConvInit
{
  Uniform,  ///< hidden weights ~ U(-init_scale, init_scale)
  HeUniform ///< hidden weights ~ U(-b, b), b = sqrt(6 / fan_in), slope-corrected
};

struct ConvArch
{
  int width = 24;
  int hidden_layers = 5;
  int kernel = 3;
  double leaky_slope = 0.1;
  ConvInit init = ConvInit::Uniform;
  double init_scale = 1e-2; ///< Uniform only; the output layer always starts at zero
};

/// in -> width x hidden_layers -> out, 2D same-padded convolutions over (y, z)
/// planes with leaky ReLU between layers and none after the last.
struct ConvNetParams
{
  int kernel = 3;
  double leaky_slope = 0.1;
  std::vector<ConvLayer> layers;

  Index in_channels() const { return layers.front().in_channels(kernel); }
  Index out_channels() const { return layers.back().out_channels(); }
  Index parameter_count() const;

  void set_zero();
  void zero_output_layer();
  void validate() const;
};

ConvNetParams make_convnet(int io_channels, ConvArch const &arch, std::uint64_t seed);

/// Layer inputs and pre-activations recorded by a taped forward pass.
struct ConvTape
{
  PlaneGeometry geom;
  std::vector<FeatureMap> inputs;
  std::vector<FeatureMap> pre;
};

FeatureMap conv_apply(ConvNetParams const &p, FeatureMap const &x, PlaneGeometry const &g, ConvTape *tape = nullptr);

/// Accumulates parameter gradients into `grads` (same shapes as p) and returns dL/dx.
FeatureMap conv_backward(ConvNetParams const &p, ConvTape const &tape, FeatureMap const &grad_out, ConvNetParams &grads);

/// Real parts of all contrasts first, then imaginary parts.
FeatureMap pack_channels(ContrastStack const &x);
ContrastStack unpack_channels(FeatureMap const &f, Dims const &d);
PlaneGeometry plane_geometry(Dims const &d);

/// Flatten / restore parameters in a fixed order (per layer: weights row-major, then bias).
void append_parameters(ConvNetParams const &p, std::vector<double> &out);
std::size_t assign_parameters(ConvNetParams &p, std::vector<double> const &flat, std::size_t offset);

} // namespace wmodl
