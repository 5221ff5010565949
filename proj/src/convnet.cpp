#include "wmodl/convnet.hpp"

#include <cmath>
#include <random>

namespace wmodl {

Index ConvNetParams::parameter_count() const
{
  Index n = 0;
  for (auto const &l : layers) {
    n += l.weight.size() + l.bias.size();
  }
  return n;
}

void ConvNetParams::set_zero()
{
  for (auto &l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

void ConvNetParams::zero_output_layer()
{
  layers.back().weight.setZero();
  layers.back().bias.setZero();
}

void ConvNetParams::validate() const
{
  if (layers.empty()) {
    throw InvalidInput("conv net has no layers");
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw InvalidInput("conv kernel size must be odd and positive");
  }
  for (std::size_t l = 0; l < layers.size(); l++) {
    auto const &L = layers[l];
    if (L.weight.cols() % (kernel * kernel) != 0 || L.bias.size() != L.weight.rows()) {
      throw InvalidInput("conv layer " + std::to_string(l) + " has inconsistent shapes");
    }
    if (l > 0 && L.in_channels(kernel) != layers[l - 1].out_channels()) {
      throw InvalidInput("conv layer " + std::to_string(l) + " input channels do not match previous output");
    }
  }
  if (in_channels() != out_channels()) {
    throw InvalidInput("conv net input and output channel counts must match");
  }
}

ConvNetParams make_convnet(int io_channels, ConvArch const &arch, std::uint64_t seed)
{
  if (io_channels < 1 || arch.width < 1 || arch.hidden_layers < 1) {
    throw InvalidInput("conv net channel counts must be positive");
  }
  ConvNetParams p;
  p.kernel = arch.kernel;
  p.leaky_slope = arch.leaky_slope;
  int const k2 = arch.kernel * arch.kernel;
  std::mt19937_64 rng(seed);
  int in = io_channels;
  for (int l = 0; l <= arch.hidden_layers; l++) {
    int const out = l == arch.hidden_layers ? io_channels : arch.width;
    ConvLayer L;
    L.weight = Eigen::MatrixXd::Zero(out, in * k2);
    L.bias = Eigen::VectorXd::Zero(out);
    if (l < arch.hidden_layers) {
      double bound = arch.init_scale;
      if (arch.init == ConvInit::HeUniform) {
        double const a = arch.leaky_slope;
        bound = std::sqrt(6.0 / ((1.0 + a * a) * static_cast<double>(in * k2)));
      }
      std::uniform_real_distribution<double> u(-bound, bound);
      L.weight = L.weight.unaryExpr([&](double) { return u(rng); });
    }
    p.layers.push_back(std::move(L));
    in = out;
  }
  p.validate();
  return p;
}

namespace {

void im2col(FeatureMap const &in, Index plane, PlaneGeometry const &g, int k, Eigen::MatrixXd &col)
{
  Index const C = in.rows();
  Index const ps = g.plane_size();
  Index const base = plane * ps;
  int const h = k / 2;
  col.setZero(C * k * k, ps);
  for (Index c = 0; c < C; c++) {
    for (int a = 0; a < k; a++) {
      for (int b = 0; b < k; b++) {
        Index const row = (c * k + a) * k + b;
        int const dy = a - h;
        int const dz = b - h;
        for (Index iz = 0; iz < g.nz; iz++) {
          Index const zz = iz + dz;
          if (zz < 0 || zz >= g.nz) {
            continue;
          }
          Index const y0 = std::max<Index>(0, -dy);
          Index const y1 = std::min<Index>(g.ny, g.ny - dy);
          for (Index iy = y0; iy < y1; iy++) {
            col(row, iy + g.ny * iz) = in(c, base + iy + dy + g.ny * zz);
          }
        }
      }
    }
  }
}

void col2im_add(Eigen::MatrixXd const &col, Index plane, PlaneGeometry const &g, int k, FeatureMap &out)
{
  Index const C = out.rows();
  Index const base = plane * g.plane_size();
  int const h = k / 2;
  for (Index c = 0; c < C; c++) {
    for (int a = 0; a < k; a++) {
      for (int b = 0; b < k; b++) {
        Index const row = (c * k + a) * k + b;
        int const dy = a - h;
        int const dz = b - h;
        for (Index iz = 0; iz < g.nz; iz++) {
          Index const zz = iz + dz;
          if (zz < 0 || zz >= g.nz) {
            continue;
          }
          Index const y0 = std::max<Index>(0, -dy);
          Index const y1 = std::min<Index>(g.ny, g.ny - dy);
          for (Index iy = y0; iy < y1; iy++) {
            out(c, base + iy + dy + g.ny * zz) += col(row, iy + g.ny * iz);
          }
        }
      }
    }
  }
}

FeatureMap conv_layer(ConvLayer const &L, FeatureMap const &in, PlaneGeometry const &g, int k)
{
  Index const ps = g.plane_size();
  FeatureMap out(L.out_channels(), g.pixels());
  Eigen::MatrixXd col;
  for (Index pl = 0; pl < g.planes; pl++) {
    im2col(in, pl, g, k, col);
    out.middleCols(pl * ps, ps).noalias() = L.weight * col;
  }
  out.colwise() += L.bias;
  return out;
}

} // namespace

FeatureMap conv_apply(ConvNetParams const &p, FeatureMap const &x, PlaneGeometry const &g, ConvTape *tape)
{
  if (x.rows() != p.in_channels()) {
    throw InvalidInput("conv_apply: input has " + std::to_string(x.rows()) + " channels, net expects " +
                       std::to_string(p.in_channels()));
  }
  if (x.cols() != g.pixels()) {
    throw InvalidInput("conv_apply: pixel count does not match geometry");
  }
  if (g.ny < p.kernel || g.nz < p.kernel) {
    throw InvalidInput("conv_apply: spatial dims smaller than the kernel");
  }
  if (tape) {
    tape->geom = g;
    tape->inputs.clear();
    tape->pre.clear();
  }
  FeatureMap h = x;
  double const slope = p.leaky_slope;
  for (std::size_t l = 0; l < p.layers.size(); l++) {
    FeatureMap pre = conv_layer(p.layers[l], h, g, p.kernel);
    if (tape) {
      tape->inputs.push_back(std::move(h));
    }
    if (l + 1 < p.layers.size()) {
      h = pre.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    } else {
      h = pre;
    }
    if (tape) {
      tape->pre.push_back(std::move(pre));
    }
  }
  return h;
}

FeatureMap conv_backward(ConvNetParams const &p, ConvTape const &tape, FeatureMap const &grad_out, ConvNetParams &grads)
{
  PlaneGeometry const &g = tape.geom;
  Index const ps = g.plane_size();
  double const slope = p.leaky_slope;
  FeatureMap gcur = grad_out;
  Eigen::MatrixXd col;
  Eigen::MatrixXd gcol;
  for (int l = static_cast<int>(p.layers.size()) - 1; l >= 0; l--) {
    auto const &L = p.layers[l];
    if (l + 1 < static_cast<int>(p.layers.size())) {
      gcur = gcur.binaryExpr(tape.pre[l], [slope](double gv, double v) { return v > 0.0 ? gv : slope * gv; });
    }
    grads.layers[l].bias += gcur.rowwise().sum();
    FeatureMap gin = FeatureMap::Zero(tape.inputs[l].rows(), g.pixels());
    for (Index pl = 0; pl < g.planes; pl++) {
      im2col(tape.inputs[l], pl, g, p.kernel, col);
      auto const gblock = gcur.middleCols(pl * ps, ps);
      grads.layers[l].weight.noalias() += gblock * col.transpose();
      gcol.noalias() = L.weight.transpose() * gblock;
      col2im_add(gcol, pl, g, p.kernel, gin);
    }
    gcur = std::move(gin);
  }
  return gcur;
}

PlaneGeometry plane_geometry(Dims const &d) { return {d.nx, d.ny, d.nz}; }

FeatureMap pack_channels(ContrastStack const &x)
{
  Index const M = static_cast<Index>(x.size());
  Dims const d = x.front().dims();
  Index const ps = d.ny * d.nz;
  FeatureMap f(2 * M, d.size());
  for (Index m = 0; m < M; m++) {
    auto const &v = x[m];
    for (Index iz = 0; iz < d.nz; iz++) {
      for (Index iy = 0; iy < d.ny; iy++) {
        for (Index ix = 0; ix < d.nx; ix++) {
          Cx const s = v(ix, iy, iz);
          Index const p = iy + d.ny * iz + ps * ix;
          f(m, p) = s.real();
          f(M + m, p) = s.imag();
        }
      }
    }
  }
  return f;
}

ContrastStack unpack_channels(FeatureMap const &f, Dims const &d)
{
  Index const M = f.rows() / 2;
  Index const ps = d.ny * d.nz;
  ContrastStack out;
  for (Index m = 0; m < M; m++) {
    ComplexVolume v(d);
    for (Index iz = 0; iz < d.nz; iz++) {
      for (Index iy = 0; iy < d.ny; iy++) {
        for (Index ix = 0; ix < d.nx; ix++) {
          Index const p = iy + d.ny * iz + ps * ix;
          v(ix, iy, iz) = Cx(f(m, p), f(M + m, p));
        }
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

void append_parameters(ConvNetParams const &p, std::vector<double> &out)
{
  for (auto const &L : p.layers) {
    for (Index r = 0; r < L.weight.rows(); r++) {
      for (Index c = 0; c < L.weight.cols(); c++) {
        out.push_back(L.weight(r, c));
      }
    }
    for (Index r = 0; r < L.bias.size(); r++) {
      out.push_back(L.bias[r]);
    }
  }
}

std::size_t assign_parameters(ConvNetParams &p, std::vector<double> const &flat, std::size_t offset)
{
  for (auto &L : p.layers) {
    for (Index r = 0; r < L.weight.rows(); r++) {
      for (Index c = 0; c < L.weight.cols(); c++) {
        L.weight(r, c) = flat.at(offset++);
      }
    }
    for (Index r = 0; r < L.bias.size(); r++) {
      L.bias[r] = flat.at(offset++);
    }
  }
  return offset;
}

} // namespace wmodl
