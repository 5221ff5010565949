#include "wmodl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "wmodl/phantom.hpp"

namespace wmodl {

namespace {

void check_roi(ComplexVolume const &x, LabelVolume const *roi)
{
  if (roi && roi->dims() != x.dims()) {
    throw InvalidInput("nrmse: roi shape " + to_string(roi->dims()) + " differs from " + to_string(x.dims()));
  }
}

void accumulate(ComplexVolume const &x, ComplexVolume const &ref, LabelVolume const *roi, NrmseMode mode, double &num,
                double &den)
{
  if (!x.same_shape(ref)) {
    throw InvalidInput("nrmse: shapes differ, " + to_string(x.dims()) + " vs " + to_string(ref.dims()));
  }
  check_roi(x, roi);
  for (Index i = 0; i < x.size(); i++) {
    if (roi && (*roi)[i] == 0) {
      continue;
    }
    double const e = mode == NrmseMode::Complex ? std::norm(x[i] - ref[i]) : std::pow(std::abs(x[i]) - std::abs(ref[i]), 2);
    num += e;
    den += std::norm(ref[i]);
  }
}

std::uint64_t splitmix(std::uint64_t z)
{
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

} // namespace

double nrmse(ComplexVolume const &x, ComplexVolume const &ref, LabelVolume const *roi, NrmseMode mode)
{
  double num = 0.0;
  double den = 0.0;
  accumulate(x, ref, roi, mode, num, den);
  if (!(den > 0.0)) {
    throw InvalidInput("nrmse: reference has zero norm on the roi");
  }
  return 100.0 * std::sqrt(num / den);
}

double nrmse(ContrastStack const &x, ContrastStack const &ref, LabelVolume const *roi, NrmseMode mode)
{
  if (x.size() != ref.size() || x.empty()) {
    throw InvalidInput("nrmse: contrast counts differ or are zero");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t m = 0; m < x.size(); m++) {
    accumulate(x[m], ref[m], roi, mode, num, den);
  }
  if (!(den > 0.0)) {
    throw InvalidInput("nrmse: reference has zero norm on the roi");
  }
  return 100.0 * std::sqrt(num / den);
}

void GFactorConfig::validate() const
{
  if (n_replicas < 2) {
    throw InvalidInput("g-factor needs at least 2 replicas");
  }
  if (!(sigma > 0.0)) {
    throw InvalidInput("g-factor noise sigma must be positive");
  }
}

RealVolume replica_std(ReconFn const &recon, WaveOperator const &op, Mask const &mask, GFactorConfig const &cfg,
                       std::uint64_t stream)
{
  cfg.validate();
  Dims const d = op.image_dims();
  ComplexVolume mean(d);
  RealVolume sq(d);
  for (int r = 0; r < cfg.n_replicas; r++) {
    std::uint64_t const seed = splitmix(splitmix(cfg.seed ^ (stream << 32)) + static_cast<std::uint64_t>(r));
    ComplexVolume const x = recon(sample_noise(op, mask, cfg.sigma, seed), mask);
    if (x.dims() != d) {
      throw InvalidInput("g-factor recon returned shape " + to_string(x.dims()));
    }
    mean.array() += x.array();
    sq.array() += x.array().abs2();
  }
  double const n = cfg.n_replicas;
  mean.array() /= n;
  // unbiased complex variance, E|x - mean|^2
  RealVolume out(d);
  out.array() = ((sq.array() - n * mean.array().abs2()) / (n - 1.0)).max(0.0).sqrt();
  return out;
}

GFactorMap gfactor_map(ReconFn const &recon, WaveOperator const &op, Mask const &mask, double R, GFactorConfig const &cfg)
{
  if (!(R >= 1.0)) {
    throw InvalidInput("acceleration factor must be >= 1");
  }
  Dims const d = op.image_dims();
  Mask const full = full_mask(d.ny, d.nz);
  GFactorMap out;
  out.std_accel = replica_std(recon, op, mask, cfg, 1);
  out.std_full = replica_std(recon, op, full, cfg, 2);
  out.g = RealVolume(d);
  out.flags = LabelVolume(d);
  double const floor = 1e-12 * std::max(out.std_full.array().maxCoeff(), 1e-300);
  for (Index i = 0; i < d.size(); i++) {
    if (out.std_full[i] <= floor) {
      out.flags[i] = 1;
      continue;
    }
    out.g[i] = out.std_accel[i] / (out.std_full[i] * std::sqrt(R));
  }
  return out;
}

Eigen::VectorXd sense_gfactor_analytic(Eigen::MatrixXcd const &enc)
{
  Eigen::MatrixXcd const gram = enc.adjoint() * enc;
  Eigen::MatrixXcd const inv = gram.inverse();
  Eigen::VectorXd g(enc.cols());
  for (Index i = 0; i < enc.cols(); i++) {
    g[i] = std::sqrt(inv(i, i).real() * gram(i, i).real());
  }
  return g;
}

double mean_over(RealVolume const &v, LabelVolume const &mask)
{
  if (v.dims() != mask.dims()) {
    throw InvalidInput("mean_over: mask shape differs");
  }
  double s = 0.0;
  Index n = 0;
  for (Index i = 0; i < v.size(); i++) {
    if (mask[i] != 0) {
      s += v[i];
      n++;
    }
  }
  if (n == 0) {
    throw InvalidInput("mean_over: empty mask");
  }
  return s / static_cast<double>(n);
}

LinearFit ols_fit(std::vector<double> const &a, std::vector<double> const &b)
{
  if (a.size() != b.size() || a.size() < 2) {
    throw InvalidInput("ols_fit needs two equally long samples of size >= 2");
  }
  Index const n = static_cast<Index>(a.size());
  Eigen::Map<Eigen::ArrayXd const> A(a.data(), n);
  Eigen::Map<Eigen::ArrayXd const> B(b.data(), n);
  double const ma = A.mean();
  double const mb = B.mean();
  double const sxx = (A - ma).square().sum();
  double const syy = (B - mb).square().sum();
  double const sxy = ((A - ma) * (B - mb)).sum();
  LinearFit f;
  f.n = n;
  double const nan = std::numeric_limits<double>::quiet_NaN();
  if (!(sxx > 0.0)) {
    f.slope = f.r = f.slope_stderr = nan;
    f.intercept = nan;
    return f;
  }
  f.slope = sxy / sxx;
  f.intercept = mb - f.slope * ma;
  f.r = syy > 0.0 ? sxy / std::sqrt(sxx * syy) : nan;
  double const sse = ((B - f.intercept - f.slope * A).square()).sum();
  f.slope_stderr = n > 2 ? std::sqrt(sse / static_cast<double>(n - 2) / sxx) : nan;
  return f;
}

std::vector<std::array<Index, 3>> valid_box_corners(LabelVolume const &labels, std::int32_t label, int box)
{
  if (box < 1) {
    throw InvalidInput("box size must be >= 1");
  }
  Dims const d = labels.dims();
  // 3D prefix counts of voxels carrying `label`
  Index const px = d.nx + 1;
  Index const py = d.ny + 1;
  std::vector<Index> S(static_cast<std::size_t>(px * py * (d.nz + 1)), 0);
  auto at = [&](Index x, Index y, Index z) -> Index & { return S[static_cast<std::size_t>(x + px * (y + py * z))]; };
  for (Index z = 0; z < d.nz; z++) {
    for (Index y = 0; y < d.ny; y++) {
      for (Index x = 0; x < d.nx; x++) {
        at(x + 1, y + 1, z + 1) = (labels(x, y, z) == label) + at(x, y + 1, z + 1) + at(x + 1, y, z + 1) +
                                  at(x + 1, y + 1, z) - at(x, y, z + 1) - at(x, y + 1, z) - at(x + 1, y, z) +
                                  at(x, y, z);
      }
    }
  }
  Index const b = box;
  Index const full = b * b * b;
  std::vector<std::array<Index, 3>> out;
  for (Index z = 0; z + b <= d.nz; z++) {
    for (Index y = 0; y + b <= d.ny; y++) {
      for (Index x = 0; x + b <= d.nx; x++) {
        Index const c = at(x + b, y + b, z + b) - at(x, y + b, z + b) - at(x + b, y, z + b) - at(x + b, y + b, z) +
                        at(x, y, z + b) + at(x, y + b, z) + at(x + b, y, z) - at(x, y, z);
        if (c == full) {
          out.push_back({x, y, z});
        }
      }
    }
  }
  return out;
}

namespace {

double box_mean(RealVolume const &v, std::array<Index, 3> const &c, int box)
{
  double s = 0.0;
  for (Index z = c[2]; z < c[2] + box; z++) {
    for (Index y = c[1]; y < c[1] + box; y++) {
      for (Index x = c[0]; x < c[0] + box; x++) {
        s += v(x, y, z);
      }
    }
  }
  return s / static_cast<double>(box * box * box);
}

RealVolume const &quantity(ParameterMaps const &m, int q) { return q == kT1 ? m.t1 : (q == kT2 ? m.t2 : m.pd); }

void summarize(BoxStats &s)
{
  auto stats = [](std::vector<double> const &v, double &mean, double &sd) {
    Eigen::Map<Eigen::ArrayXd const> a(v.data(), static_cast<Index>(v.size()));
    mean = a.mean();
    sd = v.size() > 1 ? std::sqrt((a - mean).square().sum() / static_cast<double>(v.size() - 1)) : 0.0;
  };
  stats(s.a, s.mean_a, s.std_a);
  stats(s.b, s.mean_b, s.std_b);
  s.fit = ols_fit(s.a, s.b);
}

} // namespace

RoiRegression roi_box_regression(ParameterMaps const &maps_a,
                                 ParameterMaps const &maps_b,
                                 LabelVolume const &labels,
                                 std::vector<std::int32_t> const &tissues,
                                 int n_boxes,
                                 int box,
                                 std::uint64_t seed)
{
  if (n_boxes < 1) {
    throw InvalidInput("n_boxes must be >= 1");
  }
  for (int q = 0; q < 3; q++) {
    if (quantity(maps_a, q).dims() != labels.dims() || quantity(maps_b, q).dims() != labels.dims()) {
      throw InvalidInput("roi_box_regression: map and label shapes differ");
    }
  }
  RoiRegression out;
  std::mt19937_64 rng(seed);
  std::array<std::vector<double>, 3> pa;
  std::array<std::vector<double>, 3> pb;
  for (std::int32_t t : tissues) {
    auto corners = valid_box_corners(labels, t, box);
    if (static_cast<int>(corners.size()) < n_boxes) {
      throw InvalidInput("tissue " + std::to_string(t) + " admits only " + std::to_string(corners.size()) + " " +
                         std::to_string(box) + "^3 boxes, " + std::to_string(n_boxes) + " requested");
    }
    // partial Fisher-Yates: uniform sample without replacement
    for (int i = 0; i < n_boxes; i++) {
      std::uniform_int_distribution<std::size_t> u(static_cast<std::size_t>(i), corners.size() - 1);
      std::swap(corners[static_cast<std::size_t>(i)], corners[u(rng)]);
    }
    corners.resize(static_cast<std::size_t>(n_boxes));
    std::array<BoxStats, 3> st;
    for (int q = 0; q < 3; q++) {
      for (auto const &c : corners) {
        st[q].a.push_back(box_mean(quantity(maps_a, q), c, box));
        st[q].b.push_back(box_mean(quantity(maps_b, q), c, box));
      }
      summarize(st[q]);
      pa[q].insert(pa[q].end(), st[q].a.begin(), st[q].a.end());
      pb[q].insert(pb[q].end(), st[q].b.begin(), st[q].b.end());
    }
    out.boxes[t] = std::move(corners);
    out.per_tissue[t] = std::move(st);
  }
  for (int q = 0; q < 3; q++) {
    out.pooled[q] = ols_fit(pa[q], pb[q]);
  }
  return out;
}

} // namespace wmodl
