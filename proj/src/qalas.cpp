#include "wmodl/qalas.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace wmodl {

void QalasTiming::validate() const
{
  if (t2prep_te_ms < 0 || gap_ms < 0 || echo_spacing_ms < 0 || recovery_ms < 0) {
    throw InvalidInput("QALAS timing values must be >= 0");
  }
  if (shots_per_train < 1) {
    throw InvalidInput("QALAS needs at least one shot per train");
  }
}

double t2prep_factor(double t2_ms, QalasTiming const &timing) { return std::exp(-timing.t2prep_te_ms / t2_ms); }

namespace {

void check_relaxation(double t1_ms, double t2_ms)
{
  if (!(t1_ms > 0.0) || !(t2_ms > 0.0)) {
    throw InvalidInput("QALAS: T1 and T2 must be positive");
  }
}

double recover(double mz, double t_ms, double t1_ms) { return 1.0 - (1.0 - mz) * std::exp(-t_ms / t1_ms); }

// One turbo-flash train. Returns Mz before the center shot; mz updated in place.
double readout_train(double &mz, double t1_ms, QalasTiming const &timing)
{
  double const cos_flip = std::cos(timing.flip_deg * std::numbers::pi / 180.0);
  double const e_esp = std::exp(-timing.echo_spacing_ms / t1_ms);
  int const center = timing.shots_per_train / 2;
  double sample = 0.0;
  for (int s = 0; s < timing.shots_per_train; s++) {
    if (s == center) {
      sample = mz;
    }
    mz *= cos_flip;
    mz = 1.0 - (1.0 - mz) * e_esp;
  }
  return sample;
}

} // namespace

QalasCycle qalas_cycle(double t1_ms, double t2_ms, QalasTiming const &timing, double mz_start)
{
  check_relaxation(t1_ms, t2_ms);
  timing.validate();
  QalasCycle out;
  double mz = mz_start * t2prep_factor(t2_ms, timing);
  out.mz_at_center[0] = readout_train(mz, t1_ms, timing);
  mz = recover(mz, timing.gap_ms, t1_ms);
  mz = -mz;
  for (int k = 1; k < kQalasContrasts; k++) {
    if (k > 1) {
      mz = recover(mz, timing.gap_ms, t1_ms);
    }
    out.mz_at_center[k] = readout_train(mz, t1_ms, timing);
  }
  out.mz_end = recover(mz, timing.recovery_ms, t1_ms);
  return out;
}

double qalas_steady_state(double t1_ms, double t2_ms, QalasTiming const &timing)
{
  // The cycle map is affine: f(m) = a m + c, |a| < 1.
  double const c = qalas_cycle(t1_ms, t2_ms, timing, 0.0).mz_end;
  double const a = qalas_cycle(t1_ms, t2_ms, timing, 1.0).mz_end - c;
  return c / (1.0 - a);
}

double qalas_mz_after_inversion(double t1_ms, double t2_ms, QalasTiming const &timing, double t_ms)
{
  check_relaxation(t1_ms, t2_ms);
  double mz = qalas_steady_state(t1_ms, t2_ms, timing) * t2prep_factor(t2_ms, timing);
  readout_train(mz, t1_ms, timing);
  mz = -recover(mz, timing.gap_ms, t1_ms);

  double const cos_flip = std::cos(timing.flip_deg * std::numbers::pi / 180.0);
  double remaining = t_ms;
  for (int k = 1; k < kQalasContrasts && remaining > 0.0; k++) {
    if (k > 1) {
      double const dt = std::min(remaining, timing.gap_ms);
      mz = recover(mz, dt, t1_ms);
      remaining -= dt;
    }
    for (int s = 0; s < timing.shots_per_train && remaining > 0.0; s++) {
      mz *= cos_flip;
      double const dt = std::min(remaining, timing.echo_spacing_ms);
      mz = recover(mz, dt, t1_ms);
      remaining -= dt;
    }
  }
  if (remaining > 0.0) {
    mz = recover(mz, remaining, t1_ms);
  }
  return mz;
}

QalasSignal qalas_signal(double t1_ms, double t2_ms, double pd, QalasTiming const &timing)
{
  double const mz0 = qalas_steady_state(t1_ms, t2_ms, timing);
  auto const cycle = qalas_cycle(t1_ms, t2_ms, timing, mz0);
  return pd * std::sin(timing.flip_deg * std::numbers::pi / 180.0) * cycle.mz_at_center;
}

std::vector<double> contrast_norm_ratios(ContrastStack const &images)
{
  if (images.empty()) {
    throw InvalidInput("contrast_norm_ratios: no images");
  }
  std::vector<double> out;
  double const last = norm(images.back());
  if (!(last > 0.0)) {
    throw InvalidInput("contrast_norm_ratios: last contrast has zero norm");
  }
  for (auto const &im : images) {
    out.push_back(last / norm(im));
  }
  return out;
}

std::vector<double> log_spaced(double lo, double hi, int n)
{
  if (n < 1 || !(lo > 0.0) || !(hi >= lo)) {
    throw InvalidInput("log_spaced: need n >= 1 and 0 < lo <= hi");
  }
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  double const step = std::log(hi / lo) / (n - 1);
  for (int i = 0; i < n; i++) {
    out[i] = lo * std::exp(step * i);
  }
  out.back() = hi;
  return out;
}

Dictionary build_dictionary(std::vector<double> const &t1_grid,
                            std::vector<double> const &t2_grid,
                            QalasTiming const &timing)
{
  if (t1_grid.empty() || t2_grid.empty()) {
    throw InvalidInput("build_dictionary: empty grid");
  }
  auto increasing = [](std::vector<double> const &g) {
    return std::adjacent_find(g.begin(), g.end(), std::greater_equal<>()) == g.end();
  };
  if (!increasing(t1_grid) || !increasing(t2_grid)) {
    throw InvalidInput("build_dictionary: grids must be strictly increasing");
  }
  Dictionary d;
  d.t1_grid = t1_grid;
  d.t2_grid = t2_grid;
  d.timing = timing;
  for (int i = 0; i < static_cast<int>(t1_grid.size()); i++) {
    for (int j = 0; j < static_cast<int>(t2_grid.size()); j++) {
      if (t2_grid[j] <= t1_grid[i]) {
        d.t1_index.push_back(i);
        d.t2_index.push_back(j);
      }
    }
  }
  if (d.t1_index.empty()) {
    throw InvalidInput("build_dictionary: no feasible (T1, T2) pair with T2 <= T1");
  }
  Index const n = static_cast<Index>(d.t1_index.size());
  d.atoms.resize(kQalasContrasts, n);
  d.raw_norm.resize(n);
  for (Index a = 0; a < n; a++) {
    QalasSignal const s = qalas_signal(t1_grid[d.t1_index[a]], t2_grid[d.t2_index[a]], 1.0, timing).abs();
    double const nrm = s.matrix().norm();
    d.raw_norm[a] = nrm;
    d.atoms.col(a) = s.matrix() / nrm;
  }
  return d;
}

Dictionary build_default_dictionary(QalasTiming const &timing)
{
  return build_dictionary(log_spaced(100.0, 5000.0, 64), log_spaced(10.0, 2500.0, 48), timing);
}

AtomMatch match_signal(QalasSignal const &magnitudes, Dictionary const &dict)
{
  AtomMatch m;
  double const snorm = magnitudes.matrix().norm();
  if (!(snorm > 0.0)) {
    m.zero_signal = true;
    return m;
  }
  Eigen::VectorXd const scores = dict.atoms.transpose() * magnitudes.matrix();
  scores.maxCoeff(&m.atom);
  double const proj = scores[m.atom];
  m.pd = proj / dict.raw_norm[m.atom];
  m.residual = (magnitudes.matrix() - proj * dict.atoms.col(m.atom)).norm() / snorm;
  return m;
}

ParameterMaps fit_parameter_maps(ContrastStack const &recon, Dictionary const &dict, LabelVolume const &foreground)
{
  if (static_cast<int>(recon.size()) != kQalasContrasts) {
    throw InvalidInput("fit_parameter_maps: expected 5 contrasts, got " + std::to_string(recon.size()));
  }
  Dims const d = recon.front().dims();
  for (auto const &c : recon) {
    if (!(c.dims() == d)) {
      throw InvalidInput("fit_parameter_maps: contrast dims differ");
    }
  }
  if (!(foreground.dims() == d)) {
    throw InvalidInput("fit_parameter_maps: foreground dims differ");
  }
  ParameterMaps maps{RealVolume(d), RealVolume(d), RealVolume(d), RealVolume(d), LabelVolume(d)};

  std::vector<Index> voxels;
  for (Index i = 0; i < d.size(); i++) {
    if (foreground[i] != 0) {
      voxels.push_back(i);
    }
  }
  Index constexpr chunk = 2048;
  Eigen::Matrix<double, kQalasContrasts, Eigen::Dynamic> sig;
  for (std::size_t start = 0; start < voxels.size(); start += chunk) {
    Index const n = std::min<Index>(chunk, static_cast<Index>(voxels.size() - start));
    sig.resize(kQalasContrasts, n);
    for (Index v = 0; v < n; v++) {
      for (int c = 0; c < kQalasContrasts; c++) {
        sig(c, v) = std::abs(recon[c][voxels[start + v]]);
      }
    }
    Eigen::MatrixXd const scores = dict.atoms.transpose() * sig;
    for (Index v = 0; v < n; v++) {
      Index const vox = voxels[start + v];
      double const snorm = sig.col(v).norm();
      if (!(snorm > 0.0)) {
        maps.t1[vox] = dict.t1_grid.front();
        maps.t2[vox] = dict.t2_grid.front();
        maps.flags[vox] = 1;
        continue;
      }
      Index best = 0;
      scores.col(v).maxCoeff(&best);
      double const proj = scores(best, v);
      maps.t1[vox] = dict.t1_grid[dict.t1_index[best]];
      maps.t2[vox] = dict.t2_grid[dict.t2_index[best]];
      maps.pd[vox] = proj / dict.raw_norm[best];
      maps.residual[vox] = (sig.col(v) - proj * dict.atoms.col(best)).norm() / snorm;
    }
  }
  return maps;
}

SynthKind parse_synth_kind(std::string const &name)
{
  if (name == "T1w") return SynthKind::T1w;
  if (name == "T2w") return SynthKind::T2w;
  if (name == "FLAIR") return SynthKind::FLAIR;
  if (name == "PDw") return SynthKind::PDw;
  if (name == "DIR") return SynthKind::DIR;
  if (name == "PSIR") return SynthKind::PSIR;
  throw InvalidInput("unknown synthetic contrast '" + name + "'");
}

std::string to_string(SynthKind kind)
{
  switch (kind) {
  case SynthKind::T1w: return "T1w";
  case SynthKind::T2w: return "T2w";
  case SynthKind::FLAIR: return "FLAIR";
  case SynthKind::PDw: return "PDw";
  case SynthKind::DIR: return "DIR";
  case SynthKind::PSIR: return "PSIR";
  }
  return "?";
}

SynthParams default_synth_params(SynthKind kind)
{
  switch (kind) {
  case SynthKind::T1w: return {2000, 10, 900, 0, 0};
  case SynthKind::T2w: return {6000, 100, 0, 0, 0};
  case SynthKind::FLAIR: return {9000, 100, 2500, 0, 0};
  case SynthKind::PDw: return {6000, 10, 0, 0, 0};
  case SynthKind::DIR: return {9000, 100, 0, 3000, 450};
  case SynthKind::PSIR: return {2000, 10, 400, 0, 0};
  }
  throw InvalidInput("unknown synthetic contrast kind");
}

double synth_intensity(double t1_ms, double t2_ms, double pd, SynthKind kind, SynthParams const &p)
{
  if (pd == 0.0) {
    return 0.0;
  }
  double const etr = std::exp(-p.tr_ms / t1_ms);
  double e = 0.0;
  switch (kind) {
  case SynthKind::T1w:
  case SynthKind::FLAIR:
  case SynthKind::PSIR: e = 1.0 - 2.0 * std::exp(-p.ti_ms / t1_ms) + etr; break;
  case SynthKind::T2w:
  case SynthKind::PDw: e = 1.0 - etr; break;
  case SynthKind::DIR:
    e = 1.0 - 2.0 * std::exp(-p.ti2_ms / t1_ms) + 2.0 * std::exp(-(p.ti1_ms + p.ti2_ms) / t1_ms) - etr;
    break;
  }
  double const s = pd * e * std::exp(-p.te_ms / t2_ms);
  return kind == SynthKind::PSIR ? s : std::abs(s);
}

RealVolume synthesize_contrast(ParameterMaps const &maps, SynthKind kind, SynthParams const &p)
{
  Dims const d = maps.pd.dims();
  if (!(maps.t1.dims() == d) || !(maps.t2.dims() == d)) {
    throw InvalidInput("synthesize_contrast: map dims differ");
  }
  RealVolume out(d);
  for (Index i = 0; i < d.size(); i++) {
    if (maps.pd[i] != 0.0 && (!(maps.t1[i] > 0.0) || !(maps.t2[i] > 0.0))) {
      throw InvalidInput("synthesize_contrast: non-positive T1/T2 where PD > 0");
    }
    out[i] = synth_intensity(maps.t1[i], maps.t2[i], maps.pd[i], kind, p);
  }
  return out;
}

} // namespace wmodl
