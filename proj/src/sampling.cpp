#include "wmodl/sampling.hpp"

#include <set>
#include <string>

namespace wmodl {

void AccelSpec::validate() const
{
  if (ry < 1 || rz < 1) {
    throw InvalidInput("acceleration factors must be >= 1");
  }
  if (caipi_shift < 0 || caipi_shift >= rz) {
    throw InvalidInput("caipi_shift must satisfy 0 <= shift < rz (got " + std::to_string(caipi_shift) +
                       ", rz = " + std::to_string(rz) + ")");
  }
}

Mask full_mask(Index ny, Index nz) { return Mask::Ones(ny, nz); }

Index sample_count(Mask const &m) { return (m != 0).count(); }

Mask make_caipi_mask(Index ny, Index nz, AccelSpec const &spec)
{
  spec.validate();
  if (spec.ry > ny || spec.rz > nz) {
    throw InvalidInput("acceleration exceeds grid size");
  }
  Mask m = Mask::Zero(ny, nz);
  for (Index iy = 0; iy < ny; iy += spec.ry) {
    Index const offset = ((iy / spec.ry) * spec.caipi_shift) % spec.rz;
    for (Index iz = offset; iz < nz; iz += spec.rz) {
      m(iy, iz) = 1;
    }
  }
  return m;
}

std::vector<std::pair<int, int>> default_stagger(int ncontrasts, AccelSpec const &spec)
{
  std::vector<std::pair<int, int>> out;
  for (int m = 0; m < ncontrasts; m++) {
    out.emplace_back(m % spec.ry, (m / spec.ry) % spec.rz);
  }
  return out;
}

namespace {

Mask roll(Mask const &base, int dy, int dz)
{
  Index const ny = base.rows();
  Index const nz = base.cols();
  Mask out(ny, nz);
  for (Index iz = 0; iz < nz; iz++) {
    for (Index iy = 0; iy < ny; iy++) {
      out((iy + dy) % ny, (iz + dz) % nz) = base(iy, iz);
    }
  }
  return out;
}

} // namespace

SamplingPattern make_multicontrast_pattern(Index ny,
                                           Index nz,
                                           AccelSpec const &spec,
                                           int ncontrasts,
                                           StaggerMode mode,
                                           std::vector<std::pair<int, int>> stagger)
{
  if (ncontrasts < 1) {
    throw InvalidInput("need at least one contrast");
  }
  Mask const base = make_caipi_mask(ny, nz, spec);
  SamplingPattern p;
  p.spec = spec;
  p.mode = mode;

  if (mode == StaggerMode::Fixed) {
    p.offsets.assign(ncontrasts, {0, 0});
    p.masks.assign(ncontrasts, base);
    return p;
  }

  if (stagger.empty()) {
    if (ncontrasts > spec.ry * spec.rz) {
      throw InvalidInput("staggered pattern needs " + std::to_string(ncontrasts) + " distinct offsets but only " +
                         std::to_string(spec.ry * spec.rz) + " lattice cells exist");
    }
    stagger = default_stagger(ncontrasts, spec);
  }
  if (static_cast<int>(stagger.size()) != ncontrasts) {
    throw InvalidInput("stagger table length does not match contrast count");
  }
  std::set<std::pair<int, int>> seen;
  for (auto const &[dy, dz] : stagger) {
    if (dy < 0 || dy >= spec.ry || dz < 0 || dz >= spec.rz) {
      throw InvalidInput("stagger offset outside [0, ry) x [0, rz)");
    }
    if (!seen.insert({dy, dz}).second) {
      throw InvalidInput("staggered offsets must be pairwise distinct");
    }
  }
  p.offsets = stagger;
  for (auto const &[dy, dz] : stagger) {
    p.masks.push_back(roll(base, dy, dz));
  }
  return p;
}

} // namespace wmodl
