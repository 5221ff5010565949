#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "wmodl/volume.hpp"

namespace wmodl {

/// Binary (ky, kz) sampling mask, indexed mask(iy, iz) on the centered grid.
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct AccelSpec
{
  int ry = 1;
  int rz = 1;
  int caipi_shift = 0; ///< kz shift per sampled ky row; 0 disables CAIPI

  void validate() const;
};

enum class StaggerMode
{
  Staggered,
  Fixed
};

struct SamplingPattern
{
  AccelSpec spec;
  StaggerMode mode = StaggerMode::Fixed;
  std::vector<std::pair<int, int>> offsets; ///< per-contrast (dy, dz)
  std::vector<Mask> masks;

  int ncontrasts() const { return static_cast<int>(masks.size()); }
};

Mask full_mask(Index ny, Index nz);
Index sample_count(Mask const &m);

/// Row iy is sampled iff iy % ry == 0; inside sampled rows kz follows a lattice of
/// pitch rz offset by ((iy / ry) * caipi_shift) % rz.
Mask make_caipi_mask(Index ny, Index nz, AccelSpec const &spec);

/// Per-contrast default stagger: (m % ry, (m / ry) % rz).
std::vector<std::pair<int, int>> default_stagger(int ncontrasts, AccelSpec const &spec);

/// Staggered mode rolls the base CAIPI mask by each contrast's offset; fixed mode
/// repeats the base mask. Empty `stagger` selects default_stagger.
SamplingPattern make_multicontrast_pattern(Index ny,
                                           Index nz,
                                           AccelSpec const &spec,
                                           int ncontrasts,
                                           StaggerMode mode,
                                           std::vector<std::pair<int, int>> stagger = {});

} // namespace wmodl
