#pragma once

#include <functional>
#include <vector>

#include "wmodl/sampling.hpp"
#include "wmodl/volume.hpp"
#include "wmodl/wave.hpp"

namespace wmodl {

struct CgConfig
{
  int max_iters = 10;
  double tolerance = 0.0; ///< relative residual ||r|| / ||rhs||; 0 runs all iterations
  double lambda_total = 0.0;

  void validate() const;
};

/// x -> A^H A x. Must be Hermitian positive semidefinite.
using NormalOp = std::function<ComplexVolume(ComplexVolume const &)>;

/// Everything the reverse pass needs from one CG solve.
struct CgTape
{
  ComplexVolume x0;
  bool x0_zero = true;
  ComplexVolume r0;
  std::vector<ComplexVolume> p;      ///< search direction at iteration k
  std::vector<ComplexVolume> q;      ///< (N + lambda) p_k
  std::vector<ComplexVolume> r_next; ///< residual after iteration k
  std::vector<double> rs;            ///< ||r_k||^2, k = 0..iterations
  std::vector<double> d;             ///< Re<p_k, q_k>
  std::vector<double> alpha;
  std::vector<double> beta;

  int iterations() const { return static_cast<int>(alpha.size()); }
};

struct CgResult
{
  ComplexVolume x;
  int iterations = 0;
  std::vector<double> residual_norms; ///< recursively updated ||r_k||, k = 0..iterations
};

/// Conjugate gradient on (N + lambda I) x = rhs from x0. Returns the last iterate.
CgResult cg_normal_solve(ComplexVolume const &rhs,
                         NormalOp const &normal_op,
                         double lambda_total,
                         CgConfig const &cfg,
                         ComplexVolume const &x0,
                         CgTape *tape = nullptr);

struct CgAdjoint
{
  ComplexVolume rhs;
  ComplexVolume x0;
  double lambda = 0.0;
};

/// Reverse-mode pass through a recorded solve: given dL/dx, returns dL/drhs,
/// dL/dx0 and dL/dlambda, differentiating every step including alpha and beta.
CgAdjoint cg_backward(CgTape const &tape, NormalOp const &normal_op, double lambda_total, ComplexVolume const &grad_x);

/// argmin ||A x - b||^2 + lambda ||x||^2 via CG from zero. SENSE when the PSF is all ones.
ComplexVolume wave_caipi_recon(MultiCoilData const &b, WaveOperator const &op, Mask const &mask, CgConfig const &cfg);

/// Per contrast: solve (A_m^H A_m + (l1 + l2) I) x = A_m^H b_m + l1 eta_m + l2 zeta_m from `warm`.
/// `aHb` holds the precomputed A_m^H b_m.
ContrastStack dc_update(std::vector<ComplexVolume> const &aHb,
                        ContrastStack const &eta,
                        ContrastStack const &zeta,
                        double lambda1,
                        double lambda2,
                        WaveOperator const &op,
                        SamplingPattern const &pattern,
                        CgConfig const &cfg,
                        ContrastStack const &warm,
                        std::vector<CgTape> *tapes = nullptr);

ContrastStack dc_update(std::vector<MultiCoilData> const &b,
                        ContrastStack const &eta,
                        ContrastStack const &zeta,
                        double lambda1,
                        double lambda2,
                        WaveOperator const &op,
                        SamplingPattern const &pattern,
                        CgConfig const &cfg,
                        ContrastStack const &warm);

std::vector<ComplexVolume> adjoint_all(std::vector<MultiCoilData> const &b, WaveOperator const &op, SamplingPattern const &pattern);

NormalOp make_normal_op(WaveOperator const &op, Mask const &mask);

} // namespace wmodl
