#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "wmodl/convnet.hpp"
#include "wmodl/sampling.hpp"
#include "wmodl/solvers.hpp"
#include "wmodl/volume.hpp"
#include "wmodl/wave.hpp"

namespace wmodl {

enum class DenoiseDomain
{
  Image,
  Kspace
};

/// Dual-domain denoisers shared across all outer iterations, plus the two
/// DC weights stored as log values.
struct ModlParams
{
  ConvNetParams d_image;
  ConvNetParams d_kspace;
  double lambda1_raw = 0.0;
  double lambda2_raw = 0.0;
  int n_outer = 10;

  double lambda1() const;
  double lambda2() const;
  int ncontrasts() const { return static_cast<int>(d_image.in_channels() / 2); }
  Index parameter_count() const;
  void validate() const;
};

ModlParams make_modl_params(int ncontrasts, ConvArch const &arch, std::uint64_t seed, int n_outer = 10,
                            double lambda_init = 0.05);

/// d_image, then d_kspace, then lambda1_raw, lambda2_raw.
std::vector<double> flatten(ModlParams const &p);
void unflatten(ModlParams &p, std::vector<double> const &flat);

/// zeta = D_i(x), or eta = F^-1 D_k(F x) with F the 3D centered FFT.
ContrastStack denoise(ModlParams const &p, ContrastStack const &x, DenoiseDomain domain);

/// Unrolled recursion from precomputed A_m^H b_m.
ContrastStack modl_reconstruct(ModlParams const &p,
                               std::vector<ComplexVolume> const &aHb,
                               WaveOperator const &op,
                               SamplingPattern const &pattern,
                               CgConfig const &cg);

ContrastStack modl_reconstruct(ModlParams const &p,
                               std::vector<MultiCoilData> const &b,
                               WaveOperator const &op,
                               SamplingPattern const &pattern,
                               CgConfig const &cg);

struct TrainingSample
{
  std::vector<ComplexVolume> aHb;
  ContrastStack truth;
};

TrainingSample make_training_sample(std::vector<MultiCoilData> const &b,
                                    ContrastStack truth,
                                    WaveOperator const &op,
                                    SamplingPattern const &pattern);

struct TrainConfig
{
  double learning_rate = 1e-3;
  std::optional<double> lambda_learning_rate; ///< rate for lambda1_raw, lambda2_raw; unset means learning_rate
  int steps = 100;
  int batch = 1; ///< samples per step; batches cycle through the set in a seeded order
  std::uint64_t seed = 0;
  std::vector<double> loss_weights; ///< per contrast; empty means all ones
  CgConfig cg{};

  void validate() const;
};

struct LossGradient
{
  double loss = 0.0;
  std::vector<double> grad; ///< same layout as flatten()
};

/// Weighted normalized squared error averaged over the batch.
double modl_loss(ModlParams const &p,
                 std::vector<TrainingSample const *> const &batch,
                 WaveOperator const &op,
                 SamplingPattern const &pattern,
                 CgConfig const &cg,
                 std::vector<double> const &weights);

/// Loss and its exact gradient, back-propagated through every CG iteration.
LossGradient loss_and_gradient(ModlParams const &p,
                               std::vector<TrainingSample const *> const &batch,
                               WaveOperator const &op,
                               SamplingPattern const &pattern,
                               CgConfig const &cg,
                               std::vector<double> const &weights);

/// One gradient-descent step. Returns the loss at the parameters before the update.
double train_step(ModlParams &p,
                  std::vector<TrainingSample const *> const &batch,
                  WaveOperator const &op,
                  SamplingPattern const &pattern,
                  TrainConfig const &cfg);

/// Called after every step with the step index, its loss and the updated parameters.
using StepCallback = std::function<void(int, double, ModlParams const &)>;

/// cfg.steps steps; returns the loss of every step.
std::vector<double> train(ModlParams &p,
                          std::vector<TrainingSample> const &samples,
                          WaveOperator const &op,
                          SamplingPattern const &pattern,
                          TrainConfig const &cfg,
                          StepCallback const &on_step = {});

} // namespace wmodl
