#include "wmodl/modl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace wmodl {

double ModlParams::lambda1() const { return std::exp(lambda1_raw); }
double ModlParams::lambda2() const { return std::exp(lambda2_raw); }

Index ModlParams::parameter_count() const { return d_image.parameter_count() + d_kspace.parameter_count() + 2; }

void ModlParams::validate() const
{
  d_image.validate();
  d_kspace.validate();
  if (d_image.in_channels() != d_kspace.in_channels() || d_image.in_channels() % 2 != 0) {
    throw InvalidInput("denoisers must both take 2 channels per contrast");
  }
  if (n_outer < 0) {
    throw InvalidInput("n_outer must be >= 0");
  }
  if (!std::isfinite(lambda1_raw) || !std::isfinite(lambda2_raw)) {
    throw InvalidInput("lambda parameters must be finite");
  }
}

ModlParams make_modl_params(int ncontrasts, ConvArch const &arch, std::uint64_t seed, int n_outer, double lambda_init)
{
  if (ncontrasts < 1) {
    throw InvalidInput("need at least one contrast");
  }
  if (!(lambda_init > 0.0)) {
    throw InvalidInput("initial lambda must be positive");
  }
  ModlParams p;
  p.d_image = make_convnet(2 * ncontrasts, arch, seed);
  p.d_kspace = make_convnet(2 * ncontrasts, arch, seed ^ 0x9e3779b97f4a7c15ull);
  p.lambda1_raw = std::log(lambda_init);
  p.lambda2_raw = std::log(lambda_init);
  p.n_outer = n_outer;
  return p;
}

std::vector<double> flatten(ModlParams const &p)
{
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(p.parameter_count()));
  append_parameters(p.d_image, out);
  append_parameters(p.d_kspace, out);
  out.push_back(p.lambda1_raw);
  out.push_back(p.lambda2_raw);
  return out;
}

void unflatten(ModlParams &p, std::vector<double> const &flat)
{
  if (static_cast<Index>(flat.size()) != p.parameter_count()) {
    throw InvalidInput("parameter vector has " + std::to_string(flat.size()) + " entries, model has " +
                       std::to_string(p.parameter_count()));
  }
  std::size_t off = assign_parameters(p.d_image, flat, 0);
  off = assign_parameters(p.d_kspace, flat, off);
  p.lambda1_raw = flat[off];
  p.lambda2_raw = flat[off + 1];
}

namespace {

ContrastStack fft_all(ContrastStack const &x, FftDirection dir)
{
  ContrastStack out;
  out.reserve(x.size());
  for (auto const &v : x) {
    out.push_back(fft_centered(v, kAxesXYZ, dir));
  }
  return out;
}

ContrastStack denoise_taped(ConvNetParams const &net, ContrastStack const &x, DenoiseDomain domain, ConvTape *tape)
{
  Dims const d = x.front().dims();
  PlaneGeometry const g = plane_geometry(d);
  if (domain == DenoiseDomain::Image) {
    return unpack_channels(conv_apply(net, pack_channels(x), g, tape), d);
  }
  ContrastStack k = unpack_channels(conv_apply(net, pack_channels(fft_all(x, FftDirection::Forward)), g, tape), d);
  for (auto &v : k) {
    v.set_domains({Domain::Frequency, Domain::Frequency, Domain::Frequency});
  }
  return fft_all(k, FftDirection::Inverse);
}

// Reverse of denoise_taped: the FFTs are unitary, so their adjoints are their inverses.
ContrastStack denoise_backward(ConvNetParams const &net,
                               ConvTape const &tape,
                               ContrastStack const &grad_out,
                               DenoiseDomain domain,
                               ConvNetParams &grads)
{
  Dims const d = grad_out.front().dims();
  if (domain == DenoiseDomain::Image) {
    return unpack_channels(conv_backward(net, tape, pack_channels(grad_out), grads), d);
  }
  ContrastStack gk = fft_all(grad_out, FftDirection::Forward);
  ContrastStack gin = unpack_channels(conv_backward(net, tape, pack_channels(gk), grads), d);
  for (auto &v : gin) {
    v.set_domains({Domain::Frequency, Domain::Frequency, Domain::Frequency});
  }
  return fft_all(gin, FftDirection::Inverse);
}

void check_stack(ContrastStack const &x, int ncontrasts, char const *what)
{
  if (static_cast<int>(x.size()) != ncontrasts) {
    throw InvalidInput(std::string(what) + ": expected " + std::to_string(ncontrasts) + " contrasts, got " +
                       std::to_string(x.size()));
  }
  for (auto const &v : x) {
    if (!v.same_shape(x.front())) {
      throw InvalidInput(std::string(what) + ": contrasts differ in shape");
    }
  }
}

ContrastStack zeros_like(ContrastStack const &x)
{
  ContrastStack out;
  for (auto const &v : x) {
    out.emplace_back(v.dims());
  }
  return out;
}

struct ModlTape
{
  std::vector<std::vector<CgTape>> dc; ///< n_outer + 1 blocks
  std::vector<ConvTape> img;
  std::vector<ConvTape> ksp;
  std::vector<ContrastStack> eta;
  std::vector<ContrastStack> zeta;
};

ContrastStack unrolled_forward(ModlParams const &p,
                               std::vector<ComplexVolume> const &aHb,
                               WaveOperator const &op,
                               SamplingPattern const &pattern,
                               CgConfig const &cg,
                               ModlTape *tape)
{
  p.validate();
  int const M = p.ncontrasts();
  check_stack(aHb, M, "modl_reconstruct");
  if (pattern.ncontrasts() != M) {
    throw InvalidInput("modl_reconstruct: sampling pattern has " + std::to_string(pattern.ncontrasts()) +
                       " contrasts, model expects " + std::to_string(M));
  }
  double const l1 = p.lambda1();
  double const l2 = p.lambda2();
  ContrastStack const zero = zeros_like(aHb);
  if (tape) {
    *tape = ModlTape{};
    tape->dc.resize(p.n_outer + 1);
    tape->img.resize(p.n_outer);
    tape->ksp.resize(p.n_outer);
  }
  ContrastStack x = dc_update(aHb, zero, zero, l1, l2, op, pattern, cg, zero, tape ? &tape->dc[0] : nullptr);
  for (int n = 0; n < p.n_outer; n++) {
    ContrastStack eta = denoise_taped(p.d_kspace, x, DenoiseDomain::Kspace, tape ? &tape->ksp[n] : nullptr);
    ContrastStack zeta = denoise_taped(p.d_image, x, DenoiseDomain::Image, tape ? &tape->img[n] : nullptr);
    x = dc_update(aHb, eta, zeta, l1, l2, op, pattern, cg, x, tape ? &tape->dc[n + 1] : nullptr);
    if (tape) {
      tape->eta.push_back(std::move(eta));
      tape->zeta.push_back(std::move(zeta));
    }
  }
  return x;
}

std::vector<double> resolve_weights(std::vector<double> const &weights, int M)
{
  if (weights.empty()) {
    return std::vector<double>(M, 1.0);
  }
  if (static_cast<int>(weights.size()) != M) {
    throw InvalidInput("loss weights: expected " + std::to_string(M) + " entries, got " + std::to_string(weights.size()));
  }
  for (double w : weights) {
    if (!(w > 0.0)) {
      throw InvalidInput("loss weights must be positive");
    }
  }
  return weights;
}

double sample_loss(ContrastStack const &x, ContrastStack const &truth, std::vector<double> const &w, double &denom)
{
  double num = 0.0;
  denom = 0.0;
  for (std::size_t m = 0; m < x.size(); m++) {
    num += w[m] * (x[m].array() - truth[m].array()).abs2().sum();
    denom += w[m] * squared_norm(truth[m]);
  }
  if (!(denom > 0.0)) {
    throw InvalidInput("training target has zero norm");
  }
  return num / denom;
}

double re_dot(ComplexVolume const &a, ComplexVolume const &b) { return inner_product(a, b).real(); }

} // namespace

ContrastStack denoise(ModlParams const &p, ContrastStack const &x, DenoiseDomain domain)
{
  check_stack(x, p.ncontrasts(), "denoise");
  for (auto const &v : x) {
    for (int a = 0; a < 3; a++) {
      if (v.domain(a) != Domain::Image) {
        throw InvalidInput("denoise expects image-domain input");
      }
    }
  }
  return denoise_taped(domain == DenoiseDomain::Image ? p.d_image : p.d_kspace, x, domain, nullptr);
}

ContrastStack modl_reconstruct(ModlParams const &p,
                               std::vector<ComplexVolume> const &aHb,
                               WaveOperator const &op,
                               SamplingPattern const &pattern,
                               CgConfig const &cg)
{
  return unrolled_forward(p, aHb, op, pattern, cg, nullptr);
}

ContrastStack modl_reconstruct(ModlParams const &p,
                               std::vector<MultiCoilData> const &b,
                               WaveOperator const &op,
                               SamplingPattern const &pattern,
                               CgConfig const &cg)
{
  return modl_reconstruct(p, adjoint_all(b, op, pattern), op, pattern, cg);
}

TrainingSample make_training_sample(std::vector<MultiCoilData> const &b,
                                    ContrastStack truth,
                                    WaveOperator const &op,
                                    SamplingPattern const &pattern)
{
  TrainingSample s{adjoint_all(b, op, pattern), std::move(truth)};
  check_stack(s.truth, static_cast<int>(s.aHb.size()), "training sample");
  return s;
}

void TrainConfig::validate() const
{
  for (double r : {learning_rate, lambda_learning_rate.value_or(0.0)}) {
    if (r < 0.0 || !std::isfinite(r)) {
      throw InvalidInput("learning rates must be finite and >= 0");
    }
  }
  if (steps < 0 || batch < 1) {
    throw InvalidInput("steps must be >= 0 and batch >= 1");
  }
  for (double w : loss_weights) {
    if (!(w > 0.0)) {
      throw InvalidInput("loss weights must be positive");
    }
  }
  cg.validate();
}

double modl_loss(ModlParams const &p,
                 std::vector<TrainingSample const *> const &batch,
                 WaveOperator const &op,
                 SamplingPattern const &pattern,
                 CgConfig const &cg,
                 std::vector<double> const &weights)
{
  if (batch.empty()) {
    throw InvalidInput("empty training batch");
  }
  auto const w = resolve_weights(weights, p.ncontrasts());
  double total = 0.0;
  for (auto const *s : batch) {
    double denom = 0.0;
    total += sample_loss(unrolled_forward(p, s->aHb, op, pattern, cg, nullptr), s->truth, w, denom);
  }
  return total / static_cast<double>(batch.size());
}

LossGradient loss_and_gradient(ModlParams const &p,
                               std::vector<TrainingSample const *> const &batch,
                               WaveOperator const &op,
                               SamplingPattern const &pattern,
                               CgConfig const &cg,
                               std::vector<double> const &weights)
{
  if (batch.empty()) {
    throw InvalidInput("empty training batch");
  }
  int const M = p.ncontrasts();
  auto const w = resolve_weights(weights, M);
  double const l1 = p.lambda1();
  double const l2 = p.lambda2();
  double const lsum = l1 + l2;
  double const inv_batch = 1.0 / static_cast<double>(batch.size());

  ModlParams grads = p;
  grads.d_image.set_zero();
  grads.d_kspace.set_zero();
  double gl1 = 0.0;
  double gl2 = 0.0;
  LossGradient out;

  for (auto const *s : batch) {
    ModlTape tape;
    ContrastStack const x = unrolled_forward(p, s->aHb, op, pattern, cg, &tape);
    double denom = 0.0;
    out.loss += inv_batch * sample_loss(x, s->truth, w, denom);

    // dL/dx_final, complex convention dL/dRe + i dL/dIm
    ContrastStack gx;
    for (int m = 0; m < M; m++) {
      ComplexVolume g(x[m].dims());
      g.array() = (2.0 * w[m] * inv_batch / denom) * (x[m].array() - s->truth[m].array());
      gx.push_back(std::move(g));
    }

    for (int n = p.n_outer; n >= 0; n--) {
      auto const &blocks = tape.dc[n];
      ContrastStack g_eta;
      ContrastStack g_zeta;
      ContrastStack g_prev;
      for (int m = 0; m < M; m++) {
        auto const N = make_normal_op(op, pattern.masks[m]);
        CgAdjoint adj = cg_backward(blocks[m], N, lsum, gx[m]);
        gl1 += adj.lambda;
        gl2 += adj.lambda;
        if (n > 0) {
          gl1 += re_dot(adj.rhs, tape.eta[n - 1][m]);
          gl2 += re_dot(adj.rhs, tape.zeta[n - 1][m]);
          ComplexVolume ge(adj.rhs.dims());
          ge.array() = l1 * adj.rhs.array();
          ComplexVolume gz(adj.rhs.dims());
          gz.array() = l2 * adj.rhs.array();
          g_eta.push_back(std::move(ge));
          g_zeta.push_back(std::move(gz));
          g_prev.push_back(std::move(adj.x0));
        }
      }
      if (n == 0) {
        break;
      }
      ContrastStack const gk = denoise_backward(p.d_kspace, tape.ksp[n - 1], g_eta, DenoiseDomain::Kspace, grads.d_kspace);
      ContrastStack const gi = denoise_backward(p.d_image, tape.img[n - 1], g_zeta, DenoiseDomain::Image, grads.d_image);
      for (int m = 0; m < M; m++) {
        g_prev[m].array() += gk[m].array() + gi[m].array();
      }
      gx = std::move(g_prev);
    }
  }

  grads.lambda1_raw = gl1 * l1;
  grads.lambda2_raw = gl2 * l2;
  out.grad = flatten(grads);
  if (!std::isfinite(out.loss)) {
    throw NumericalFailure("training loss is not finite", 0);
  }
  for (double g : out.grad) {
    if (!std::isfinite(g)) {
      throw NumericalFailure("training gradient is not finite", 0);
    }
  }
  return out;
}

double train_step(ModlParams &p,
                  std::vector<TrainingSample const *> const &batch,
                  WaveOperator const &op,
                  SamplingPattern const &pattern,
                  TrainConfig const &cfg)
{
  cfg.validate();
  LossGradient lg = loss_and_gradient(p, batch, op, pattern, cfg.cg, cfg.loss_weights);
  double const lr_lambda = cfg.lambda_learning_rate.value_or(cfg.learning_rate);
  if (cfg.learning_rate == 0.0 && lr_lambda == 0.0) {
    return lg.loss;
  }
  std::vector<double> theta = flatten(p);
  std::size_t const nets = theta.size() - 2;
  for (std::size_t i = 0; i < theta.size(); i++) {
    theta[i] -= (i < nets ? cfg.learning_rate : lr_lambda) * lg.grad[i];
  }
  unflatten(p, theta);
  return lg.loss;
}

std::vector<double> train(ModlParams &p,
                          std::vector<TrainingSample> const &samples,
                          WaveOperator const &op,
                          SamplingPattern const &pattern,
                          TrainConfig const &cfg,
                          StepCallback const &on_step)
{
  cfg.validate();
  if (samples.empty()) {
    throw InvalidInput("no training samples");
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::size_t cursor = order.size();
  std::size_t const bsz = std::min<std::size_t>(cfg.batch, samples.size());

  std::vector<double> history;
  for (int step = 0; step < cfg.steps; step++) {
    std::vector<TrainingSample const *> batch;
    while (batch.size() < bsz) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&samples[order[cursor++]]);
    }
    try {
      history.push_back(train_step(p, batch, op, pattern, cfg));
    } catch (NumericalFailure const &e) {
      throw e.with_context("training step " + std::to_string(step) + ": ");
    }
    if (on_step) {
      on_step(step, history.back(), p);
    }
  }
  return history;
}

} // namespace wmodl
