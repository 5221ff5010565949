#include "wmodl/solvers.hpp"

#include <cmath>

namespace wmodl {

void CgConfig::validate() const
{
  if (max_iters < 1) {
    throw InvalidInput("CG max_iters must be >= 1");
  }
  if (tolerance < 0.0 || lambda_total < 0.0) {
    throw InvalidInput("CG tolerance and lambda must be >= 0");
  }
}

namespace {

double re_dot(ComplexVolume const &a, ComplexVolume const &b)
{
  return (a.array().real() * b.array().real() + a.array().imag() * b.array().imag()).sum();
}

ComplexVolume apply_system(NormalOp const &op, double lambda, ComplexVolume const &v)
{
  ComplexVolume out = op(v);
  if (lambda != 0.0) {
    out.array() += lambda * v.array();
  }
  return out;
}

} // namespace

CgResult cg_normal_solve(ComplexVolume const &rhs,
                         NormalOp const &normal_op,
                         double lambda_total,
                         CgConfig const &cfg,
                         ComplexVolume const &x0,
                         CgTape *tape)
{
  cfg.validate();
  if (lambda_total < 0.0) {
    throw InvalidInput("CG lambda must be >= 0");
  }
  if (!rhs.same_shape(x0)) {
    throw InvalidInput("cg_normal_solve: rhs and x0 shapes differ");
  }

  CgResult res;
  res.x = x0;
  bool const x0_zero = (x0.array() == Cx(0.0, 0.0)).all();
  ComplexVolume r = rhs;
  if (!x0_zero) {
    r.array() -= apply_system(normal_op, lambda_total, x0).array();
  }
  ComplexVolume p = r;
  double rs = squared_norm(r);
  double const rhs_norm = norm(rhs);
  res.residual_norms.push_back(std::sqrt(rs));

  if (tape) {
    *tape = CgTape{};
    tape->x0 = x0;
    tape->x0_zero = x0_zero;
    tape->r0 = r;
    tape->rs.push_back(rs);
  }

  for (int k = 0; k < cfg.max_iters; k++) {
    if (rs == 0.0) {
      break;
    }
    if (cfg.tolerance > 0.0 && std::sqrt(rs) <= cfg.tolerance * rhs_norm) {
      break;
    }
    ComplexVolume q = apply_system(normal_op, lambda_total, p);
    double const d = re_dot(p, q);
    if (!std::isfinite(d)) {
      throw NumericalFailure("CG produced a non-finite curvature", k);
    }
    if (d <= 0.0) {
      break;
    }
    double const alpha = rs / d;
    res.x.array() += alpha * p.array();
    r.array() -= alpha * q.array();
    double const rs_next = squared_norm(r);
    if (!std::isfinite(rs_next) || !std::isfinite(alpha)) {
      throw NumericalFailure("CG produced a non-finite residual", k);
    }
    double const beta = rs_next / rs;
    if (tape) {
      tape->p.push_back(p);
      tape->q.push_back(std::move(q));
      tape->r_next.push_back(r);
      tape->d.push_back(d);
      tape->alpha.push_back(alpha);
      tape->beta.push_back(beta);
      tape->rs.push_back(rs_next);
    }
    p.array() = r.array() + beta * p.array();
    rs = rs_next;
    res.iterations = k + 1;
    res.residual_norms.push_back(std::sqrt(rs));
  }
  if (!all_finite(res.x)) {
    throw NumericalFailure("CG iterate is not finite", res.iterations);
  }
  return res;
}

CgAdjoint cg_backward(CgTape const &tape, NormalOp const &normal_op, double lambda_total, ComplexVolume const &grad_x)
{
  Dims const d = grad_x.dims();
  ComplexVolume gx = grad_x;
  ComplexVolume gr(d);
  ComplexVolume gp(d);
  double grs = 0.0;
  double glambda = 0.0;

  for (int k = tape.iterations() - 1; k >= 0; k--) {
    ComplexVolume const &p = tape.p[k];
    ComplexVolume const &q = tape.q[k];
    ComplexVolume const &r1 = tape.r_next[k];
    double const rs = tape.rs[k];
    double const rs1 = tape.rs[k + 1];
    double const dk = tape.d[k];
    double const alpha = tape.alpha[k];
    double const beta = tape.beta[k];

    // p' = r' + beta p
    ComplexVolume gr1 = gr;
    gr1.array() += gp.array();
    double const gbeta = re_dot(gp, p);
    ComplexVolume gp_prev(d);
    gp_prev.array() = beta * gp.array();
    // beta = rs' / rs
    double const grs1 = grs + gbeta / rs;
    double grs_prev = -gbeta * rs1 / (rs * rs);
    // rs' = ||r'||^2
    gr1.array() += 2.0 * grs1 * r1.array();
    // r' = r - alpha q
    ComplexVolume gq(d);
    gq.array() = -alpha * gr1.array();
    double galpha = -re_dot(gr1, q);
    // x' = x + alpha p
    gp_prev.array() += alpha * gx.array();
    galpha += re_dot(gx, p);
    // alpha = rs / d
    grs_prev += galpha / dk;
    double const gd = -galpha * rs / (dk * dk);
    // d = Re<p, q>
    gp_prev.array() += gd * q.array();
    gq.array() += gd * p.array();
    // q = (N + lambda) p
    gp_prev.array() += apply_system(normal_op, lambda_total, gq).array();
    glambda += re_dot(gq, p);

    gr = std::move(gr1);
    gp = std::move(gp_prev);
    grs = grs_prev;
  }

  // r0 = rhs - (N + lambda) x0, p0 = r0, rs0 = ||r0||^2
  ComplexVolume gr0 = gr;
  gr0.array() += gp.array() + 2.0 * grs * tape.r0.array();
  CgAdjoint out;
  out.rhs = gr0;
  out.x0 = gx;
  // x0 enters through r0 even when its value happens to be zero
  out.x0.array() -= apply_system(normal_op, lambda_total, gr0).array();
  if (!tape.x0_zero) {
    glambda -= re_dot(gr0, tape.x0);
  }
  out.lambda = glambda;
  return out;
}

NormalOp make_normal_op(WaveOperator const &op, Mask const &mask)
{
  return [&op, &mask](ComplexVolume const &v) { return op.normal(v, mask); };
}

ComplexVolume wave_caipi_recon(MultiCoilData const &b, WaveOperator const &op, Mask const &mask, CgConfig const &cfg)
{
  ComplexVolume const rhs = op.adjoint(b, mask);
  ComplexVolume const x0(op.image_dims());
  return cg_normal_solve(rhs, make_normal_op(op, mask), cfg.lambda_total, cfg, x0).x;
}

std::vector<ComplexVolume> adjoint_all(std::vector<MultiCoilData> const &b, WaveOperator const &op, SamplingPattern const &pattern)
{
  if (static_cast<int>(b.size()) != pattern.ncontrasts()) {
    throw InvalidInput("k-space contrast count does not match sampling pattern");
  }
  std::vector<ComplexVolume> out;
  for (std::size_t m = 0; m < b.size(); m++) {
    out.push_back(op.adjoint(b[m], pattern.masks[m]));
  }
  return out;
}

ContrastStack dc_update(std::vector<ComplexVolume> const &aHb,
                        ContrastStack const &eta,
                        ContrastStack const &zeta,
                        double lambda1,
                        double lambda2,
                        WaveOperator const &op,
                        SamplingPattern const &pattern,
                        CgConfig const &cfg,
                        ContrastStack const &warm,
                        std::vector<CgTape> *tapes)
{
  std::size_t const M = aHb.size();
  if (eta.size() != M || zeta.size() != M || warm.size() != M || static_cast<std::size_t>(pattern.ncontrasts()) != M) {
    throw InvalidInput("dc_update: contrast counts differ");
  }
  if (lambda1 < 0.0 || lambda2 < 0.0) {
    throw InvalidInput("dc_update: lambdas must be >= 0");
  }
  if (tapes) {
    tapes->assign(M, CgTape{});
  }
  ContrastStack out;
  for (std::size_t m = 0; m < M; m++) {
    if (!eta[m].same_shape(aHb[m]) || !zeta[m].same_shape(aHb[m])) {
      throw InvalidInput("dc_update: prior shape differs from image shape");
    }
    ComplexVolume rhs = aHb[m];
    rhs.array() += lambda1 * eta[m].array() + lambda2 * zeta[m].array();
    auto res = cg_normal_solve(rhs, make_normal_op(op, pattern.masks[m]), lambda1 + lambda2, cfg, warm[m],
                               tapes ? &(*tapes)[m] : nullptr);
    out.push_back(std::move(res.x));
  }
  return out;
}

ContrastStack dc_update(std::vector<MultiCoilData> const &b,
                        ContrastStack const &eta,
                        ContrastStack const &zeta,
                        double lambda1,
                        double lambda2,
                        WaveOperator const &op,
                        SamplingPattern const &pattern,
                        CgConfig const &cfg,
                        ContrastStack const &warm)
{
  return dc_update(adjoint_all(b, op, pattern), eta, zeta, lambda1, lambda2, op, pattern, cfg, warm);
}

} // namespace wmodl
