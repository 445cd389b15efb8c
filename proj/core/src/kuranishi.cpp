#include "hetorus/kuranishi.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hetorus {

namespace {

void check_radius(const Field& a01, const KuranishiOptions& options) {
  if (norm(a01) > options.slice_radius)
    throw std::invalid_argument("outside slice radius");
}

// dbar0 a + a ^ a on a surface; empty on a curve (top degree input).
Field integrability_form(const SpectralContext& ctx, const Field& a01) {
  if (ctx.geometry().n == 1) return Field();
  return ctx.dbar0(a01) + wedge(a01, a01);
}

}  // namespace

double sobolev_lp_norm(const SpectralContext& ctx, const Field& f, int order) {
  if (f.empty()) return 0.0;
  Field fhat = fourier_forward(f);
  const bool scalar = f.rank() == 1;
  const std::int64_t points = ctx.geometry().points;
  for (int c = 0; c < fhat.components(); ++c) {
    for (int i = 0; i < f.rank(); ++i) {
      for (int j = 0; j < f.rank(); ++j) {
        Complex* v = fhat.plane(c, i, j);
        for (std::int64_t x = 0; x < points; ++x) {
          const double lap =
              scalar ? ctx.laplace_symbol(0, 0, x) : ctx.laplace_symbol(i, j, x);
          v[x] *= std::pow(1.0 + lap, 0.5 * order);
        }
      }
    }
  }
  return lp_norm(fourier_inverse(fhat), 6.0);
}

Field group_field(const SpectralContext& ctx, const GroupElement& g) {
  const BundleSpec& bundle = ctx.bundle();
  Field out(ctx.geometry(), 0, 0, bundle.rank);
  for (int gi = 0; gi < bundle.group_count(); ++gi) {
    const int off = bundle.group_offset[gi];
    const int m = bundle.multiplicities[gi];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const Complex value = g.blocks[gi](i, j);
        Complex* v = out.plane(0, off + i, off + j);
        for (std::int64_t x = 0; x < ctx.geometry().points; ++x) v[x] = value;
      }
  }
  return out;
}

Field conjugate_field(const SpectralContext& ctx, const GroupElement& g,
                      const Field& f) {
  if (f.empty()) return f;
  const Field gf = group_field(ctx, g);
  const Field gi = group_field(ctx, inverse(g));
  return wedge(gf, wedge(f, gi));
}

HarmonicClass conjugate_class(const BundleSpec& bundle, const GroupElement& g,
                              const HarmonicClass& h) {
  HarmonicClass out = h;
  for (int c = 0; c < out.combos(); ++c) {
    for (int gi = 0; gi < bundle.group_count(); ++gi) {
      const Eigen::MatrixXcd& block = g.blocks[gi];
      out.blocks[c][gi] = block * h.blocks[c][gi] * block.inverse();
    }
  }
  return out;
}

GaugeFixResult fix_complex_gauge(const SpectralContext& ctx, const Field& a01,
                                 const KuranishiOptions& options,
                                 const Field* initial_phi) {
  check_radius(a01, options);
  GaugeFixResult result;
  result.phi = initial_phi != nullptr
                   ? ctx.remove_harmonic(*initial_phi)
                   : Field(ctx.geometry(), 0, 0, ctx.rank());

  auto transformed = [&](const Field& phi) {
    return ctx.gauge_act(pointwise_exp(phi), a01);
  };
  auto residual_of = [&](const Field& fixed) {
    return ctx.dbar0_star(fixed);
  };

  Field fixed = transformed(result.phi);
  Field res = residual_of(fixed);
  double res_norm = norm(res);
  const double target = options.tolerance * std::max(1.0, norm(a01));

  int iter = 0;
  for (; iter < options.iteration_cap && res_norm > target; ++iter) {
    const Field direction = ctx.green_solve(res).solution;
    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 8; ++halving) {
      Field candidate = result.phi;
      candidate.axpy(Complex(step, 0.0), direction);
      const Field cand_fixed = transformed(candidate);
      const Field cand_res = residual_of(cand_fixed);
      const double cand_norm = norm(cand_res);
      if (cand_norm < res_norm) {
        result.phi = std::move(candidate);
        fixed = cand_fixed;
        res = cand_res;
        res_norm = cand_norm;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  if (res_norm > target) {
    std::ostringstream msg;
    msg << "gauge fixing did not converge; residual=" << res_norm;
    throw std::runtime_error(msg.str());
  }
  result.fixed = std::move(fixed);
  result.residual = res_norm;
  result.iterations = iter;
  const double source = norm(ctx.dbar0_star(a01));
  result.constant_ratio = source > 0.0 ? norm(result.phi) / source : 0.0;
  return result;
}

namespace {

// Residual of the degree-two correction equation, with the excluded
// zero-symbol modes scrubbed so the equation is exactly solvable.
Field beta_residual_field(const SpectralContext& ctx, const Field& a01,
                          const Field& beta, const Field& da) {
  const Field b = a01 + ctx.dbar0_star(beta);
  Field rhs = da + wedge(b, b);
  rhs = ctx.scrub_degenerate(ctx.remove_harmonic(rhs));
  return ctx.laplace_dbar(beta) + rhs;
}

}  // namespace

BetaResult solve_beta(const SpectralContext& ctx, const Field& a01,
                      const KuranishiOptions& options) {
  check_radius(a01, options);
  BetaResult result;
  if (ctx.geometry().n == 1) return result;

  const Field da = ctx.dbar0(a01);
  Field beta(ctx.geometry(), 0, 2, ctx.rank());
  Field res = beta_residual_field(ctx, a01, beta, da);
  double res_norm = norm(res);
  const double target = options.tolerance * std::max(1.0, norm(a01));

  int iter = 0;
  for (; iter < options.iteration_cap && res_norm > target; ++iter) {
    // Linearization of the residual in beta around the current iterate.
    const Field b = a01 + ctx.dbar0_star(beta);
    auto jacobian = [&](const Field& delta) {
      const Field dd = ctx.dbar0_star(delta);
      Field mixed = wedge(dd, b) + wedge(b, dd);
      mixed = ctx.scrub_degenerate(ctx.remove_harmonic(mixed));
      return ctx.laplace_dbar(delta) + mixed;
    };
    // Richardson iteration preconditioned by the flat Green operator.
    Field delta = -ctx.green_solve(res).solution;
    for (int inner = 0; inner < 8; ++inner) {
      const Field inner_res = jacobian(delta) + res;
      if (norm(inner_res) < 0.05 * res_norm) break;
      delta -= ctx.green_solve(inner_res).solution;
    }
    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 8; ++halving) {
      Field candidate = beta;
      candidate.axpy(Complex(step, 0.0), delta);
      const Field cand_res = beta_residual_field(ctx, a01, candidate, da);
      const double cand_norm = norm(cand_res);
      if (cand_norm < res_norm) {
        beta = std::move(candidate);
        res = cand_res;
        res_norm = cand_norm;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  if (res_norm > target) {
    std::ostringstream msg;
    msg << "degree-two correction did not converge; residual=" << res_norm;
    throw std::runtime_error(msg.str());
  }
  result.beta = std::move(beta);
  result.residual = res_norm;
  result.iterations = iter;
  const double na = lp_norm(a01, 6.0);
  result.bound_ratio =
      na > 0.0 ? sobolev_lp_norm(ctx, result.beta, 2) / (na * na) : 0.0;
  return result;
}

BetaResult solve_beta_fixed_point(const SpectralContext& ctx, const Field& a01,
                                  const KuranishiOptions& options) {
  check_radius(a01, options);
  BetaResult result;
  if (ctx.geometry().n == 1) return result;

  const Field da = ctx.dbar0(a01);
  Field beta(ctx.geometry(), 0, 2, ctx.rank());
  const double target = options.tolerance * std::max(1.0, norm(a01));
  const double damping = 0.5;
  const int cap = 2 * options.iteration_cap;

  int iter = 0;
  double res_norm = 0.0;
  for (; iter < cap; ++iter) {
    const Field b = a01 + ctx.dbar0_star(beta);
    const Field update = -ctx.green_solve(da + wedge(b, b)).solution;
    Field next = beta;
    next *= Complex(1.0 - damping, 0.0);
    next.axpy(Complex(damping, 0.0), update);
    res_norm = norm(beta_residual_field(ctx, a01, next, da));
    beta = std::move(next);
    if (res_norm < target) break;
  }
  if (res_norm > target) {
    std::ostringstream msg;
    msg << "degree-two correction did not converge; residual=" << res_norm;
    throw std::runtime_error(msg.str());
  }
  result.beta = std::move(beta);
  result.residual = res_norm;
  result.iterations = iter;
  const double na = lp_norm(a01, 6.0);
  result.bound_ratio =
      na > 0.0 ? sobolev_lp_norm(ctx, result.beta, 2) / (na * na) : 0.0;
  return result;
}

HarmonicClass psi(const SpectralContext& ctx, const HarmonicClass& alpha,
                  const KuranishiOptions& options) {
  if (ctx.geometry().n == 1) return zero_class(ctx.bundle(), 2);
  const Field a = ctx.embed(alpha);
  check_radius(a, options);
  const BetaResult beta = solve_beta(ctx, a, options);
  const Field b = a + ctx.dbar0_star(beta.beta);
  return ctx.harmonic_project(wedge(b, b));
}

EquivarianceReport check_equivariance(const SpectralContext& ctx,
                                      const HarmonicClass& alpha,
                                      const GroupElement& gamma,
                                      const KuranishiOptions& options) {
  const Field a = ctx.embed(alpha);
  const HarmonicClass conjugated = conjugate_class(ctx.bundle(), gamma, alpha);
  const Field ca = ctx.embed(conjugated);
  check_radius(a, options);
  check_radius(ca, options);

  EquivarianceReport report;
  if (ctx.geometry().n == 2) {
    const BetaResult beta = solve_beta(ctx, a, options);
    const BetaResult beta_conj = solve_beta(ctx, ca, options);
    report.beta_residual =
        norm(beta_conj.beta - conjugate_field(ctx, gamma, beta.beta));
  }
  const HarmonicClass psi_plain = psi(ctx, alpha, options);
  const HarmonicClass psi_conj = psi(ctx, conjugated, options);
  report.psi_residual =
      norm(psi_conj - conjugate_class(ctx.bundle(), gamma, psi_plain));
  return report;
}

EllipticReport estimate_elliptic_constant(const SpectralContext& ctx,
                                          const std::vector<Field>& samples) {
  EllipticReport report;
  for (const Field& a : samples) {
    const double lhs = sobolev_lp_norm(ctx, a, 1);
    double rhs = lp_norm(ctx.dbar0_star(a), 6.0);
    const Field tau = integrability_form(ctx, a);
    if (!tau.empty()) rhs += lp_norm(tau, 6.0);
    rhs += norm(ctx.embed(ctx.harmonic_project(a)));
    if (rhs <= 0.0) continue;
    report.ratios.push_back(lhs / rhs);
  }
  if (report.ratios.empty()) return report;
  std::vector<double> sorted = report.ratios;
  std::sort(sorted.begin(), sorted.end());
  report.max_ratio = sorted.back();
  report.median_ratio = sorted[sorted.size() / 2];
  return report;
}

EllipticReport estimate_elliptic_constant(const SpectralContext& ctx, int count,
                                          Rng& rng,
                                          const KuranishiOptions& options) {
  std::vector<Field> samples;
  samples.reserve(count);
  const int kmax = std::min(2, ctx.geometry().N / 2 - 1);
  const double scale = options.slice_radius / 3.0;
  for (int s = 0; s < count; ++s) {
    Field a;
    switch (s % 3) {
      case 0:
        a = ctx.embed(random_class(ctx.bundle(), 1, rng));
        break;
      case 1:
        a = ctx.dbar0(
            random_band_limited(ctx.geometry(), 0, 0, ctx.rank(), kmax, rng));
        break;
      default:
        a = random_band_limited(ctx.geometry(), 0, 1, ctx.rank(), kmax, rng);
        break;
    }
    const double len = norm(a);
    if (len < 1e-14) continue;
    a *= Complex(scale * (0.2 + 0.8 * rng.uniform()) / len, 0.0);
    samples.push_back(std::move(a));
  }
  return estimate_elliptic_constant(ctx, samples);
}

KuranishiSolution solve_kuranishi(const SpectralContext& ctx, const Field& a01,
                                  const KuranishiOptions& options) {
  KuranishiSolution solution;
  solution.input = a01;
  GaugeFixResult gauge = fix_complex_gauge(ctx, a01, options);
  solution.phi = std::move(gauge.phi);
  solution.fixed = std::move(gauge.fixed);
  solution.gauge_residual = gauge.residual;
  solution.alpha = ctx.harmonic_project(solution.fixed);

  const Field a = ctx.embed(solution.alpha);
  if (ctx.geometry().n == 2) {
    BetaResult beta = solve_beta(ctx, a, options);
    solution.beta = std::move(beta.beta);
    const Field b = a + ctx.dbar0_star(solution.beta);
    const Field tau = ctx.dbar0(b) + wedge(b, b);
    solution.beta_residual = norm(ctx.dbar0_star(tau));
    solution.integrability_residual = norm(tau);
    solution.psi_value = ctx.harmonic_project(wedge(b, b));
  } else {
    solution.beta_residual = 0.0;
    solution.integrability_residual = 0.0;
    solution.psi_value = zero_class(ctx.bundle(), 2);
  }
  return solution;
}

double probe_slice_radius(const SpectralContext& ctx, Rng& rng, int directions,
                          const KuranishiOptions& options) {
  const int kmax = std::min(2, ctx.geometry().N / 2 - 1);
  std::vector<Field> dirs;
  dirs.reserve(directions);
  for (int d = 0; d < directions; ++d) {
    Field a = random_band_limited(ctx.geometry(), 0, 1, ctx.rank(), kmax, rng);
    a *= Complex(1.0 / norm(a), 0.0);
    dirs.push_back(std::move(a));
  }
  auto converges_at = [&](double radius) {
    KuranishiOptions local = options;
    local.slice_radius = radius * 1.01;
    for (const Field& dir : dirs) {
      Field a = dir;
      a *= Complex(radius, 0.0);
      try {
        fix_complex_gauge(ctx, a, local);
      } catch (const std::exception&) {
        return false;
      }
    }
    return true;
  };
  double lo = 0.0;
  double hi = 1.0;
  if (converges_at(hi)) return hi;
  for (int round = 0; round < 8; ++round) {
    const double mid = 0.5 * (lo + hi);
    if (converges_at(mid))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

}  // namespace hetorus
