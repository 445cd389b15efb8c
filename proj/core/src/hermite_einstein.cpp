#include "hetorus/hermite_einstein.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace hetorus {

namespace {

constexpr double kTiny = 1e-300;
// Relative singular-value cutoff for the outer Newton pseudo-inverse; the
// kernel of the moment-map derivative (the isotropy of alpha) is excluded
// from the update, matching the normal-form condition on delta.
constexpr double kOuterCutoff = 1e-10;
// Largest outer Newton step accepted per iteration.
constexpr double kOuterTrust = 1.0;
// Stop iterating after this many steps without a new best residual.
constexpr int kStallWindow = 10;
constexpr double kDivergenceFactor = 1e3;

void require(bool condition, const char* message) {
  if (!condition) throw std::invalid_argument(message);
}

Field selfadjoint_part(const Field& f) {
  return Complex(0.5, 0.0) * (f + dagger(f));
}

Field skewadjoint_part(const Field& f) {
  return Complex(0.5, 0.0) * (f - dagger(f));
}

Eigen::MatrixXcd point_matrix(const Field& f, int c, std::int64_t x) {
  const int r = f.rank();
  Eigen::MatrixXcd m(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) m(i, j) = f.at(c, i, j, x);
  return m;
}

void set_point_matrix(Field& f, int c, std::int64_t x,
                      const Eigen::MatrixXcd& m) {
  const int r = f.rank();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) f.at(c, i, j, x) = m(i, j);
}

// Positive square root of a pointwise positive self-adjoint (0,0) field.
Field pointwise_sqrt_positive(const Field& h) {
  Field out = h;
  for (std::int64_t x = 0; x < h.points(); ++x) {
    const Eigen::MatrixXcd m = point_matrix(h, 0, x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(
        0.5 * (m + m.adjoint()));
    const Eigen::VectorXd vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    set_point_matrix(out, 0, x,
                     es.eigenvectors() * vals.asDiagonal() *
                         es.eigenvectors().adjoint());
  }
  return out;
}

double max_det_deviation(const Field& g) {
  double dev = 0.0;
  for (std::int64_t x = 0; x < g.points(); ++x) {
    const Complex d = point_matrix(g, 0, x).determinant();
    dev = std::max(dev, std::abs(d - Complex(1.0, 0.0)));
  }
  return dev;
}

// Scales each point by the inverse principal r-th root of its determinant.
void det_normalize_pointwise(Field& g) {
  const int r = g.rank();
  for (std::int64_t x = 0; x < g.points(); ++x) {
    Eigen::MatrixXcd m = point_matrix(g, 0, x);
    const Complex d = m.determinant();
    if (std::abs(d) <= kTiny) throw std::runtime_error("singular gauge");
    const Complex root = std::pow(d, 1.0 / static_cast<double>(r));
    set_point_matrix(g, 0, x, m / root);
  }
}

Field scaled_identity(const TorusGeometry& geometry, int rank, double scale) {
  Field f = identity_field(geometry, rank);
  f *= Complex(scale, 0.0);
  return f;
}

HarmonicClass scalar_class(const BundleSpec& bundle, double scale) {
  HarmonicClass h = zero_class(bundle, 0);
  for (int g = 0; g < bundle.group_count(); ++g)
    h.blocks[0][g] =
        scale * Eigen::MatrixXcd::Identity(bundle.multiplicities[g],
                                           bundle.multiplicities[g]);
  return h;
}

// Orthonormal self-adjoint basis of the flat kernel with the global trace
// direction removed: the coordinate space of the outer unknown delta.
std::vector<HarmonicClass> selfadjoint_tracefree_basis(
    const BundleSpec& bundle) {
  std::vector<HarmonicClass> raw;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int g = 0; g < bundle.group_count(); ++g) {
    const int m = bundle.multiplicities[g];
    for (int i = 0; i < m; ++i) {
      HarmonicClass e = zero_class(bundle, 0);
      e.blocks[0][g](i, i) = 1.0;
      raw.push_back(std::move(e));
    }
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) {
        HarmonicClass e = zero_class(bundle, 0);
        e.blocks[0][g](i, j) = inv_sqrt2;
        e.blocks[0][g](j, i) = inv_sqrt2;
        raw.push_back(e);
        HarmonicClass f = zero_class(bundle, 0);
        f.blocks[0][g](i, j) = Complex(0.0, inv_sqrt2);
        f.blocks[0][g](j, i) = Complex(0.0, -inv_sqrt2);
        raw.push_back(std::move(f));
      }
    }
  }
  const double r = static_cast<double>(bundle.rank);
  HarmonicClass trace_dir = scalar_class(bundle, 1.0 / std::sqrt(r));
  std::vector<HarmonicClass> basis;
  for (HarmonicClass& e : raw) {
    HarmonicClass v =
        e - inner_product(trace_dir, e).real() * trace_dir;
    for (const HarmonicClass& b : basis)
      v = v - inner_product(b, v).real() * b;
    const double n = norm(v);
    if (n > 1e-9) basis.push_back(Complex(1.0 / n, 0.0) * v);
  }
  return basis;
}

// Self-adjoint trace-free span of the isotropy of alpha: the directions the
// normal form must be orthogonal to.
std::vector<HarmonicClass> isotropy_selfadjoint_basis(
    const BundleSpec& bundle, const HarmonicClass& alpha) {
  std::vector<HarmonicClass> basis;
  const double r = static_cast<double>(bundle.rank);
  HarmonicClass trace_dir = scalar_class(bundle, 1.0 / std::sqrt(r));
  for (const HarmonicClass& v : isotropy(bundle, alpha)) {
    const HarmonicClass candidates[2] = {
        Complex(0.5, 0.0) * (v + dagger_class(v)),
        Complex(0.0, 0.5) * (v - dagger_class(v))};
    for (const HarmonicClass& c : candidates) {
      HarmonicClass w =
          c - inner_product(trace_dir, c).real() * trace_dir;
      for (const HarmonicClass& b : basis)
        w = w - inner_product(b, w).real() * b;
      const double n = norm(w);
      if (n > 1e-8) basis.push_back(Complex(1.0 / n, 0.0) * w);
    }
  }
  return basis;
}

Field zero_field(const SpectralContext& ctx, int p, int q) {
  return Field(ctx.geometry(), p, q, ctx.rank());
}

// Assembled (0,1) potential t*alpha + s*dbar0*(beta(t*alpha)).
Field assemble_potential(const SpectralContext& ctx,
                         const HarmonicClass& alpha, double s, double t) {
  Field base = ctx.embed(Complex(t, 0.0) * alpha);
  if (s == 0.0 || ctx.geometry().n < 2) return base;
  const BetaResult beta = solve_beta(ctx, base);
  if (beta.beta.empty()) return base;
  Field out = base;
  out.axpy(Complex(s, 0.0), ctx.dbar0_star(beta.beta));
  return out;
}

}  // namespace

PathStallError::PathStallError(const std::string& message, HEReport partial)
    : std::runtime_error(message), report(std::move(partial)) {}

Field central_curvature(const SpectralContext& ctx, const Field& a01) {
  return ctx.central_curvature(a01);
}

Field del_end(const SpectralContext& ctx, const Field& b01, const Field& f) {
  require(f.p() == 0 && f.q() == 0, "del_end expects a (0,0) field");
  // Hermitian pairs satisfy (del_b f)^* = dbar_b(f^*), so the (1,0) covariant
  // derivative is the form-adjoint conjugate of the (0,1) one.
  return adjoint_form(ctx.dbar_end(b01, adjoint_form(f)));
}

Field del_end_star(const SpectralContext& ctx, const Field& b01,
                   const Field& f) {
  require(f.p() == 1 && f.q() == 0, "del_end_star expects a (1,0) field");
  return adjoint_form(ctx.dbar_end_star(b01, adjoint_form(f)));
}

Field section_laplacian(const SpectralContext& ctx, const Field& b01,
                        const Field& f) {
  require(f.p() == 0 && f.q() == 0,
          "section laplacian expects a (0,0) field");
  Field out = ctx.dbar_end_star(b01, ctx.dbar_end(b01, f));
  out += del_end_star(ctx, b01, del_end(ctx, b01, f));
  return out;
}

Field curvature_variation(const SpectralContext& ctx, const Field& g,
                          const Field& a01, const Field& sigma,
                          const Field& adot01) {
  require(a01.p() == 0 && a01.q() == 1, "potential must be a (0,1)-form");
  const bool trivial_gauge = g.empty();
  const Field b01 = trivial_gauge ? a01 : ctx.gauge_act(g, a01);
  Field out = zero_field(ctx, 0, 0);
  if (!adot01.empty()) {
    const Field adot10 = -adjoint_form(adot01);
    if (trivial_gauge) {
      out += del_end_star(ctx, b01, adot10);
      out -= ctx.dbar_end_star(b01, adot01);
    } else {
      const Field gs = dagger(g);
      const Field gs_inv = pointwise_inverse(gs);
      const Field g_inv = pointwise_inverse(g);
      out += del_end_star(ctx, b01, wedge(wedge(gs_inv, adot10), gs));
      out -= ctx.dbar_end_star(b01, wedge(wedge(g, adot01), g_inv));
    }
  }
  if (!sigma.empty()) {
    const Field sigma_plus = selfadjoint_part(sigma);
    const Field sigma_minus = skewadjoint_part(sigma);
    out += section_laplacian(ctx, b01, sigma_plus);
    const Field fhat = ctx.central_curvature(b01);
    out -= wedge(fhat, sigma_minus);
    out += wedge(sigma_minus, fhat);
  }
  return out;
}

LinearizationCheck linearization_check(const SpectralContext& ctx,
                                       const Field& g, const Field& a01,
                                       const Field& sigma, const Field& adot01,
                                       double step) {
  const Field base_gauge =
      g.empty() ? identity_field(ctx.geometry(), ctx.rank()) : g;
  auto value = [&](double eps) {
    Field gauge = base_gauge;
    if (!sigma.empty())
      gauge = wedge(pointwise_exp(Complex(eps, 0.0) * sigma), gauge);
    Field a = a01;
    if (!adot01.empty()) a.axpy(Complex(eps, 0.0), adot01);
    return ctx.central_curvature(ctx.gauge_act(gauge, a));
  };
  const Field fd =
      Complex(1.0 / (2.0 * step), 0.0) * (value(step) - value(-step));
  const Field analytic = curvature_variation(ctx, g, a01, sigma, adot01);
  LinearizationCheck out;
  out.analytic_norm = norm(analytic);
  out.difference = norm(fd - analytic);
  const double scale = std::max(out.analytic_norm, norm(fd));
  out.relative = scale > 0.0 ? out.difference / scale : 0.0;
  return out;
}

InnerPhiResult solve_inner_phi(const SpectralContext& ctx, const Field& a01,
                               const HEOptions& options,
                               const Field* initial_phi) {
  require(a01.p() == 0 && a01.q() == 1, "potential must be a (0,1)-form");
  if (norm(a01) > options.input_threshold)
    throw std::runtime_error("inner solve input above threshold");
  InnerPhiResult result;
  result.coclosed_defect = norm(ctx.dbar0_star(a01));
  const double source_norm =
      norm(ctx.remove_harmonic(ctx.central_curvature(a01)));
  Field phi = initial_phi ? *initial_phi : zero_field(ctx, 0, 0);
  Field best_phi = phi;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int iter = 0; iter <= options.inner_cap; ++iter) {
    const Field resid = ctx.scrub_degenerate(ctx.remove_harmonic(
        ctx.central_curvature(ctx.gauge_act(pointwise_exp(phi), a01))));
    const double rn = norm(resid);
    result.iterations = iter;
    if (!(rn < best)) {
      ++since_best;
    } else {
      best = rn;
      best_phi = phi;
      since_best = 0;
    }
    if (rn < options.inner_tolerance || since_best > kStallWindow ||
        !std::isfinite(rn) || iter == options.inner_cap)
      break;
    // The flat section Laplacian is twice the spectral dbar-Laplacian, and
    // the residual's derivative along self-adjoint phi is +laplace(phi).
    Field step = Complex(-0.5, 0.0) * ctx.green_solve(resid).solution;
    step = ctx.remove_harmonic(selfadjoint_part(step));
    phi += step;
  }
  result.phi = best_phi;
  result.residual = best;
  result.bound_ratio =
      sobolev_lp_norm(ctx, best_phi, 2) / std::max(source_norm, kTiny);
  if (!std::isfinite(best) ||
      best > kDivergenceFactor * std::max(options.inner_tolerance,
                                          1e-14 * std::max(1.0, source_norm)))
    throw std::runtime_error("inner Newton diverged");
  return result;
}

UnitaryFixResult unitary_gauge_fix(const SpectralContext& ctx,
                                   const Field& b01,
                                   const HEOptions& options) {
  require(b01.p() == 0 && b01.q() == 1, "potential must be a (0,1)-form");
  if (norm(b01) > options.input_threshold)
    throw std::runtime_error("gauge fix input above threshold");
  UnitaryFixResult result;
  const Field b10 = -adjoint_form(b01);
  const double source_norm =
      norm(ctx.del0_star(b10) + ctx.dbar0_star(b01));
  Field psi = zero_field(ctx, 0, 0);
  Field best_psi = psi;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int iter = 0; iter <= options.inner_cap; ++iter) {
    const Field c01 = ctx.gauge_act(pointwise_exp(psi), b01);
    const Field c10 = -adjoint_form(c01);
    const Field resid = ctx.del0_star(c10) + ctx.dbar0_star(c01);
    const double rn = norm(resid);
    result.iterations = iter;
    if (!(rn < best)) {
      ++since_best;
    } else {
      best = rn;
      best_psi = psi;
      since_best = 0;
    }
    if (rn < options.inner_tolerance || since_best > kStallWindow ||
        !std::isfinite(rn) || iter == options.inner_cap)
      break;
    // Linearization at psi: d0* c ~ d0* b - laplace(psi), so the Newton
    // correction carries the opposite sign from the inner curvature solve.
    Field step = Complex(0.5, 0.0) * ctx.green_solve(resid).solution;
    step = ctx.remove_harmonic(skewadjoint_part(step));
    psi += step;
  }
  result.psi = best_psi;
  result.residual = best;
  result.fixed = ctx.gauge_act(pointwise_exp(best_psi), b01);
  result.bound_ratio =
      sobolev_lp_norm(ctx, best_psi, 2) / std::max(source_norm, kTiny);
  if (!std::isfinite(best) ||
      best > kDivergenceFactor * std::max(options.inner_tolerance,
                                          1e-14 * std::max(1.0, source_norm)))
    throw std::runtime_error("gauge fix Newton diverged");
  return result;
}

HeatFlowResult heat_flow_oracle(const SpectralContext& ctx, const Field& a01,
                                double lambda,
                                const HeatFlowOptions& options) {
  require(a01.p() == 0 && a01.q() == 1, "potential must be a (0,1)-form");
  const Field lambda_one = scaled_identity(ctx.geometry(), ctx.rank(), lambda);
  auto central = [&](const Field& g) {
    return ctx.central_curvature(ctx.gauge_act(g, a01)) - lambda_one;
  };
  HeatFlowResult result;
  Field g = identity_field(ctx.geometry(), ctx.rank());
  Field sig = central(g);
  double rn = norm(ctx.scrub_degenerate(sig));
  double h = options.initial_step;
  result.residual_trace.push_back(rn);
  result.gauge_trace.push_back(sup_norm(g));
  for (; result.steps < options.max_steps; ++result.steps) {
    if (rn < options.tolerance) {
      result.converged = true;
      break;
    }
    bool accepted = false;
    while (h >= options.min_step) {
      const Field g_try = wedge(pointwise_exp(Complex(-h, 0.0) * sig), g);
      const Field sig_try = central(g_try);
      const double rn_try = norm(ctx.scrub_degenerate(sig_try));
      if (rn_try < rn) {
        g = g_try;
        sig = sig_try;
        rn = rn_try;
        h *= options.step_grow;
        accepted = true;
        break;
      }
      h *= options.step_shrink;
    }
    if (!accepted) {
      result.step_underflow = true;
      break;
    }
    if ((result.steps + 1) % options.trace_stride == 0) {
      result.residual_trace.push_back(rn);
      result.gauge_trace.push_back(sup_norm(g));
    }
  }
  result.residual_trace.push_back(rn);
  result.gauge_trace.push_back(sup_norm(g));
  result.gauge = g;
  result.residual = rn;
  result.gauge_sup = sup_norm(g);
  const int count = static_cast<int>(result.residual_trace.size());
  if (!result.converged && count >= 4) {
    const int window = std::max(
        2, static_cast<int>(count * options.plateau_window));
    const int start = count - window;
    const double first = result.residual_trace[start];
    const double last = result.residual_trace.back();
    const double decrease = (first - last) / std::max(first, kTiny);
    result.plateau = decrease < options.plateau_decrease;
    result.gauge_grew =
        result.gauge_trace.back() > 1.05 * result.gauge_trace[start];
  }
  return result;
}

NormalFormResult uniqueness_normal_form(const SpectralContext& ctx,
                                        const Field& g,
                                        const HarmonicClass& alpha) {
  require(g.p() == 0 && g.q() == 0 && g.rank() == ctx.rank(),
          "gauge field must be a rank-matched (0,0) field");
  if (pointwise_min_abs_det(g) < 1e-12)
    throw std::runtime_error("singular gauge");
  NormalFormResult result;
  // Positive part of the right polar decomposition absorbs the left unitary
  // ambiguity; pointwise determinant normalization fixes the scale exactly.
  Field q = pointwise_sqrt_positive(wedge(dagger(g), g));
  det_normalize_pointwise(q);
  const std::vector<HarmonicClass> kernel =
      isotropy_selfadjoint_basis(ctx.bundle(), alpha);
  if (kernel.empty()) {
    result.g0 = q;
    result.det_deviation = max_det_deviation(q);
    return result;
  }
  auto gradient = [&](const Field& qq) {
    const HarmonicClass projected =
        ctx.harmonic_project(wedge(dagger(qq), qq));
    std::pair<HarmonicClass, double> out{zero_class(ctx.bundle(), 0), 0.0};
    for (const HarmonicClass& b : kernel) {
      const double c = inner_product(b, projected).real();
      out.first = out.first + c * b;
      out.second += c * c;
    }
    out.second = std::sqrt(out.second);
    return out;
  };
  double energy = norm(q);
  energy *= energy;
  // Right translation along the isotropy decreases the squared norm; steps
  // are accepted on decrease of the projection itself so the iteration
  // converges to the orthogonality condition at roundoff level.
  auto [grad, gn] = gradient(q);
  double eta = 0.5 / std::max(1.0, energy);
  for (int iter = 0; iter < 400; ++iter) {
    result.iterations = iter;
    result.orthogonality_residual = gn;
    if (gn < 1e-13 * std::max(1.0, energy)) break;
    bool moved = false;
    for (int halving = 0; halving < 40; ++halving) {
      const GroupElement move = exp_class(Complex(-eta, 0.0) * grad);
      Field q_try = wedge(q, group_field(ctx, move));
      q_try = pointwise_sqrt_positive(wedge(dagger(q_try), q_try));
      det_normalize_pointwise(q_try);
      auto [grad_try, gn_try] = gradient(q_try);
      if (gn_try < gn) {
        q = std::move(q_try);
        grad = std::move(grad_try);
        gn = gn_try;
        eta *= 1.3;
        moved = true;
        break;
      }
      eta *= 0.5;
    }
    if (!moved) break;
  }
  result.orthogonality_residual = gn;
  result.g0 = q;
  result.det_deviation = max_det_deviation(q);
  return result;
}

namespace {

struct NodeOutcome {
  bool success = false;
  HarmonicClass delta;
  Field phi;
  double residual = 0.0;
  double kernel_residual = 0.0;
  int inner_iterations = 0;
  int outer_iterations = 0;
};

// One fixed-t solve: alternate the inner projected solve with an outer
// pseudo-inverse Newton step on delta driven by the moment-map derivative.
NodeOutcome solve_node(const SpectralContext& ctx, const HarmonicClass& abar,
                       const std::vector<HarmonicClass>& basis, double s,
                       double t, const HarmonicClass& delta_seed,
                       const Field& phi_seed, const HEOptions& options) {
  NodeOutcome node;
  node.delta = delta_seed;
  node.phi = phi_seed;
  const BundleSpec& bundle = ctx.bundle();
  const int dim = static_cast<int>(basis.size());
  const Field lambda_one =
      scaled_identity(ctx.geometry(), ctx.rank(), options.lambda);
  const HarmonicClass lambda_class = scalar_class(bundle, options.lambda);
  Field a1;
  try {
    a1 = assemble_potential(ctx, abar, s, t);
  } catch (const std::exception&) {
    return node;
  }
  for (int outer = 0; outer < options.outer_cap; ++outer) {
    node.outer_iterations = outer + 1;
    const GroupElement conjugator = exp_class(node.delta);
    const Field a_delta = conjugate_field(ctx, conjugator, a1);
    InnerPhiResult inner;
    try {
      inner = solve_inner_phi(ctx, a_delta, options, &node.phi);
    } catch (const std::exception&) {
      return node;
    }
    node.phi = inner.phi;
    node.inner_iterations += inner.iterations;
    const Field total = ctx.central_curvature(
        ctx.gauge_act(pointwise_exp(node.phi), a_delta));
    node.residual = norm(ctx.scrub_degenerate(total - lambda_one));
    const HarmonicClass rho =
        ctx.harmonic_project(total) - lambda_class;
    const HarmonicClass abar_delta = act(conjugator, abar);
    Eigen::MatrixXd m(dim, dim);
    Eigen::VectorXd rhs(dim);
    for (int k = 0; k < dim; ++k) {
      const HarmonicClass column =
          m_alpha_apply(bundle, abar_delta, basis[k]);
      for (int j = 0; j < dim; ++j)
        m(j, k) = t * t * inner_product(basis[j], column).real();
      rhs(k) = -inner_product(basis[k], rho).real();
    }
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const double top = es.eigenvalues().cwiseAbs().maxCoeff();
    const double cutoff = kOuterCutoff * std::max(top, kTiny);
    Eigen::VectorXd coords = Eigen::VectorXd::Zero(dim);
    double kernel_sq = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double lam = es.eigenvalues()(k);
      const double component = es.eigenvectors().col(k).dot(rhs);
      if (std::abs(lam) <= cutoff) {
        kernel_sq += component * component;
      } else {
        coords += (component / lam) * es.eigenvectors().col(k);
      }
    }
    node.kernel_residual = std::sqrt(kernel_sq);
    if (node.residual < options.tolerance) {
      node.success = true;
      return node;
    }
    const double step_norm = coords.norm();
    if (step_norm > kOuterTrust) coords *= kOuterTrust / step_norm;
    if (step_norm <= 0.0) return node;
    HarmonicClass step = zero_class(bundle, 0);
    for (int k = 0; k < dim; ++k) step = step + coords(k) * basis[k];
    node.delta = node.delta + step;
  }
  return node;
}

}  // namespace

HEReport solve_he(const SpectralContext& ctx, const HarmonicClass& alpha,
                  double s, double t, const HEOptions& options) {
  require(alpha.q == 1, "deformation class must have degree (0,1)");
  require(t > 0.0, "t must be positive");
  require(s >= 0.0 && s <= 1.0, "s must lie in [0,1]");
  const BundleSpec& bundle = ctx.bundle();
  const StabilityVerdict verdict = classify(bundle, alpha, options.flow);
  if (verdict.verdict != StabilityClass::kPolystable &&
      verdict.verdict != StabilityClass::kStable)
    throw std::runtime_error("polystability required");
  const HarmonicClass abar = verdict.alpha_bar;
  GroupElement gamma = verdict.gamma;
  det_normalize(gamma);
  const std::vector<HarmonicClass> basis = selfadjoint_tracefree_basis(bundle);

  HEReport report;
  report.alpha = alpha;
  report.s = s;
  report.t = t;
  report.lambda = options.lambda;

  HarmonicClass delta = zero_class(bundle, 0);
  Field phi = zero_field(ctx, 0, 0);
  double t_reached = 0.0;
  double t_cur = std::min(options.seed_t, t);
  int nodes = 0;
  while (true) {
    if (++nodes > options.max_path_nodes)
      throw PathStallError("path node budget exhausted", report);
    const NodeOutcome node =
        solve_node(ctx, abar, basis, s, t_cur, delta, phi, options);
    PathNode trace;
    trace.t = t_cur;
    trace.residual = node.residual;
    trace.inner_iterations = node.inner_iterations;
    trace.outer_iterations = node.outer_iterations;
    trace.delta_norm = norm(node.delta);
    trace.phi_norm = norm(node.phi);
    trace.accepted = node.success;
    report.path.push_back(trace);
    report.inner_iterations += node.inner_iterations;
    report.outer_iterations += node.outer_iterations;
    if (node.success) {
      delta = node.delta;
      phi = node.phi;
      report.kernel_residual = node.kernel_residual;
      t_reached = t_cur;
      if (t_cur >= t) break;
      t_cur = std::min(t, 2.0 * t_cur);
    } else {
      const double t_next = 0.5 * (t_reached + t_cur);
      if (t_cur - t_next < options.min_path_step * std::max(t, 1.0) ||
          t_next <= t_reached)
        throw PathStallError("path step underflow", report);
      t_cur = t_next;
    }
  }

  // Assemble the total gauge against the original input frame; the
  // conjugator transports the minimal-norm frame back.
  Field a_input;
  try {
    a_input = assemble_potential(ctx, alpha, s, t);
  } catch (const std::exception&) {
    a_input = ctx.embed(Complex(t, 0.0) * alpha);
  }
  Field gauge = wedge(pointwise_exp(phi), group_field(ctx, exp_class(delta)));
  gauge = wedge(gauge, group_field(ctx, gamma));
  const Field transformed = ctx.gauge_act(gauge, a_input);
  if (norm(transformed) < options.input_threshold) {
    try {
      const UnitaryFixResult fix = unitary_gauge_fix(ctx, transformed, options);
      gauge = wedge(pointwise_exp(fix.psi), gauge);
    } catch (const std::exception&) {
      // The Coulomb refinement is cosmetic; keep the unfixed gauge.
    }
  }
  const Field lambda_one =
      scaled_identity(ctx.geometry(), ctx.rank(), options.lambda);
  report.residual = norm(ctx.scrub_degenerate(
      ctx.central_curvature(ctx.gauge_act(gauge, a_input)) - lambda_one));
  report.gauge = gauge;
  report.phi = phi;
  report.delta = delta;
  report.det_deviation = max_det_deviation(gauge);
  report.delta_norm = norm(delta);
  report.phi_norm = norm(phi);
  return report;
}

double trace_identity_residual(const SpectralContext& ctx, const Field& g,
                               const Field& a01) {
  require(g.p() == 0 && g.q() == 0 && g.rank() == ctx.rank(),
          "gauge field must be a rank-matched (0,0) field");
  const Field lhs = trace_field(ctx.central_curvature(ctx.gauge_act(g, a01))) -
                    trace_field(ctx.central_curvature(a01));
  const Field log_det = pointwise_log_det_gram(g);
  Field embedded = zero_field(ctx, 0, 0);
  for (int i = 0; i < ctx.rank(); ++i) {
    const Complex* src = log_det.plane(0, 0, 0);
    Complex* dst = embedded.plane(0, i, i);
    for (std::int64_t x = 0; x < embedded.points(); ++x) dst[x] = src[x];
  }
  const Field laplacian = trace_field(ctx.laplace_dbar(embedded));
  const double inv_rank = 1.0 / static_cast<double>(ctx.rank());
  return norm(ctx.scrub_degenerate(lhs - Complex(inv_rank, 0.0) * laplacian));
}

CoercivitySample coercivity_sample(const SpectralContext& ctx,
                                   const Field& a01,
                                   const HarmonicClass& delta,
                                   const HEOptions& options, double fd_step) {
  require(a01.p() == 0 && a01.q() == 1, "potential must be a (0,1)-form");
  require(delta.q == 0, "direction must be a (0,0) class");
  CoercivitySample sample;
  const Field delta_field = ctx.embed(delta);
  const Field commutator =
      wedge(a01, delta_field) - wedge(delta_field, a01);
  sample.commutator_sq = norm(commutator) * norm(commutator);
  auto reduced = [&](double eps) {
    const GroupElement move = exp_class(Complex(eps, 0.0) * delta);
    const Field a_eps = conjugate_field(ctx, move, a01);
    const InnerPhiResult inner = solve_inner_phi(ctx, a_eps, options);
    return ctx.harmonic_project(ctx.central_curvature(
        ctx.gauge_act(pointwise_exp(inner.phi), a_eps)));
  };
  const HarmonicClass derivative =
      Complex(1.0 / (2.0 * fd_step), 0.0) *
      (reduced(fd_step) - reduced(-fd_step));
  sample.pairing = 2.0 * inner_product(delta, derivative).real();
  sample.a_norm = norm(a01);
  sample.delta_norm = norm(delta);
  const double scale = std::pow(sample.a_norm, 4.0) *
                       sample.delta_norm * sample.delta_norm;
  sample.constant =
      std::max(0.0, sample.commutator_sq - sample.pairing) /
      std::max(scale, kTiny);
  return sample;
}

std::string he_report_json(const HEReport& report) {
  nlohmann::json j;
  j["s"] = report.s;
  j["t"] = report.t;
  j["lambda"] = report.lambda;
  j["residual"] = report.residual;
  j["det_deviation"] = report.det_deviation;
  j["inner_iterations"] = report.inner_iterations;
  j["outer_iterations"] = report.outer_iterations;
  j["delta_norm"] = report.delta_norm;
  j["phi_norm"] = report.phi_norm;
  j["kernel_residual"] = report.kernel_residual;
  j["path"] = nlohmann::json::array();
  for (const PathNode& node : report.path) {
    j["path"].push_back({{"t", node.t},
                         {"residual", node.residual},
                         {"inner_iterations", node.inner_iterations},
                         {"outer_iterations", node.outer_iterations},
                         {"delta_norm", node.delta_norm},
                         {"phi_norm", node.phi_norm},
                         {"accepted", node.accepted}});
  }
  return j.dump();
}

}  // namespace hetorus
