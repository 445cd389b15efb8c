#pragma once

#include <vector>

#include "hetorus/bundle_complex.hpp"
#include "hetorus/torus_geometry.hpp"

namespace hetorus {

struct KuranishiOptions {
  // Largest input L2 norm accepted by the slice solvers.
  double slice_radius = 0.3;
  int iteration_cap = 60;
  double tolerance = 1e-11;
};

// Output of the complex gauge fixing: phi solves
// dbar0*( exp(phi).(d0 + a) ) = 0 with phi orthogonal to the flat kernel,
// `fixed` is the transformed (0,1) potential.
struct GaugeFixResult {
  Field phi;
  Field fixed;
  double residual = 0.0;
  int iterations = 0;
  // ||phi|| / ||dbar0* a||, the measured gauge-fixing constant.
  double constant_ratio = 0.0;
};

struct BetaResult {
  Field beta;  // empty on a curve (no (0,2)-forms)
  double residual = 0.0;
  int iterations = 0;
  // Sobolev-2 norm of beta over the squared L6 norm of the input.
  double bound_ratio = 0.0;
};

struct EquivarianceReport {
  double beta_residual = 0.0;
  double psi_residual = 0.0;
};

struct EllipticReport {
  double max_ratio = 0.0;
  double median_ratio = 0.0;
  std::vector<double> ratios;
};

// Full slice data at one input potential: gauge fix, harmonic part, the
// degree-two correction solved from the harmonic part, and the obstruction
// value with its residuals.
struct KuranishiSolution {
  Field input;
  Field phi;
  Field fixed;
  HarmonicClass alpha;
  Field beta;
  HarmonicClass psi_value;
  double gauge_residual = 0.0;
  double beta_residual = 0.0;
  double integrability_residual = 0.0;
};

// Discrete Sobolev stand-in: L6 grid norm of (1 + laplacian)^{order/2} f,
// applied through the twisted spectral symbol.
double sobolev_lp_norm(const SpectralContext& ctx, const Field& f, int order);

// Constant (0,0) field carrying the block-diagonal group element.
Field group_field(const SpectralContext& ctx, const GroupElement& g);
// Pointwise conjugation g f g^{-1} by a group element.
Field conjugate_field(const SpectralContext& ctx, const GroupElement& g,
                      const Field& f);
// Blockwise conjugation of a harmonic class.
HarmonicClass conjugate_class(const BundleSpec& bundle, const GroupElement& g,
                              const HarmonicClass& h);

// Newton iteration preconditioned by the flat Green operator; optional
// initial guess for uniqueness probes. Throws "outside slice radius" above
// the configured threshold and reports the final residual on divergence.
GaugeFixResult fix_complex_gauge(const SpectralContext& ctx, const Field& a01,
                                 const KuranishiOptions& options = {},
                                 const Field* initial_phi = nullptr);

// Unique degree-two correction beta orthogonal to the flat kernel with
// dbar0*( dbar0 b + b ^ b ) = 0 for b = a + dbar0* beta. Newton is the
// default solver.
BetaResult solve_beta(const SpectralContext& ctx, const Field& a01,
                      const KuranishiOptions& options = {});
// Damped fixed-point cross-check oracle for the same equation (runs at twice
// the iteration budget, relaxation 0.5).
BetaResult solve_beta_fixed_point(const SpectralContext& ctx, const Field& a01,
                                  const KuranishiOptions& options = {});

// Obstruction value: harmonic projection of b ^ b at b = alpha + dbar0* beta.
HarmonicClass psi(const SpectralContext& ctx, const HarmonicClass& alpha,
                  const KuranishiOptions& options = {});

// Residuals of beta and psi against conjugation by a group element.
EquivarianceReport check_equivariance(const SpectralContext& ctx,
                                      const HarmonicClass& alpha,
                                      const GroupElement& gamma,
                                      const KuranishiOptions& options = {});

// Empirical supremum of ||a||_{S1,6} over the elliptic right-hand side
// ||dbar0* a|| + ||dbar0 a + a ^ a|| + ||harmonic part||; diagnostic only.
EllipticReport estimate_elliptic_constant(const SpectralContext& ctx,
                                          const std::vector<Field>& samples);
// Convenience corpus generator: mixes harmonic, exact, and band-limited
// random directions below the slice radius.
EllipticReport estimate_elliptic_constant(const SpectralContext& ctx, int count,
                                          Rng& rng,
                                          const KuranishiOptions& options = {});

// Gauge fix, project, solve beta from the harmonic part, evaluate the
// obstruction, and collect residuals.
KuranishiSolution solve_kuranishi(const SpectralContext& ctx, const Field& a01,
                                  const KuranishiOptions& options = {});

// Bisection for the largest radius at which gauge fixing converges from
// `directions` random band-limited directions; validates the default.
double probe_slice_radius(const SpectralContext& ctx, Rng& rng,
                          int directions = 20,
                          const KuranishiOptions& options = {});

}  // namespace hetorus
