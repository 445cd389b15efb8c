#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "hetorus/bundle_complex.hpp"
#include "hetorus/kuranishi.hpp"
#include "hetorus/moment_git.hpp"

namespace hetorus {

struct HEOptions {
  // Central curvature level; zero for degree-zero bundles on the unit-volume
  // torus. Kept as a parameter so reports stay dimension-aware.
  double lambda = 0.0;
  // Target for the full residual ||i Lambda F - lambda 1||_{L2, scrubbed}.
  double tolerance = 1e-10;
  // Target for the projected inner equation residual.
  double inner_tolerance = 1e-12;
  int inner_cap = 120;
  int outer_cap = 40;
  // t-path seed and the smallest accepted interval between path nodes,
  // relative to the target t.
  double seed_t = 0.02;
  double min_path_step = 1e-6;
  int max_path_nodes = 200;
  // Largest accepted potential L2 norm for the gauge-fixing solvers.
  double input_threshold = 0.3;
  // Classification of the solve_he precondition.
  FlowOptions flow;
};

struct InnerPhiResult {
  Field phi;              // self-adjoint, orthogonal to the flat kernel
  double residual = 0.0;  // ||Pi_perp i F-hat(exp(phi).(d0+a))||
  int iterations = 0;
  // Sobolev-2 norm of phi over the L2 norm of the projected source
  // Pi_perp i Lambda(d0 a + a ^ a): the measured constant of the a priori
  // bound on the inner solution.
  double bound_ratio = 0.0;
  // ||dbar0* a''||; the quadratic smallness of phi needs this to vanish.
  double coclosed_defect = 0.0;
};

// Comparison of the analytic first variation of the central curvature against
// a centered finite difference along the same direction.
struct LinearizationCheck {
  double analytic_norm = 0.0;
  double difference = 0.0;
  double relative = 0.0;
};

struct UnitaryFixResult {
  Field psi;    // skew-adjoint, orthogonal to the flat kernel
  Field fixed;  // (0,1) potential of exp(psi).(d0+b)
  double residual = 0.0;  // ||d0*( exp(psi).(d0+b) - d0 )||
  int iterations = 0;
  // Sobolev-2 norm of psi over ||d0* b||: the measured gauge-fixing constant.
  double bound_ratio = 0.0;
};

struct NormalFormResult {
  // Positive self-adjoint, pointwise unit determinant, with the flat-kernel
  // part of g0*g0 orthogonal to the trace-free isotropy of alpha.
  Field g0;
  double orthogonality_residual = 0.0;
  double det_deviation = 0.0;
  int iterations = 0;
};

struct HeatFlowOptions {
  double lambda = 0.0;
  double tolerance = 1e-10;
  double initial_step = 0.25;
  double step_grow = 1.2;
  double step_shrink = 0.5;
  double min_step = 1e-13;
  int max_steps = 40000;
  int trace_stride = 16;
  // Plateau detection over the trailing window: the run is flagged when the
  // relative residual decrease falls below plateau_decrease across the final
  // plateau_window fraction of recorded steps.
  double plateau_decrease = 0.05;
  double plateau_window = 0.25;
};

struct HeatFlowResult {
  Field gauge;
  double residual = 0.0;
  int steps = 0;
  bool converged = false;
  bool step_underflow = false;
  // Residual stalled over the trailing window while the gauge norm kept
  // growing: the divergence signature of non-polystable inputs.
  bool plateau = false;
  bool gauge_grew = false;
  double gauge_sup = 0.0;
  std::vector<double> residual_trace;
  std::vector<double> gauge_trace;
};

struct PathNode {
  double t = 0.0;
  double residual = 0.0;
  int inner_iterations = 0;
  int outer_iterations = 0;
  double delta_norm = 0.0;
  double phi_norm = 0.0;
  bool accepted = false;
};

struct HEReport {
  HarmonicClass alpha;  // input class
  double s = 0.0;
  double t = 0.0;
  double lambda = 0.0;
  // Total gauge: unitary fix . exp(phi) . exp(delta) . minimizing conjugator.
  Field gauge;
  Field phi;            // self-adjoint, orthogonal to the flat kernel
  HarmonicClass delta;  // self-adjoint, global-trace-free flat-kernel part
  double residual = 0.0;
  double det_deviation = 0.0;  // max over the grid of |det(gauge) - 1|
  int inner_iterations = 0;
  int outer_iterations = 0;
  double delta_norm = 0.0;
  double phi_norm = 0.0;
  // Component of the final central residual inside the isotropy of alpha.
  // The blockwise degree-zero trace identities make it vanish; it is reported
  // so a violation surfaces as a diagnostic instead of a silent stall.
  double kernel_residual = 0.0;
  std::vector<PathNode> path;
};

// Raised when t-path-following cannot reach the target; carries the partial
// report with the full path trace.
class PathStallError : public std::runtime_error {
 public:
  PathStallError(const std::string& message, HEReport partial);
  HEReport report;
};

// i Lambda F(d0 + a) for the hermitian pair a = -(a'')* + a''. Pointwise
// self-adjoint with vanishing trace integral on these degree-zero bundles.
Field central_curvature(const SpectralContext& ctx, const Field& a01);

// Covariant (1,0)-side derivative and adjoint on (0,0) respectively (1,0)
// End-valued forms, obtained from the (0,1) machinery by form-adjoint
// conjugation of the hermitian pair with (0,1) potential b01.
Field del_end(const SpectralContext& ctx, const Field& b01, const Field& f);
Field del_end_star(const SpectralContext& ctx, const Field& b01,
                   const Field& f);
// Covariant section Laplacian d_b* d_b on (0,0) fields.
Field section_laplacian(const SpectralContext& ctx, const Field& b01,
                        const Field& f);

// First variation of (g, a) -> i F-hat(g.(d0+a)) at gauge g along
// sigma = g' g^{-1} and the hermitian variation with (0,1) part adot01:
//   del_b*(g*^{-1} adot' g*) - dbar_b*(g adot'' g^{-1})
//   + laplace_b(sigma_+) - [i F-hat(b), sigma_-].
// Either direction may be an empty Field to vary only the other argument.
Field curvature_variation(const SpectralContext& ctx, const Field& g,
                          const Field& a01, const Field& sigma,
                          const Field& adot01);

LinearizationCheck linearization_check(const SpectralContext& ctx,
                                       const Field& g, const Field& a01,
                                       const Field& sigma, const Field& adot01,
                                       double step = 1e-4);

// Projected inner equation: self-adjoint phi orthogonal to the flat kernel
// with Pi_perp i F-hat(exp(phi).(d0+a)) = 0, by Newton steps preconditioned
// with the flat section Laplacian. Throws on divergence.
InnerPhiResult solve_inner_phi(const SpectralContext& ctx, const Field& a01,
                               const HEOptions& options = {},
                               const Field* initial_phi = nullptr);

// Coulomb gauge at d0: unique skew-adjoint psi orthogonal to the flat kernel
// with d0*( exp(psi).(d0+b) - d0 ) = 0. Throws above the input threshold and
// on divergence.
UnitaryFixResult unitary_gauge_fix(const SpectralContext& ctx,
                                   const Field& b01,
                                   const HEOptions& options = {});

// Independent descent oracle g' g^{-1} = -(i F-hat - lambda 1) with adaptive
// steps accepted only when the residual decreases. Reports divergence
// signatures instead of throwing; non-polystable inputs are expected to
// plateau with growing gauge norm.
HeatFlowResult heat_flow_oracle(const SpectralContext& ctx, const Field& a01,
                                double lambda,
                                const HeatFlowOptions& options = {});

// Representative of the solution modulo its structural ambiguity: positive
// self-adjoint, pointwise unit determinant, flat-kernel part of g0*g0
// orthogonal to the trace-free isotropy of alpha. Solutions of the same
// problem agree here up to conjugation by unitary isotropy elements.
NormalFormResult uniqueness_normal_form(const SpectralContext& ctx,
                                        const Field& g,
                                        const HarmonicClass& alpha);

// Two-level solve of i Lambda F(g.(d0 + a_{s,t})) = lambda 1 for
// a''_{s,t} = t alpha + s dbar0* beta(t alpha): inner phi solve alternating
// with an outer Newton correction delta driven by the moment-map derivative
// on the trace-free self-adjoint flat kernel, continued along an increasing
// t-path with doubling steps and halving on failure. Requires a polystable
// input and throws PathStallError when the path collapses.
HEReport solve_he(const SpectralContext& ctx, const HarmonicClass& alpha,
                  double s, double t, const HEOptions& options = {});

// L2 norm of tr iF-hat(g.(d0+a)) - tr iF-hat(d0+a) - laplace(log det(g* g)),
// the scalar compatibility identity every gauge transform must satisfy.
double trace_identity_residual(const SpectralContext& ctx, const Field& g,
                               const Field& a01);

struct CoercivitySample {
  double commutator_sq = 0.0;  // ||[a'', delta]||^2
  double pairing = 0.0;        // 2 Re<delta, D Phi-hat(delta)>
  double a_norm = 0.0;
  double delta_norm = 0.0;
  // max(0, commutator_sq - pairing) / (||a||^4 ||delta||^2): the measured
  // constant of the coercivity inequality.
  double constant = 0.0;
};

// Finite-difference sample of the reduced-map coercivity along a flat-kernel
// self-adjoint direction; the inner equation is re-solved at each endpoint.
CoercivitySample coercivity_sample(const SpectralContext& ctx,
                                   const Field& a01,
                                   const HarmonicClass& delta,
                                   const HEOptions& options = {},
                                   double fd_step = 1e-4);

// JSON serialization including the full t-path trace.
std::string he_report_json(const HEReport& report);

}  // namespace hetorus
