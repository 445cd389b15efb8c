#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hetorus/bundle_complex.hpp"

namespace hetorus {

enum class StabilityClass {
  kUnstable,
  kSemistableNotPolystable,
  kPolystable,
  kStable,
  kInconclusive,
};

std::string to_string(StabilityClass value);

struct FlowOptions {
  double tol_m = 1e-9;
  // tol_zero = tol_zero_factor * ||alpha_0||.
  double tol_zero_factor = 1e-10;
  double initial_step = 0.1;
  double step_grow = 1.2;
  double step_shrink = 0.5;
  double min_step = 1e-14;
  int max_steps = 50000;
};

struct FlowResult {
  HarmonicClass alpha_bar;
  GroupElement gamma;  // total det-normalized conjugator
  double final_moment_norm = 0.0;
  double final_norm = 0.0;
  int steps = 0;
  bool reached_moment_tolerance = false;
  bool reached_zero = false;
  bool step_underflow = false;
  // Subsampled ||alpha_t|| along accepted steps, for reports.
  std::vector<double> norm_trace;
  std::vector<double> moment_trace;
};

struct StabilityVerdict {
  StabilityClass verdict = StabilityClass::kInconclusive;
  double minimal_norm = 0.0;
  HarmonicClass alpha_bar;
  // Centralizer kernel counts resolved at the 1e-6 level: at the refined
  // limit and at the input. A strict increase means the orbit closed up, the
  // robust integer signature of a non-polystable semistable point.
  int isotropy_dim = 0;
  int input_isotropy_dim = 0;
  bool isotropy_jump = false;
  // Scale-invariant invertibility of the best intertwiner candidate:
  // min over blocks of |det X| / (||X||_F / sqrt(m))^m.
  double membership_margin = 0.0;
  double polished_moment_norm = 0.0;
  bool has_witness = false;
  std::vector<double> witness_weights;  // per summand, destabilizing if found
  double witness_flat = 0.0;
  double witness_sharp = 0.0;
  GroupElement gamma;
  FlowResult flow;
};

struct OnePsWeights {
  bool degenerate = false;  // no support: alpha vanishes for this torus
  double w_flat = 0.0;
  double w_sharp = 0.0;
};

struct SkewSumReport {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

struct MinimalityGap {
  double gap = 0.0;
  double mnorm = 0.0;
  double ratio = 0.0;
};

// Blockwise conjugation action on harmonic classes.
HarmonicClass act(const GroupElement& gamma, const HarmonicClass& alpha);

// Moment map in the frozen conventions: per group block
// m_g = 2 sum_b [A_b, A_b^dagger], self-adjoint and trace-free; equals the
// constant-projection of -i Lambda (alpha ^ alpha* + alpha* ^ alpha).
HarmonicClass moment(const BundleSpec& bundle, const HarmonicClass& alpha);
// Grid-quadrature route through the field layer; must agree with moment().
HarmonicClass moment_quadrature(const SpectralContext& ctx,
                                const HarmonicClass& alpha);

// Imaginary part of the hermitian L2 pairing; the symplectic form for which
// the descent direction identities hold.
double symplectic_pairing(const HarmonicClass& a, const HarmonicClass& b);

// Derivative of gamma -> m(gamma alpha gamma^{-1}) at the identity applied to
// delta: 2 sum_b ([[delta, A_b], A_b^dagger] + [A_b, [A_b^dagger, delta^dagger]]).
HarmonicClass m_alpha_apply(const BundleSpec& bundle, const HarmonicClass& alpha,
                            const HarmonicClass& delta);

// Kempf-Ness descent gamma' gamma^{-1} = -m(alpha_t) with adaptive steps
// accepted only when ||alpha_t|| does not increase. Terminates at
// ||m|| < tol_m, ||alpha|| < tol_zero, step underflow, or the step cap.
FlowResult minimize_flow(const BundleSpec& bundle, const HarmonicClass& alpha,
                         const FlowOptions& options = {});

// Full verdict: descent flow, extended-precision Newton refinement of the
// conjugator, isotropy-jump detection, and the intertwiner margin. Boundary
// cases with contradictory evidence come back Inconclusive.
StabilityVerdict classify(const BundleSpec& bundle, const HarmonicClass& alpha,
                          const FlowOptions& options = {});

// Weight range of alpha under the diagonal one-parameter subgroup with
// exponents w (entry (i,j) carries weight w_i - w_j).
OnePsWeights one_ps_weights(const HarmonicClass& alpha,
                            const std::vector<double>& weights);

// Basis of the complex kernel of delta -> [alpha, delta] on the block
// algebra (always contains the blockwise scalars).
std::vector<HarmonicClass> isotropy(const BundleSpec& bundle,
                                    const HarmonicClass& alpha,
                                    double threshold = 1e-10);
int isotropy_dimension(const BundleSpec& bundle, const HarmonicClass& alpha,
                       double threshold = 1e-10);

// Row-sum inequality for skew-symmetric matrices with nonnegative upper
// triangle: sum_{i<j} s_ij <= 2^{m-1} sum_i |sum_j s_ij|.
SkewSumReport skew_sum_inequality(const Eigen::MatrixXd& s);

// Norm gap ||gamma alpha gamma^{-1}||^2 - ||alpha||^2 (nonnegative at moment
// zeros) against the moment norm at the displaced point.
MinimalityGap minimality_gap(const BundleSpec& bundle, const HarmonicClass& alpha,
                             const GroupElement& gamma, double tol = 1e-9);

}  // namespace hetorus
