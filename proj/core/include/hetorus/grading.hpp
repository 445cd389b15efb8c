#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hetorus/bundle_complex.hpp"
#include "hetorus/kuranishi.hpp"
#include "hetorus/moment_git.hpp"

namespace hetorus {

struct GradingOptions {
  // Conjugator flow pushed to the numerical floor so degenerating directions
  // of the rescaled limit drop well below the kernel threshold.
  FlowOptions limit_flow = {.tol_m = 1e-15, .max_steps = 100000};
  // Per-piece minimization only needs the moment invariant.
  FlowOptions piece_flow = {.tol_m = 1e-12};
  // Singular values of the normalized limit below threshold * (largest)
  // count as kernel directions.
  double kernel_threshold = 1e-7;
  double moment_tolerance = 1e-9;
  // Intertwiner certificates: relative intertwining defect and the
  // scale-invariant block invertibility margin.
  double iso_residual_tolerance = 1e-8;
  double iso_margin = 1e-6;
  double psi_tolerance = 1e-9;
  double trivial_tolerance = 1e-8;
  // Relative coclosedness defect accepted by the slice preconditions.
  double slice_tolerance = 1e-7;
  // Field-level routes embed classes rescaled to at most this norm so the
  // slice solvers stay inside their radius; intertwiners are scale free.
  double field_scale = 0.12;
  // Flow restarts used to sharpen the limit conjugator before thresholding.
  int sharpen_restarts = 6;
};

// One nested subspace of the kernel flag: per-group orthonormal injector
// columns in the frame of the bundle the filtration was computed on.
struct FiltrationStep {
  int rank = 0;
  std::vector<Eigen::MatrixXcd> injectors;
};

struct KernelFiltration {
  // False for bounded conjugator paths: the orbit is closed and the
  // filtration is the single full step.
  bool degenerate = false;
  // Normalized self-adjoint nonnegative limit of the flow conjugators,
  // Frobenius norm one; determinant ~ 0 exactly when degenerate.
  GroupElement gamma0;
  double gamma0_norm = 0.0;
  double gamma0_det = 0.0;
  // Largest off-block leakage of the input class over the flag subspaces;
  // exact invariance gives zero.
  double invariance_defect = 0.0;
  std::vector<FiltrationStep> steps;
};

struct GradedPiece {
  BundleSpec bundle;
  // Orthonormal columns per parent group embedding the quotient slot.
  std::vector<Eigen::MatrixXcd> injectors;
  int rank = 0;
  // Induced quotient class brought to its minimal representative.
  HarmonicClass piece_class;
  double moment_norm = 0.0;
  bool closed_orbit = false;
};

struct IsoCertificate {
  bool isomorphic = false;
  GroupElement intertwiner;
  // Relative field-level intertwining defect of the certificate.
  double residual = 0.0;
  // min over blocks of |det X| / (||X||_F / sqrt(m))^m.
  double margin = 0.0;
  // Smallest relative singular value of the intertwining system.
  double smallest_obstruction = 0.0;
  int kernel_dimension = 0;
};

struct GradingReport {
  HarmonicClass alpha;
  HarmonicClass alpha_bar;
  StabilityClass verdict = StabilityClass::kInconclusive;
  double psi_norm = 0.0;
  KernelFiltration filtration;
  std::vector<GradedPiece> pieces;
  // Block-diagonal graded class assembled in the parent frame.
  HarmonicClass graded_class;
  IsoCertificate certificate;
  // Scale applied to both classes before the field-level comparison.
  double field_scale = 1.0;
  bool pass = false;
};

// Smallest-norm point of the orbit closure: the flow limit for semistable
// inputs, zero for unstable ones. Throws on an inconclusive classification.
HarmonicClass orbit_closure_polystable(const BundleSpec& bundle,
                                       const HarmonicClass& alpha,
                                       const GradingOptions& options = {});

// Rescaled self-adjoint limit of the flow conjugators and the nested kernel
// flag it generates; `flow` is the minimize_flow output for `alpha`. Bounded
// paths return the trivial single-step filtration.
KernelFiltration limit_kernel_filtration(const BundleSpec& bundle,
                                         const HarmonicClass& alpha,
                                         const FlowResult& flow,
                                         const GradingOptions& options = {});

// Successive quotients of the kernel flag, refined to irreducible summands
// and brought to their minimal representatives.
std::vector<GradedPiece> graded_object(const BundleSpec& bundle,
                                       const HarmonicClass& alpha,
                                       const GradingOptions& options = {});

// Block-diagonal class assembled from the pieces in the parent frame.
HarmonicClass assemble_graded_class(const BundleSpec& bundle,
                                    const std::vector<GradedPiece>& pieces);

// Searches for an invertible block-constant intertwiner X with
// a2 X = X a1 pointwise; holomorphic rigidity restricts the search space to
// covariantly constant candidates. Both potentials must be coclosed and
// inside the slice radius.
IsoCertificate is_isomorphic(const SpectralContext& ctx, const Field& a1,
                             const Field& a2,
                             const GradingOptions& options = {});

// Orbit-closure degeneration on one side, kernel-flag graded object on the
// other, and the intertwiner verdict between the two field embeddings.
GradingReport verify_gr_theorem(const SpectralContext& ctx,
                                const HarmonicClass& alpha,
                                const GradingOptions& options = {});

// Vanishing harmonic part cross-checked against is_isomorphic with the flat
// potential; throws if the two routes disagree.
bool recover_trivial(const SpectralContext& ctx, const Field& a01,
                     const GradingOptions& options = {});

std::string grading_report_json(const GradingReport& report);

}  // namespace hetorus
