#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "hetorus/torus_geometry.hpp"

namespace hetorus {

// Direct sum of flat line bundles indexed by holonomy characters in [0,1)^{2n}.
// Equal characters must be adjacent so that the automorphism blocks are
// contiguous; distinct characters whose difference is integral are rejected
// (they would describe isomorphic summands placed in different groups).
struct BundleSpec {
  int n = 0;
  int rank = 0;
  std::vector<std::vector<double>> characters;  // rank entries of length 2n
  std::vector<int> group_of;                    // summand -> group id
  std::vector<int> group_offset;                // first summand of each group
  std::vector<int> multiplicities;              // block sizes m_g

  int group_count() const { return static_cast<int>(multiplicities.size()); }
};

BundleSpec make_bundle_spec(int n, std::vector<std::vector<double>> characters);

// Constant block-diagonal representative of a dbar0-harmonic (0,q) class:
// per antiholomorphic index subset and per equal-character group one m_g x m_g
// matrix. Off-group blocks vanish identically.
struct HarmonicClass {
  int n = 0;
  int q = 0;
  // blocks[combo][group]
  std::vector<std::vector<Eigen::MatrixXcd>> blocks;

  int combos() const { return static_cast<int>(blocks.size()); }
};

HarmonicClass zero_class(const BundleSpec& bundle, int q);
HarmonicClass random_class(const BundleSpec& bundle, int q, Rng& rng);
HarmonicClass operator+(HarmonicClass a, const HarmonicClass& b);
HarmonicClass operator-(HarmonicClass a, const HarmonicClass& b);
HarmonicClass operator*(Complex scale, HarmonicClass a);
// Blockwise conjugate transpose per combo.
HarmonicClass dagger_class(HarmonicClass a);
// Conjugate-linear in the first argument, with the (0,q) metric weight 2^q.
Complex inner_product(const HarmonicClass& a, const HarmonicClass& b);
double norm(const HarmonicClass& a);

// Element of Gamma = prod_g GL(m_g): one invertible matrix per group.
struct GroupElement {
  std::vector<Eigen::MatrixXcd> blocks;
};

GroupElement identity_element(const BundleSpec& bundle);
GroupElement multiply(const GroupElement& a, const GroupElement& b);
GroupElement inverse(const GroupElement& a);
GroupElement dagger_element(const GroupElement& a);
GroupElement random_unitary_element(const BundleSpec& bundle, Rng& rng);
// exp of a q=0 class, blockwise.
GroupElement exp_class(const HarmonicClass& a);
// Scales each block to unit determinant (principal root); returns the largest
// applied |scale - 1|.
double det_normalize(GroupElement& a);
double max_condition(const GroupElement& a);
double norm_element(const GroupElement& a);

// Solution of Laplace''(x) = rhs - (harmonic part): the discarded harmonic
// class and the squared-norm energy of Nyquist-degenerate zero-symbol modes
// (excluded from the invertible sector by convention) are reported.
struct GreenResult {
  Field solution;
  HarmonicClass discarded;
  double degenerate_energy = 0.0;
};

struct PerturbedSpace {
  std::vector<Field> basis;
  std::vector<double> singular_values;
  int iterations = 0;
};

// Spectral operator context for one geometry + bundle: caches per-group-pair
// twisted derivative symbols. Immutable after construction.
class SpectralContext {
 public:
  SpectralContext(const TorusGeometry& geometry, const BundleSpec& bundle);

  const TorusGeometry& geometry() const { return geometry_; }
  const BundleSpec& bundle() const { return bundle_; }
  int rank() const { return bundle_.rank; }

  // dim H^{0,q} = C(n,q) sum_g m_g^2.
  int harmonic_dimension(int q) const;

  // Twisted Dolbeault operators on matrix-valued (p,q)-forms. dbar0 raises q,
  // del0 raises p; the starred versions are their exact discrete adjoints.
  Field dbar0(const Field& f) const;
  Field dbar0_star(const Field& f) const;
  Field del0(const Field& f) const;
  Field del0_star(const Field& f) const;
  // dbar-Laplacian via its diagonal spectral symbol 2 pi^2 sum_a |k_a + xi_a|^2.
  Field laplace_dbar(const Field& f) const;

  // dbar0 + a ^ . (left wedge only; callers add the right-wedge side).
  Field dbar(const Field& a01, const Field& f) const;
  // Graded commutator extension acting on End-valued forms and its adjoint.
  Field dbar_end(const Field& a01, const Field& f) const;
  Field dbar_end_star(const Field& a01, const Field& f) const;

  // Adjoints of left/right wedge multiplication by a (0,1)-form.
  Field wedge_left_adjoint(const Field& a01, const Field& v) const;
  Field wedge_right_adjoint(const Field& a01, const Field& v) const;

  HarmonicClass harmonic_project(const Field& f) const;
  Field embed(const HarmonicClass& h) const;
  Field remove_harmonic(const Field& f) const;
  GreenResult green_solve(const Field& rhs) const;
  // Zeroes the Nyquist-degenerate modes (zero derivative symbol away from the
  // origin) that the discretization excludes; identity on twisted entries.
  Field scrub_degenerate(const Field& f) const;

  struct Curvature {
    Field f20;
    Field f11;
    Field f02;
  };
  // Curvature of d0 + a for the hermitian connection with a' = -(a'')*.
  Curvature curvature(const Field& a01) const;
  // i Lambda F^{1,1}(d0 + a), pointwise self-adjoint.
  Field central_curvature(const Field& a01) const;
  double curvature_norm(const Curvature& f) const;

  // (0,1) potential of g.(d0 + a): g a'' g^{-1} - (dbar0 g) g^{-1}.
  Field gauge_act(const Field& g, const Field& a01) const;
  // (1,0) potential of the same action: g*^{-1} a' g* + g*^{-1} del0(g*).
  Field gauge_act_10(const Field& g, const Field& a10) const;

  // Lowest `count` singular vectors of the stacked deformed operator
  // (dbar_a, dbar_a*) on End-valued (0,q)-forms via preconditioned subspace
  // iteration; throws on non-convergence within the iteration cap.
  PerturbedSpace perturbed_harmonic_space(int q, const Field& a01, int count,
                                          Rng& rng, int max_iterations = 60,
                                          double tolerance = 1e-9) const;

  // Symbol access for oracles: entry (i,j), complex axis a.
  Complex w_symbol(int i, int j, int a, std::int64_t x) const;
  double laplace_symbol(int i, int j, std::int64_t x) const;
  bool untwisted(int i, int j) const {
    return bundle_.group_of[i] == bundle_.group_of[j];
  }

 private:
  struct PairTable {
    std::vector<std::vector<Complex>> w;  // [axis][grid]
    std::vector<double> laplace;          // [grid]
  };

  const PairTable& pair_table(int i, int j) const {
    return tables_[bundle_.group_of[i] * bundle_.group_count() +
                   bundle_.group_of[j]];
  }

  enum class Derivative { kDbar, kDbarStar, kDel, kDelStar };
  Field spectral_derivative(const Field& f, Derivative kind) const;

  TorusGeometry geometry_;
  BundleSpec bundle_;
  std::vector<PairTable> tables_;  // group pair -> symbols
};

}  // namespace hetorus
