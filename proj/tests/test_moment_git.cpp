#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "hetorus/bundle_complex.hpp"
#include "hetorus/moment_git.hpp"
#include "hetorus/rng.hpp"
#include "hetorus/torus_geometry.hpp"

namespace {

using hetorus::BundleSpec;
using hetorus::Complex;
using hetorus::FlowOptions;
using hetorus::FlowResult;
using hetorus::GroupElement;
using hetorus::HarmonicClass;
using hetorus::Rng;
using hetorus::SpectralContext;
using hetorus::StabilityClass;
using hetorus::StabilityVerdict;
using hetorus::TorusGeometry;

constexpr double kTolExact = 1e-12;
constexpr double kTolEquivariance = 1e-10;
constexpr double kTolFd = 1e-7;
constexpr double kTolPairingFd = 1e-6;
constexpr double kTolMinimalNorm = 1e-6;

BundleSpec trivial_bundle(int n, int rank) {
  std::vector<std::vector<double>> characters(
      rank, std::vector<double>(2 * n, 0.0));
  return hetorus::make_bundle_spec(n, characters);
}

BundleSpec curve_two_group() {
  return hetorus::make_bundle_spec(1, {{0.3, 0.15}, {0.0, 0.55}});
}

Eigen::Matrix2cd mat2(Complex a, Complex b, Complex c, Complex d) {
  Eigen::Matrix2cd m;
  m << a, b, c, d;
  return m;
}

// q = 1 class on a single-group bundle from one matrix per antiholomorphic
// axis.
HarmonicClass class_of(const BundleSpec& bundle,
                       const std::vector<Eigen::MatrixXcd>& per_combo) {
  HarmonicClass h = hetorus::zero_class(bundle, 1);
  REQUIRE(h.combos() == static_cast<int>(per_combo.size()));
  for (int b = 0; b < h.combos(); ++b) h.blocks[b][0] = per_combo[b];
  return h;
}

double trace_pair(const HarmonicClass& delta, const HarmonicClass& m) {
  Complex s = 0.0;
  for (std::size_t g = 0; g < m.blocks[0].size(); ++g) {
    s += (delta.blocks[0][g].adjoint() * m.blocks[0][g]).trace();
  }
  return s.real();
}

HarmonicClass selfadjoint_class(const BundleSpec& bundle, Rng& rng) {
  HarmonicClass d = hetorus::random_class(bundle, 0, rng);
  return Complex(0.5, 0.0) * (d + hetorus::dagger_class(d));
}

HarmonicClass skewadjoint_class(const BundleSpec& bundle, Rng& rng) {
  HarmonicClass d = hetorus::random_class(bundle, 0, rng);
  return Complex(0.5, 0.0) * (d - hetorus::dagger_class(d));
}

// [delta, alpha] as a (0,1) class for a (0,0) direction delta.
HarmonicClass commutator_class(const HarmonicClass& delta,
                               const HarmonicClass& alpha) {
  HarmonicClass out = alpha;
  for (auto& combo : out.blocks) {
    for (std::size_t g = 0; g < combo.size(); ++g) {
      combo[g] = delta.blocks[0][g] * combo[g] - combo[g] * delta.blocks[0][g];
    }
  }
  return out;
}

// Blockwise conjugator with condition number at most s_max^2.
GroupElement bounded_conjugator(const BundleSpec& bundle, Rng& rng,
                                double s_max) {
  GroupElement g = hetorus::random_unitary_element(bundle, rng);
  const GroupElement v = hetorus::random_unitary_element(bundle, rng);
  for (int k = 0; k < bundle.group_count(); ++k) {
    const int m = bundle.multiplicities[k];
    Eigen::VectorXcd d(m);
    for (int i = 0; i < m; ++i) {
      d(i) = std::exp(rng.uniform(-std::log(s_max), std::log(s_max)));
    }
    g.blocks[k] = g.blocks[k] * d.asDiagonal() * v.blocks[k];
  }
  hetorus::det_normalize(g);
  return g;
}

// Independent scaling-limit estimate of the minimal weight: the norm of
// chi(t) alpha chi(t)^{-1} behaves like t^{w_flat} as t -> 0.
double log_slope_oracle(const HarmonicClass& alpha,
                        const std::vector<double>& weights, double t) {
  HarmonicClass scaled = alpha;
  for (auto& combo : scaled.blocks) {
    int offset = 0;
    for (auto& blk : combo) {
      const int m = static_cast<int>(blk.rows());
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          blk(i, j) *= std::pow(t, weights[offset + i] - weights[offset + j]);
        }
      }
      offset += m;
    }
  }
  return std::log(hetorus::norm(scaled) / hetorus::norm(alpha)) / std::log(t);
}

std::vector<Complex> sorted_eigenvalues(const Eigen::MatrixXcd& m) {
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(m);
  std::vector<Complex> v(es.eigenvalues().data(),
                         es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(v.begin(), v.end(), [](Complex a, Complex b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  return v;
}

}  // namespace

TEST_CASE("moment map closed form matches grid quadrature") {
  struct Setup {
    BundleSpec bundle;
    int grid;
  };
  const std::vector<Setup> setups = {
      {trivial_bundle(1, 2), 8},
      {curve_two_group(), 8},
      {trivial_bundle(2, 2), 8},
  };
  std::uint64_t seed = 11;
  for (const auto& setup : setups) {
    const TorusGeometry geom = hetorus::make_geometry(setup.bundle.n, setup.grid);
    const SpectralContext ctx(geom, setup.bundle);
    Rng rng(seed++);
    const HarmonicClass alpha = hetorus::random_class(setup.bundle, 1, rng);
    const HarmonicClass closed = hetorus::moment(setup.bundle, alpha);
    const HarmonicClass quad = hetorus::moment_quadrature(ctx, alpha);
    const double scale = 1.0 + hetorus::norm(alpha) * hetorus::norm(alpha);
    CHECK(hetorus::norm(closed - quad) < kTolExact * scale);
  }

  // Model normalization: the elementary nilpotent has moment 2 diag(1, -1).
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass alpha =
      class_of(bundle, {mat2(0.0, 1.0, 0.0, 0.0)});
  const HarmonicClass m = hetorus::moment(bundle, alpha);
  CHECK(std::abs(m.blocks[0][0](0, 0) - Complex(2.0, 0.0)) < 1e-15);
  CHECK(std::abs(m.blocks[0][0](1, 1) - Complex(-2.0, 0.0)) < 1e-15);
  CHECK(std::abs(m.blocks[0][0](0, 1)) < 1e-15);
  CHECK(std::abs(m.blocks[0][0](1, 0)) < 1e-15);
}

TEST_CASE("moment map blocks are self-adjoint trace-free and equivariant") {
  const std::vector<BundleSpec> bundles = {trivial_bundle(1, 3),
                                           curve_two_group(),
                                           trivial_bundle(2, 2)};
  std::uint64_t seed = 23;
  for (const auto& bundle : bundles) {
    for (int trial = 0; trial < 10; ++trial) {
      Rng rng(seed++);
      const HarmonicClass alpha = hetorus::random_class(bundle, 1, rng);
      const HarmonicClass m = hetorus::moment(bundle, alpha);
      for (const auto& blk : m.blocks[0]) {
        CHECK((blk - blk.adjoint()).norm() < kTolExact);
        CHECK(std::abs(blk.trace()) < kTolExact);
      }
      const GroupElement u = hetorus::random_unitary_element(bundle, rng);
      const HarmonicClass lhs =
          hetorus::moment(bundle, hetorus::act(u, alpha));
      HarmonicClass rhs = m;
      for (std::size_t g = 0; g < rhs.blocks[0].size(); ++g) {
        rhs.blocks[0][g] =
            u.blocks[g] * rhs.blocks[0][g] * u.blocks[g].adjoint();
      }
      CHECK(hetorus::norm(lhs - rhs) < kTolEquivariance);
    }
  }
}

TEST_CASE("moment zeros are exactly the norm-critical points") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  Rng rng(31);
  const double h = 1e-5;
  for (int trial = 0; trial < 8; ++trial) {
    const HarmonicClass alpha = hetorus::random_class(bundle, 1, rng);
    const HarmonicClass delta = selfadjoint_class(bundle, rng);
    const auto norm_sq_at = [&](double t) {
      const GroupElement g = hetorus::exp_class(Complex(t, 0.0) * delta);
      const double n = hetorus::norm(hetorus::act(g, alpha));
      return n * n;
    };
    const double fd = (norm_sq_at(h) - norm_sq_at(-h)) / (2.0 * h);
    const double analytic =
        2.0 * trace_pair(delta, hetorus::moment(bundle, alpha));
    CHECK(std::abs(fd - analytic) < kTolFd * (1.0 + std::abs(analytic)));
  }

  // Self-adjoint coefficient: a moment zero, so every derivative vanishes.
  const HarmonicClass critical =
      class_of(bundle, {mat2(0.0, 1.0, 1.0, 0.0)});
  CHECK(hetorus::norm(hetorus::moment(bundle, critical)) < 1e-14);
  const HarmonicClass delta = selfadjoint_class(bundle, rng);
  const auto norm_sq_at = [&](double t) {
    const GroupElement g = hetorus::exp_class(Complex(t, 0.0) * delta);
    const double n = hetorus::norm(hetorus::act(g, critical));
    return n * n;
  };
  CHECK(std::abs((norm_sq_at(h) - norm_sq_at(-h)) / (2.0 * h)) < kTolFd);
}

TEST_CASE("symplectic pairing fixes the hamiltonian convention") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  Rng rng(37);
  const HarmonicClass u = hetorus::random_class(bundle, 1, rng);
  const HarmonicClass v = hetorus::random_class(bundle, 1, rng);
  CHECK(std::abs(hetorus::symplectic_pairing(u, v) +
                 hetorus::symplectic_pairing(v, u)) < kTolExact);
  const double nv = hetorus::norm(v);
  CHECK(hetorus::symplectic_pairing(v, Complex(0.0, 1.0) * v) ==
        doctest::Approx(nv * nv).epsilon(1e-12));

  // d/dt of the hamiltonian component along a straight path equals the
  // pairing of the infinitesimal action with the velocity.
  for (int trial = 0; trial < 6; ++trial) {
    const HarmonicClass alpha = hetorus::random_class(bundle, 1, rng);
    const HarmonicClass alpha_dot = hetorus::random_class(bundle, 1, rng);
    const HarmonicClass delta = skewadjoint_class(bundle, rng);
    const auto mu_at = [&](double t) {
      const HarmonicClass point = alpha + Complex(t, 0.0) * alpha_dot;
      const HarmonicClass m = hetorus::moment(bundle, point);
      Complex s = 0.0;
      for (std::size_t g = 0; g < m.blocks[0].size(); ++g) {
        s += (Complex(0.0, 1.0) * delta.blocks[0][g] * m.blocks[0][g]).trace();
      }
      return 0.5 * s.real();
    };
    const double h = 1e-5;
    const double fd = (mu_at(h) - mu_at(-h)) / (2.0 * h);
    const double pairing =
        hetorus::symplectic_pairing(commutator_class(delta, alpha), alpha_dot);
    CHECK(std::abs(fd - pairing) < kTolPairingFd * (1.0 + std::abs(pairing)));
  }
}

TEST_CASE("moment linearization matches finite differences and kills the centralizer") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  Rng rng(41);
  const double h = 1e-5;
  for (int trial = 0; trial < 6; ++trial) {
    const HarmonicClass alpha = hetorus::random_class(bundle, 1, rng);
    const HarmonicClass delta = hetorus::random_class(bundle, 0, rng);
    const auto moment_at = [&](double t) {
      const GroupElement g = hetorus::exp_class(Complex(t, 0.0) * delta);
      return hetorus::moment(bundle, hetorus::act(g, alpha));
    };
    const HarmonicClass fd =
        Complex(1.0 / (2.0 * h), 0.0) * (moment_at(h) - moment_at(-h));
    const HarmonicClass lin = hetorus::m_alpha_apply(bundle, alpha, delta);
    CHECK(hetorus::norm(fd - lin) < kTolFd * (1.0 + hetorus::norm(lin)));
  }

  // Self-adjointness of the linearization over the real pairing.
  const HarmonicClass alpha = hetorus::random_class(bundle, 1, rng);
  const HarmonicClass d1 = selfadjoint_class(bundle, rng);
  const HarmonicClass d2 = selfadjoint_class(bundle, rng);
  const double lhs = trace_pair(d1, hetorus::m_alpha_apply(bundle, alpha, d2));
  const double rhs = trace_pair(d2, hetorus::m_alpha_apply(bundle, alpha, d1));
  CHECK(std::abs(lhs - rhs) < 1e-10 * (1.0 + std::abs(lhs)));

  // The centralizer is annihilated at a moment zero.
  const HarmonicClass critical =
      class_of(bundle, {mat2(0.0, 1.0, 1.0, 0.0)});
  HarmonicClass delta = hetorus::zero_class(bundle, 0);
  delta.blocks[0][0] = mat2(0.0, 1.0, 1.0, 0.0);
  CHECK(hetorus::norm(hetorus::m_alpha_apply(bundle, critical, delta)) < 1e-13);

  // Quadratic pairing identity for self-adjoint directions: the pairing with
  // the linearization equals twice the squared commutator norm.
  for (int trial = 0; trial < 6; ++trial) {
    const HarmonicClass a = hetorus::random_class(bundle, 1, rng);
    const HarmonicClass d = selfadjoint_class(bundle, rng);
    const double pair = trace_pair(d, hetorus::m_alpha_apply(bundle, a, d));
    const double cn = hetorus::norm(commutator_class(d, a));
    CHECK(pair == doctest::Approx(2.0 * cn * cn).epsilon(1e-11));
  }
}

TEST_CASE("one parameter subgroup weights match the scaling limit") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const std::vector<double> w = {1.0, -1.0};

  const HarmonicClass nil = class_of(bundle, {mat2(0.0, 1.0, 0.0, 0.0)});
  const auto destabilizing = hetorus::one_ps_weights(nil, w);
  CHECK_FALSE(destabilizing.degenerate);
  CHECK(destabilizing.w_flat == doctest::Approx(2.0));
  CHECK(destabilizing.w_sharp == doctest::Approx(2.0));
  CHECK(log_slope_oracle(nil, w, 1e-3) == doctest::Approx(2.0).epsilon(0.05));

  Rng rng(47);
  const HarmonicClass dense = hetorus::random_class(bundle, 1, rng);
  const auto spread = hetorus::one_ps_weights(dense, w);
  CHECK_FALSE(spread.degenerate);
  CHECK(spread.w_flat == doctest::Approx(-2.0));
  CHECK(spread.w_sharp == doctest::Approx(2.0));
  // Proper orbit: weights of both signs.
  CHECK(spread.w_flat < 0.0);
  CHECK(spread.w_sharp > 0.0);
  CHECK(log_slope_oracle(dense, w, 1e-3) ==
        doctest::Approx(-2.0).epsilon(0.05));

  const auto degenerate =
      hetorus::one_ps_weights(hetorus::zero_class(bundle, 1), w);
  CHECK(degenerate.degenerate);
  CHECK_THROWS_AS(hetorus::one_ps_weights(nil, {1.0, 2.0, 3.0}),
                  std::invalid_argument);
}

TEST_CASE("descent flow is monotone and reaches minimal representatives") {
  const BundleSpec bundle = trivial_bundle(1, 2);

  // A normal coefficient is already minimal: no steps are taken.
  const HarmonicClass fixed =
      class_of(bundle, {mat2(0.7, 0.0, 0.0, Complex(-0.3, 0.1))});
  const FlowResult at_rest = hetorus::minimize_flow(bundle, fixed);
  CHECK(at_rest.reached_moment_tolerance);
  CHECK(at_rest.steps == 0);
  CHECK(hetorus::norm_element(at_rest.gamma) ==
        doctest::Approx(std::sqrt(2.0)));

  // Nilpotent coefficient: the moment norm scales like the squared class
  // norm, so the moment tolerance triggers first and the norm keeps a
  // residual of order sqrt(tol_m).
  const HarmonicClass nil = class_of(bundle, {mat2(0.0, 1.0, 0.0, 0.0)});
  const FlowResult collapse = hetorus::minimize_flow(bundle, nil);
  CHECK(collapse.reached_moment_tolerance);
  CHECK(collapse.final_moment_norm < 1e-9);
  CHECK(collapse.final_norm < 5e-5);
  for (std::size_t i = 1; i < collapse.norm_trace.size(); ++i) {
    CHECK(collapse.norm_trace[i] <=
          collapse.norm_trace[i - 1] * (1.0 + 1e-13));
  }

  // With the moment stop disabled the same orbit runs down to the norm
  // tolerance instead.
  FlowOptions zero_opts;
  zero_opts.tol_m = 0.0;
  const FlowResult to_zero = hetorus::minimize_flow(bundle, nil, zero_opts);
  CHECK(to_zero.reached_zero);
  CHECK(to_zero.final_norm < 1.5e-10);

  // Distinct eigenvalues: the limit is the normal representative, whose
  // squared norm is twice the eigenvalue power sum.
  const HarmonicClass mixed =
      class_of(bundle, {mat2(1.0, 1.0, 0.0, -1.0)});
  const FlowResult settled = hetorus::minimize_flow(bundle, mixed);
  CHECK(settled.reached_moment_tolerance);
  CHECK(settled.final_norm * settled.final_norm ==
        doctest::Approx(4.0).epsilon(1e-6));
  const auto eigs = sorted_eigenvalues(settled.alpha_bar.blocks[0][0]);
  CHECK(std::abs(eigs[0] - Complex(-1.0, 0.0)) < 1e-6);
  CHECK(std::abs(eigs[1] - Complex(1.0, 0.0)) < 1e-6);

  // Coincident eigenvalues with a nilpotent part: the infimum is the scalar
  // matrix, approached but not attained.
  const HarmonicClass jordan =
      class_of(bundle, {mat2(0.7, 0.5, 0.0, 0.7)});
  const FlowResult drift = hetorus::minimize_flow(bundle, jordan);
  CHECK(drift.reached_moment_tolerance);
  CHECK(drift.final_norm * drift.final_norm ==
        doctest::Approx(4.0 * 0.49).epsilon(1e-6));
}

TEST_CASE("classification reproduces the rank-two trichotomy on the curve") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  Rng rng(53);
  int seen_unstable = 0;
  int seen_semistable = 0;
  int seen_polystable = 0;
  for (int sample = 0; sample < 36; ++sample) {
    const int kind = sample % 3;
    const GroupElement g = bounded_conjugator(bundle, rng, std::sqrt(10.0));
    Eigen::Matrix2cd model;
    double expected_norm_sq = 0.0;
    if (kind == 0) {
      const double c = rng.uniform(0.3, 1.0);
      model = mat2(0.0, c, 0.0, 0.0);
    } else if (kind == 1) {
      const Complex lambda =
          std::polar(rng.uniform(0.4, 1.0), rng.uniform(0.0, 6.28));
      model = mat2(lambda, rng.uniform(0.2, 0.6), 0.0, lambda);
      expected_norm_sq = 4.0 * std::norm(lambda);
    } else {
      const Complex l1(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      const Complex gap =
          std::polar(rng.uniform(0.3, 1.0), rng.uniform(0.0, 6.28));
      const Complex l2 = l1 + gap;
      model = mat2(l1, 0.0, 0.0, l2);
      expected_norm_sq = 2.0 * (std::norm(l1) + std::norm(l2));
    }
    HarmonicClass alpha = hetorus::zero_class(bundle, 1);
    alpha.blocks[0][0] =
        g.blocks[0] * model * g.blocks[0].inverse();
    const StabilityVerdict v = hetorus::classify(bundle, alpha);
    if (kind == 0) {
      CHECK(v.verdict == StabilityClass::kUnstable);
      CHECK(v.minimal_norm == 0.0);
      CHECK(v.has_witness);
      CHECK(v.witness_flat > 0.0);
      ++seen_unstable;
    } else if (kind == 1) {
      CHECK(v.verdict == StabilityClass::kSemistableNotPolystable);
      CHECK(v.minimal_norm * v.minimal_norm ==
            doctest::Approx(expected_norm_sq).epsilon(kTolMinimalNorm));
      CHECK(v.input_isotropy_dim == 2);
      CHECK(v.isotropy_dim == 4);
      CHECK(v.isotropy_jump);
      ++seen_semistable;
    } else {
      CHECK(v.verdict == StabilityClass::kPolystable);
      CHECK(v.minimal_norm * v.minimal_norm ==
            doctest::Approx(expected_norm_sq).epsilon(kTolMinimalNorm));
      CHECK(v.isotropy_dim == 2);
      CHECK_FALSE(v.isotropy_jump);
      CHECK(v.membership_margin > 1e-8);
      ++seen_polystable;
    }
  }
  CHECK(seen_unstable == 12);
  CHECK(seen_semistable == 12);
  CHECK(seen_polystable == 12);
}

TEST_CASE("classification is conjugation invariant") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const std::vector<Eigen::MatrixXcd> models = {
      mat2(1.0, 1.0, 0.0, -1.0),          // polystable
      mat2(0.6, 0.3, 0.0, 0.6),           // semistable boundary
      mat2(0.0, 0.8, 0.0, 0.0),           // unstable
  };
  Rng rng(59);
  for (const auto& model : models) {
    HarmonicClass base = hetorus::zero_class(bundle, 1);
    base.blocks[0][0] = model;
    const StabilityVerdict reference = hetorus::classify(bundle, base);
    for (int trial = 0; trial < 3; ++trial) {
      const GroupElement g = bounded_conjugator(bundle, rng, std::sqrt(10.0));
      const StabilityVerdict moved =
          hetorus::classify(bundle, hetorus::act(g, base));
      CHECK(moved.verdict == reference.verdict);
      CHECK(std::abs(moved.minimal_norm - reference.minimal_norm) < 1e-6);
    }
  }
}

TEST_CASE("trivial classes and line data classify by convention") {
  const BundleSpec pair = trivial_bundle(1, 2);
  const StabilityVerdict zero_pair =
      hetorus::classify(pair, hetorus::zero_class(pair, 1));
  CHECK(zero_pair.verdict == StabilityClass::kPolystable);
  CHECK(zero_pair.minimal_norm == 0.0);
  CHECK(zero_pair.membership_margin == 1.0);
  CHECK(zero_pair.isotropy_dim == 4);

  const BundleSpec line = trivial_bundle(1, 1);
  HarmonicClass scalar = hetorus::zero_class(line, 1);
  scalar.blocks[0][0](0, 0) = Complex(0.3, 0.2);
  const StabilityVerdict lone = hetorus::classify(line, scalar);
  CHECK(lone.verdict == StabilityClass::kStable);
  CHECK(lone.isotropy_dim == 1);
  CHECK(lone.membership_margin > 0.99);

  const StabilityVerdict zero_line =
      hetorus::classify(line, hetorus::zero_class(line, 1));
  CHECK(zero_line.verdict == StabilityClass::kPolystable);
}

TEST_CASE("isotropy bases always contain the block scalars") {
  const BundleSpec two_groups = curve_two_group();
  Rng rng(61);
  const HarmonicClass alpha = hetorus::random_class(two_groups, 1, rng);
  const auto basis = hetorus::isotropy(two_groups, alpha);
  CHECK(static_cast<int>(basis.size()) >= 2);
  // Project the identity onto the basis span; the residual must vanish.
  const int dim = 1 + 1;  // two groups of multiplicity one
  Eigen::MatrixXcd span(dim, basis.size());
  for (std::size_t k = 0; k < basis.size(); ++k) {
    span(0, k) = basis[k].blocks[0][0](0, 0);
    span(1, k) = basis[k].blocks[0][1](0, 0);
  }
  Eigen::VectorXcd id(dim);
  id << 1.0, 1.0;
  const Eigen::VectorXcd fit =
      span.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(id);
  CHECK((span * fit - id).norm() < 1e-9);

  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass normal = class_of(bundle, {mat2(0.0, 1.0, 1.0, 0.0)});
  CHECK(hetorus::isotropy_dimension(bundle, normal) == 2);
  const HarmonicClass distinct =
      class_of(bundle, {mat2(1.0, 0.0, 0.0, 2.0)});
  CHECK(hetorus::isotropy_dimension(bundle, distinct) == 2);
  const HarmonicClass central =
      class_of(bundle, {mat2(0.4, 0.0, 0.0, 0.4)});
  CHECK(hetorus::isotropy_dimension(bundle, central) == 4);
}

TEST_CASE("pairs on the abelian surface classify by joint structure") {
  const BundleSpec bundle = trivial_bundle(2, 2);

  const HarmonicClass commuting = class_of(
      bundle,
      {mat2(1.0, 0.0, 0.0, -1.0), mat2(0.3, 0.0, 0.0, 0.7)});
  const StabilityVerdict diag_pair = hetorus::classify(bundle, commuting);
  CHECK(diag_pair.verdict == StabilityClass::kPolystable);
  CHECK(diag_pair.isotropy_dim == 2);
  CHECK(diag_pair.flow.steps == 0);

  const HarmonicClass aligned = class_of(
      bundle, {mat2(0.0, 1.0, 0.0, 0.0), mat2(0.0, 0.5, 0.0, 0.0)});
  CHECK(hetorus::classify(bundle, aligned).verdict ==
        StabilityClass::kUnstable);

  // Semisimple first component, nilpotent second: the closure adds the pair
  // with vanishing second component, which is not in the orbit.
  const HarmonicClass mixed = class_of(
      bundle, {mat2(1.0, 0.0, 0.0, -1.0), mat2(0.0, 1.0, 0.0, 0.0)});
  const StabilityVerdict escape = hetorus::classify(bundle, mixed);
  CHECK(escape.verdict == StabilityClass::kSemistableNotPolystable);
  CHECK(escape.minimal_norm * escape.minimal_norm ==
        doctest::Approx(4.0).epsilon(1e-6));
  CHECK(escape.input_isotropy_dim == 1);
  CHECK(escape.isotropy_dim == 2);

  // A pair with trivial joint centralizer at a moment zero is stable.
  const HarmonicClass free_pair = class_of(
      bundle, {mat2(0.0, 1.0, 0.0, 0.0), mat2(0.0, 0.0, 1.0, 0.0)});
  const StabilityVerdict stable = hetorus::classify(bundle, free_pair);
  CHECK(stable.verdict == StabilityClass::kStable);
  CHECK(stable.isotropy_dim == 1);
}

TEST_CASE("row sum bound dominates the upper triangle sum") {
  Eigen::MatrixXd two(2, 2);
  two << 0.0, 3.0, -3.0, 0.0;
  const auto small = hetorus::skew_sum_inequality(two);
  CHECK(small.lhs == doctest::Approx(3.0));
  CHECK(small.rhs == doctest::Approx(12.0));
  CHECK(small.holds);

  Eigen::MatrixXd three = Eigen::MatrixXd::Zero(3, 3);
  three(0, 1) = 2.0;
  three(0, 2) = 1.0;
  three(1, 2) = 5.0;
  three(1, 0) = -2.0;
  three(2, 0) = -1.0;
  three(2, 1) = -5.0;
  const auto larger = hetorus::skew_sum_inequality(three);
  CHECK(larger.lhs == doctest::Approx(8.0));
  CHECK(larger.rhs == doctest::Approx(48.0));
  CHECK(larger.holds);

  Rng rng(67);
  for (int trial = 0; trial < 100000; ++trial) {
    const int m = rng.uniform_int(2, 6);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) {
        s(i, j) = rng.uniform();
        s(j, i) = -s(i, j);
      }
    }
    CHECK(hetorus::skew_sum_inequality(s).holds);
  }

  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
  bad(0, 1) = -1.0;
  bad(1, 0) = 1.0;
  CHECK_THROWS_AS(hetorus::skew_sum_inequality(bad), std::invalid_argument);
  Eigen::MatrixXd lopsided = Eigen::MatrixXd::Zero(2, 2);
  lopsided(0, 1) = 1.0;
  CHECK_THROWS_AS(hetorus::skew_sum_inequality(lopsided),
                  std::invalid_argument);
}

TEST_CASE("norm gap at moment zeros is nonnegative") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass alpha = class_of(bundle, {mat2(0.0, 1.0, 1.0, 0.0)});

  Rng rng(71);
  const GroupElement unitary = hetorus::random_unitary_element(bundle, rng);
  CHECK(std::abs(hetorus::minimality_gap(bundle, alpha, unitary).gap) < 1e-10);

  const auto at_identity =
      hetorus::minimality_gap(bundle, alpha, hetorus::identity_element(bundle));
  CHECK(at_identity.gap == 0.0);
  CHECK(at_identity.mnorm < 1e-14);

  // Diagonal classes are fixed by the diagonal torus.
  const HarmonicClass diagonal =
      class_of(bundle, {mat2(1.0, 0.0, 0.0, -1.0)});
  for (double t = 0.5; t <= 2.0; t += 0.25) {
    GroupElement g = hetorus::identity_element(bundle);
    g.blocks[0] = mat2(t, 0.0, 0.0, 1.0 / t);
    const auto report = hetorus::minimality_gap(bundle, diagonal, g);
    CHECK(std::abs(report.gap) < 1e-12);
    CHECK(report.mnorm < 1e-12);
  }

  // Non-diagonal minimal class: positive gap with a finite empirical ratio.
  double sup_ratio = 0.0;
  for (double t = 0.5; t <= 2.0; t += 0.25) {
    GroupElement g = hetorus::identity_element(bundle);
    g.blocks[0] = mat2(t, 0.0, 0.0, 1.0 / t);
    const auto report = hetorus::minimality_gap(bundle, alpha, g);
    CHECK(report.gap >= -1e-12);
    sup_ratio = std::max(sup_ratio, report.ratio);
  }
  CHECK(sup_ratio > 0.0);
  CHECK(sup_ratio < 100.0);

  const HarmonicClass not_minimal =
      class_of(bundle, {mat2(0.0, 1.0, 0.0, 0.0)});
  CHECK_THROWS_AS(
      hetorus::minimality_gap(bundle, not_minimal, unitary),
      std::invalid_argument);
}

TEST_CASE("unstable verdicts carry a verified destabilizing weight") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass nil = class_of(bundle, {mat2(0.0, 1.0, 0.0, 0.0)});
  const StabilityVerdict v = hetorus::classify(bundle, nil);
  REQUIRE(v.verdict == StabilityClass::kUnstable);
  REQUIRE(v.has_witness);
  REQUIRE(v.witness_weights.size() == 2);
  CHECK(v.witness_weights[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(v.witness_weights[1] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(v.witness_flat == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(v.witness_sharp == doctest::Approx(2.0).epsilon(1e-9));
}
