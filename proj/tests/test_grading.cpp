#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetorus/bundle_complex.hpp"
#include "hetorus/grading.hpp"
#include "hetorus/kuranishi.hpp"
#include "hetorus/moment_git.hpp"
#include "hetorus/rng.hpp"
#include "hetorus/torus_geometry.hpp"

namespace {

using hetorus::BundleSpec;
using hetorus::Complex;
using hetorus::Field;
using hetorus::FlowResult;
using hetorus::GradedPiece;
using hetorus::GradingOptions;
using hetorus::GradingReport;
using hetorus::GroupElement;
using hetorus::HarmonicClass;
using hetorus::IsoCertificate;
using hetorus::KernelFiltration;
using hetorus::Rng;
using hetorus::SpectralContext;
using hetorus::StabilityClass;
using hetorus::TorusGeometry;

constexpr double kTolExact = 1e-10;
constexpr double kTolFlow = 1e-6;
constexpr double kTolMoment = 1e-9;

BundleSpec trivial_bundle(int n, int rank) {
  std::vector<std::vector<double>> characters(
      rank, std::vector<double>(2 * n, 0.0));
  return hetorus::make_bundle_spec(n, characters);
}

Eigen::Matrix2cd mat2(Complex a, Complex b, Complex c, Complex d) {
  Eigen::Matrix2cd m;
  m << a, b, c, d;
  return m;
}

HarmonicClass class_of(const BundleSpec& bundle,
                       const std::vector<Eigen::MatrixXcd>& per_combo) {
  HarmonicClass h = hetorus::zero_class(bundle, 1);
  REQUIRE(h.combos() == static_cast<int>(per_combo.size()));
  for (int b = 0; b < h.combos(); ++b) h.blocks[b][0] = per_combo[b];
  return h;
}

// Oracles frozen from the closed forms of the rank-two descent. A jordan
// class lambda I + amp e12 is conjugated by diag(1/s, s) toward lambda I, so
// the normalized conjugator limit is diag(0, 1) with kernel e1 and the graded
// pieces are two copies of the scalar lambda. A diagonalizable class is
// conjugate to its eigenvalue diagonal through a bounded path, so its orbit
// is closed, its filtration trivial, and its pieces are the eigen blocks.
HarmonicClass jordan_class(const BundleSpec& bundle, Complex lambda,
                           double amp) {
  return class_of(bundle, {mat2(lambda, Complex(amp, 0.0), Complex(0.0, 0.0),
                                lambda)});
}

HarmonicClass cross_class(const BundleSpec& bundle, double s) {
  return class_of(bundle, {mat2(Complex(0.0, 0.0), Complex(s, 0.0),
                                Complex(s, 0.0), Complex(0.0, 0.0))});
}

std::vector<double> sorted_eigen_real(const Eigen::MatrixXcd& a) {
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(a);
  std::vector<double> out;
  for (int i = 0; i < a.rows(); ++i) out.push_back(es.eigenvalues()(i).real());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> sorted_piece_norms(const std::vector<GradedPiece>& pieces) {
  std::vector<double> out;
  for (const auto& piece : pieces) out.push_back(hetorus::norm(piece.piece_class));
  std::sort(out.begin(), out.end());
  return out;
}

int total_piece_rank(const std::vector<GradedPiece>& pieces) {
  int total = 0;
  for (const auto& piece : pieces) total += piece.rank;
  return total;
}

GroupElement bounded_conjugator(const BundleSpec& bundle, Rng& rng,
                                double scale) {
  HarmonicClass gen = hetorus::random_class(bundle, 0, rng);
  gen = Complex(scale / std::max(hetorus::norm(gen), 1e-30), 0.0) * gen;
  GroupElement g = hetorus::exp_class(gen);
  hetorus::det_normalize(g);
  return g;
}

}  // namespace

TEST_CASE("orbit closure: nilpotent classes collapse to the flat class") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass alpha =
      class_of(bundle, {mat2(0.0, Complex(0.7, 0.0), 0.0, 0.0)});
  const HarmonicClass closure = hetorus::orbit_closure_polystable(bundle, alpha);
  CHECK(hetorus::norm(closure) < 1e-8);
}

TEST_CASE("orbit closure: jordan classes land on their scalar part") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass alpha = jordan_class(bundle, Complex(0.6, 0.0), 0.5);
  const HarmonicClass closure = hetorus::orbit_closure_polystable(bundle, alpha);
  const std::vector<double> eigen = sorted_eigen_real(closure.blocks[0][0]);
  CHECK(std::abs(eigen[0] - 0.6) < kTolFlow);
  CHECK(std::abs(eigen[1] - 0.6) < kTolFlow);
  CHECK(hetorus::norm(hetorus::moment(bundle, closure)) < kTolMoment);
  // The scalar part is central, so the limit is exactly lambda I.
  CHECK((closure.blocks[0][0] - Complex(0.6, 0.0) * Eigen::Matrix2cd::Identity())
            .norm() < kTolFlow);
}

TEST_CASE("orbit closure: polystable classes keep their norm") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass alpha = cross_class(bundle, 0.6);
  const HarmonicClass closure = hetorus::orbit_closure_polystable(bundle, alpha);
  CHECK(std::abs(hetorus::norm(closure) - hetorus::norm(alpha)) < 1e-8);
  CHECK(hetorus::norm(hetorus::moment(bundle, closure)) < kTolMoment);
  const std::vector<double> eigen = sorted_eigen_real(closure.blocks[0][0]);
  CHECK(std::abs(eigen[0] + 0.6) < kTolFlow);
  CHECK(std::abs(eigen[1] - 0.6) < kTolFlow);
}

TEST_CASE("limit conjugator: jordan degeneration yields the kernel flag") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass alpha = jordan_class(bundle, Complex(0.6, 0.0), 0.5);
  const FlowResult flow = hetorus::minimize_flow(bundle, alpha);
  const KernelFiltration filtration =
      hetorus::limit_kernel_filtration(bundle, alpha, flow);
  CHECK(filtration.degenerate);
  REQUIRE(filtration.steps.size() == 2);
  CHECK(filtration.steps[0].rank == 1);
  CHECK(filtration.steps[1].rank == 2);
  CHECK(std::abs(filtration.gamma0_norm - 1.0) < 1e-12);
  CHECK(filtration.gamma0_det < 1e-6);
  CHECK(filtration.invariance_defect < 1e-8);
  const Eigen::MatrixXcd& g0 = filtration.gamma0.blocks[0];
  CHECK((g0 - g0.adjoint()).norm() < 1e-8);
  CHECK(std::abs(g0(0, 0)) < 1e-6);
  CHECK(std::abs(g0(1, 1) - 1.0) < 1e-6);
  const Eigen::MatrixXcd& v = filtration.steps[0].injectors[0];
  REQUIRE(v.cols() == 1);
  CHECK(std::abs(v(0, 0)) > 1.0 - 1e-8);
  CHECK(std::abs(v(1, 0)) < 1e-6);
}

TEST_CASE("limit conjugator: closed orbits give the trivial filtration") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  SUBCASE("moment zero") {
    const HarmonicClass alpha = cross_class(bundle, 0.6);
    const FlowResult flow = hetorus::minimize_flow(bundle, alpha);
    const KernelFiltration filtration =
        hetorus::limit_kernel_filtration(bundle, alpha, flow);
    CHECK_FALSE(filtration.degenerate);
    REQUIRE(filtration.steps.size() == 1);
    CHECK(filtration.steps[0].rank == 2);
    CHECK(filtration.gamma0_det > 1e-3);
  }
  SUBCASE("diagonalizable displacement") {
    const HarmonicClass alpha =
        class_of(bundle, {mat2(Complex(1.0, 0.0), Complex(1.0, 0.0), 0.0,
                               Complex(-1.0, 0.0))});
    const FlowResult flow = hetorus::minimize_flow(bundle, alpha);
    const KernelFiltration filtration =
        hetorus::limit_kernel_filtration(bundle, alpha, flow);
    CHECK_FALSE(filtration.degenerate);
    CHECK(filtration.steps.size() == 1);
    CHECK(filtration.gamma0_det > 1e-3);
  }
}

TEST_CASE("graded object: jordan block splits into equal scalar pieces") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass alpha = jordan_class(bundle, Complex(0.6, 0.0), 0.5);
  const std::vector<GradedPiece> pieces = hetorus::graded_object(bundle, alpha);
  REQUIRE(pieces.size() == 2);
  CHECK(total_piece_rank(pieces) == 2);
  const double scalar_norm = std::sqrt(2.0) * 0.6;
  for (const auto& piece : pieces) {
    CHECK(piece.rank == 1);
    CHECK(piece.moment_norm < kTolMoment);
    CHECK(piece.closed_orbit);
    CHECK(std::abs(hetorus::norm(piece.piece_class) - scalar_norm) < kTolFlow);
  }
  const HarmonicClass graded = hetorus::assemble_graded_class(bundle, pieces);
  CHECK((graded.blocks[0][0] -
         Complex(0.6, 0.0) * Eigen::Matrix2cd::Identity())
            .norm() < kTolFlow);
}

TEST_CASE("graded object: eigen blocks of a diagonalizable class") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const HarmonicClass alpha =
      class_of(bundle, {mat2(Complex(1.0, 0.0), Complex(1.0, 0.0), 0.0,
                             Complex(-1.0, 0.0))});
  const std::vector<GradedPiece> pieces = hetorus::graded_object(bundle, alpha);
  REQUIRE(pieces.size() == 2);
  std::vector<double> traces;
  for (const auto& piece : pieces)
    traces.push_back(piece.piece_class.blocks[0][0](0, 0).real());
  std::sort(traces.begin(), traces.end());
  CHECK(std::abs(traces[0] + 1.0) < kTolFlow);
  CHECK(std::abs(traces[1] - 1.0) < kTolFlow);
}

TEST_CASE("graded object: refinement touches only the degenerate group") {
  // Two-group curve bundle of rank three; the jordan degeneration lives in
  // the first group, the second group is a fixed line.
  const BundleSpec bundle = hetorus::make_bundle_spec(
      1, {{0.3, 0.15}, {0.3, 0.15}, {0.0, 0.55}});
  REQUIRE(bundle.group_count() == 2);
  HarmonicClass alpha = hetorus::zero_class(bundle, 1);
  alpha.blocks[0][0] = mat2(Complex(0.4, 0.0), Complex(0.3, 0.0), 0.0,
                            Complex(0.4, 0.0));
  alpha.blocks[0][1] = Eigen::MatrixXcd::Constant(1, 1, Complex(0.25, 0.0));
  const std::vector<GradedPiece> pieces = hetorus::graded_object(bundle, alpha);
  REQUIRE(pieces.size() == 3);
  CHECK(total_piece_rank(pieces) == 3);
  int line_pieces = 0;
  for (const auto& piece : pieces) {
    CHECK(piece.rank == 1);
    CHECK(piece.moment_norm < kTolMoment);
    if (piece.injectors[1].cols() == 1) {
      ++line_pieces;
      CHECK(piece.injectors[0].cols() == 0);
      CHECK(std::abs(piece.piece_class.blocks[0][0](0, 0) -
                     Complex(0.25, 0.0)) < kTolFlow);
    }
  }
  CHECK(line_pieces == 1);
  const HarmonicClass graded = hetorus::assemble_graded_class(bundle, pieces);
  CHECK((graded.blocks[0][0] -
         Complex(0.4, 0.0) * Eigen::Matrix2cd::Identity())
            .norm() < kTolFlow);
  CHECK(std::abs(graded.blocks[0][1](0, 0) - Complex(0.25, 0.0)) < kTolFlow);
}

TEST_CASE("graded object is idempotent") {
  const BundleSpec bundle = trivial_bundle(1, 2);
  const std::vector<HarmonicClass> inputs = {
      jordan_class(bundle, Complex(0.6, 0.0), 0.5),
      cross_class(bundle, 0.6),
      class_of(bundle, {mat2(0.0, Complex(0.7, 0.0), 0.0, 0.0)})};
  for (const HarmonicClass& alpha : inputs) {
    const std::vector<GradedPiece> pieces =
        hetorus::graded_object(bundle, alpha);
    const HarmonicClass graded = hetorus::assemble_graded_class(bundle, pieces);
    const std::vector<GradedPiece> again =
        hetorus::graded_object(bundle, graded);
    REQUIRE(pieces.size() == again.size());
    const std::vector<double> first = sorted_piece_norms(pieces);
    const std::vector<double> second = sorted_piece_norms(again);
    for (std::size_t i = 0; i < first.size(); ++i)
      CHECK(std::abs(first[i] - second[i]) < 1e-7);
    const HarmonicClass graded_again =
        hetorus::assemble_graded_class(bundle, again);
    CHECK(hetorus::norm(graded_again - graded) <
          1e-7 * (1.0 + hetorus::norm(graded)));
  }
}

TEST_CASE("graded pieces are moment zeros on closed orbits") {
  Rng rng(0x9aa1);
  for (int rank = 2; rank <= 3; ++rank) {
    const BundleSpec bundle = trivial_bundle(1, rank);
    const int samples = rank == 2 ? 8 : 4;
    for (int s = 0; s < samples; ++s) {
      Rng sub = rng.child(rank * 100 + s);
      HarmonicClass alpha = hetorus::random_class(bundle, 1, sub);
      alpha = Complex(0.8 / std::max(hetorus::norm(alpha), 1e-30), 0.0) * alpha;
      const std::vector<GradedPiece> pieces =
          hetorus::graded_object(bundle, alpha);
      CHECK(total_piece_rank(pieces) == rank);
      for (const auto& piece : pieces) {
        CHECK(piece.moment_norm < kTolMoment);
        CHECK(piece.closed_orbit);
      }
      const HarmonicClass graded =
          hetorus::assemble_graded_class(bundle, pieces);
      CHECK(hetorus::norm(hetorus::moment(bundle, graded)) < 1e-8);
    }
  }
}

TEST_CASE("intertwiner search recovers a constant conjugation") {
  const TorusGeometry geom = hetorus::make_geometry(1, 8);
  const BundleSpec bundle = trivial_bundle(1, 2);
  const SpectralContext ctx(geom, bundle);
  Rng rng(0x77);
  const HarmonicClass cls = cross_class(bundle, 0.06);
  const GroupElement gamma = bounded_conjugator(bundle, rng, 0.3);
  const HarmonicClass conjugated = hetorus::act(gamma, cls);
  const Field a1 = ctx.embed(cls);
  const Field a2 = ctx.embed(conjugated);
  const IsoCertificate cert = hetorus::is_isomorphic(ctx, a1, a2);
  CHECK(cert.isomorphic);
  CHECK(cert.residual < 1e-8);
  CHECK(cert.margin > 1e-6);
  // The intertwiner space of a conjugated regular matrix is the conjugator
  // times its commutant, so its dimension equals the rank.
  CHECK(cert.kernel_dimension == 2);
  // The returned element intertwines the constant classes directly.
  const Eigen::MatrixXcd& x = cert.intertwiner.blocks[0];
  const Eigen::MatrixXcd a = cls.blocks[0][0];
  const Eigen::MatrixXcd b = conjugated.blocks[0][0];
  CHECK((x * a - b * x).norm() < 1e-8 * x.norm());
}

TEST_CASE("intertwiner search rejects inequivalent potentials") {
  const TorusGeometry geom = hetorus::make_geometry(1, 8);
  const BundleSpec bundle = trivial_bundle(1, 2);
  const SpectralContext ctx(geom, bundle);
  SUBCASE("nilpotent against flat") {
    const HarmonicClass cls =
        class_of(bundle, {mat2(0.0, Complex(0.1, 0.0), 0.0, 0.0)});
    const Field a1 = ctx.embed(cls);
    const Field flat(geom, 0, 1, 2);
    const IsoCertificate cert = hetorus::is_isomorphic(ctx, a1, flat);
    CHECK_FALSE(cert.isomorphic);
    // Intertwiners annihilating e12 exist but none are invertible.
    CHECK(cert.kernel_dimension == 2);
    CHECK(cert.margin < 1e-6);
  }
  SUBCASE("distinct spectra") {
    // Eigenvalues {0.12, 0.06} against {0.09, -0.09}: disjoint, so not even a
    // singular intertwiner exists.
    const HarmonicClass c1 = class_of(
        bundle, {mat2(Complex(0.12, 0.0), 0.0, 0.0, Complex(0.06, 0.0))});
    const HarmonicClass c2 = cross_class(bundle, 0.09);
    const IsoCertificate cert =
        hetorus::is_isomorphic(ctx, ctx.embed(c1), ctx.embed(c2));
    CHECK_FALSE(cert.isomorphic);
    CHECK(cert.smallest_obstruction > 1e-4);
  }
  SUBCASE("permuted diagonal is equivalent") {
    const HarmonicClass c1 = class_of(
        bundle, {mat2(Complex(0.1, 0.0), 0.0, 0.0, Complex(0.15, 0.0))});
    const HarmonicClass c2 = class_of(
        bundle, {mat2(Complex(0.15, 0.0), 0.0, 0.0, Complex(0.1, 0.0))});
    const IsoCertificate cert =
        hetorus::is_isomorphic(ctx, ctx.embed(c1), ctx.embed(c2));
    CHECK(cert.isomorphic);
    CHECK(cert.residual < 1e-10);
  }
}

TEST_CASE("intertwiner search is an equivalence relation") {
  const TorusGeometry geom = hetorus::make_geometry(1, 8);
  const BundleSpec bundle = trivial_bundle(1, 2);
  const SpectralContext ctx(geom, bundle);
  Rng rng(0x88);
  const HarmonicClass cls = cross_class(bundle, 0.06);
  const Field a = ctx.embed(cls);
  const Field b = ctx.embed(hetorus::act(bounded_conjugator(bundle, rng, 0.3), cls));
  const Field c = ctx.embed(hetorus::act(bounded_conjugator(bundle, rng, 0.3), cls));
  const HarmonicClass other =
      class_of(bundle, {mat2(Complex(0.1, 0.0), 0.0, 0.0, Complex(0.05, 0.0))});
  const Field d = ctx.embed(other);
  CHECK(hetorus::is_isomorphic(ctx, a, a).isomorphic);
  CHECK(hetorus::is_isomorphic(ctx, a, b).isomorphic);
  CHECK(hetorus::is_isomorphic(ctx, b, a).isomorphic);
  CHECK(hetorus::is_isomorphic(ctx, b, c).isomorphic);
  CHECK(hetorus::is_isomorphic(ctx, a, c).isomorphic);
  CHECK_FALSE(hetorus::is_isomorphic(ctx, a, d).isomorphic);
  CHECK_FALSE(hetorus::is_isomorphic(ctx, d, a).isomorphic);
}

TEST_CASE("intertwiner search enforces the slice preconditions") {
  const TorusGeometry geom = hetorus::make_geometry(1, 8);
  const BundleSpec bundle = trivial_bundle(1, 2);
  const SpectralContext ctx(geom, bundle);
  Rng rng(0x99);
  const Field flat(geom, 0, 1, 2);
  SUBCASE("radius") {
    const Field big = ctx.embed(cross_class(bundle, 0.5));
    CHECK_THROWS_WITH(hetorus::is_isomorphic(ctx, big, flat),
                      "outside slice radius");
  }
  SUBCASE("coclosedness") {
    Field noise = hetorus::random_band_limited(geom, 0, 1, 2, 1, rng);
    noise *= Complex(0.1 / std::max(hetorus::norm(noise), 1e-30), 0.0);
    CHECK_THROWS_WITH(hetorus::is_isomorphic(ctx, noise, flat),
                      "potential not coclosed");
  }
}

TEST_CASE("flat recovery agrees along both routes") {
  const TorusGeometry geom = hetorus::make_geometry(1, 16);
  const BundleSpec bundle = trivial_bundle(1, 2);
  const SpectralContext ctx(geom, bundle);
  Rng rng(0xaa);
  SUBCASE("exactly flat") {
    const Field flat(geom, 0, 1, 2);
    CHECK(hetorus::recover_trivial(ctx, flat));
  }
  SUBCASE("gauge orbit of the flat potential") {
    // One-mode generator within the aliasing-exact regime; the slice fix
    // returns the potential to the origin.
    Field chi = hetorus::random_band_limited(geom, 0, 0, 2, 1, rng);
    chi = ctx.remove_harmonic(chi);
    chi *= Complex(0.02 / std::max(hetorus::norm(chi), 1e-30), 0.0);
    const Field moved = ctx.gauge_act(hetorus::pointwise_exp(chi),
                                      Field(geom, 0, 1, 2));
    const auto fix = hetorus::fix_complex_gauge(ctx, moved);
    CHECK(hetorus::norm(fix.fixed) < 1e-9);
    CHECK(hetorus::recover_trivial(ctx, fix.fixed));
  }
  SUBCASE("nontrivial class") {
    const Field a = ctx.embed(cross_class(bundle, 0.1));
    CHECK_FALSE(hetorus::recover_trivial(ctx, a));
  }
}

TEST_CASE("graded comparison passes on curve degenerations") {
  const TorusGeometry geom = hetorus::make_geometry(1, 8);
  const BundleSpec bundle = trivial_bundle(1, 2);
  const SpectralContext ctx(geom, bundle);
  SUBCASE("nilpotent") {
    const HarmonicClass alpha =
        class_of(bundle, {mat2(0.0, Complex(0.7, 0.0), 0.0, 0.0)});
    const GradingReport report = hetorus::verify_gr_theorem(ctx, alpha);
    CHECK(report.verdict == StabilityClass::kUnstable);
    CHECK(hetorus::norm(report.alpha_bar) < 1e-12);
    CHECK(report.filtration.degenerate);
    CHECK(report.pieces.size() == 2);
    CHECK(hetorus::norm(report.graded_class) < 1e-8);
    CHECK(report.certificate.isomorphic);
    CHECK(report.pass);
  }
  SUBCASE("jordan") {
    const HarmonicClass alpha = jordan_class(bundle, Complex(0.6, 0.0), 0.5);
    const GradingReport report = hetorus::verify_gr_theorem(ctx, alpha);
    CHECK(report.verdict == StabilityClass::kSemistableNotPolystable);
    CHECK(report.filtration.degenerate);
    CHECK(report.pieces.size() == 2);
    CHECK(report.certificate.isomorphic);
    CHECK(report.pass);
  }
  SUBCASE("polystable") {
    const HarmonicClass alpha = cross_class(bundle, 0.6);
    const GradingReport report = hetorus::verify_gr_theorem(ctx, alpha);
    CHECK((report.verdict == StabilityClass::kPolystable ||
           report.verdict == StabilityClass::kStable));
    CHECK_FALSE(report.filtration.degenerate);
    CHECK(report.pieces.size() == 2);
    CHECK(report.certificate.isomorphic);
    CHECK(report.pass);
  }
}

TEST_CASE("graded comparison passes on a rank-three mixed curve class") {
  const TorusGeometry geom = hetorus::make_geometry(1, 8);
  const BundleSpec bundle = trivial_bundle(1, 3);
  const SpectralContext ctx(geom, bundle);
  Eigen::Matrix3cd a = Eigen::Matrix3cd::Zero();
  a(0, 0) = Complex(0.6, 0.0);
  a(0, 1) = Complex(0.5, 0.0);
  a(1, 1) = Complex(0.6, 0.0);
  a(2, 2) = Complex(0.3, 0.0);
  const HarmonicClass alpha = class_of(bundle, {a});
  const GradingReport report = hetorus::verify_gr_theorem(ctx, alpha);
  CHECK(report.filtration.degenerate);
  CHECK(report.pieces.size() == 3);
  const std::vector<double> norms = sorted_piece_norms(report.pieces);
  CHECK(std::abs(norms[0] - std::sqrt(2.0) * 0.3) < kTolFlow);
  CHECK(std::abs(norms[1] - std::sqrt(2.0) * 0.6) < kTolFlow);
  CHECK(std::abs(norms[2] - std::sqrt(2.0) * 0.6) < kTolFlow);
  CHECK(report.certificate.isomorphic);
  CHECK(report.pass);
}

TEST_CASE("graded comparison passes on commuting surface pairs") {
  const TorusGeometry geom = hetorus::make_geometry(2, 8);
  const BundleSpec bundle = trivial_bundle(2, 2);
  const SpectralContext ctx(geom, bundle);
  SUBCASE("commuting nilpotents") {
    const Eigen::Matrix2cd n = mat2(0.0, Complex(0.5, 0.0), 0.0, 0.0);
    const HarmonicClass alpha = class_of(bundle, {n, n});
    const GradingReport report = hetorus::verify_gr_theorem(ctx, alpha);
    CHECK(report.psi_norm < 1e-9);
    CHECK(report.verdict == StabilityClass::kUnstable);
    CHECK(report.filtration.degenerate);
    CHECK(report.pass);
  }
  SUBCASE("split diagonal pair") {
    const HarmonicClass alpha = class_of(
        bundle, {mat2(Complex(0.6, 0.0), 0.0, 0.0, Complex(-0.2, 0.0)),
                 mat2(Complex(0.1, 0.0), 0.0, 0.0, Complex(0.4, 0.0))});
    const GradingReport report = hetorus::verify_gr_theorem(ctx, alpha);
    CHECK(report.psi_norm < 1e-9);
    CHECK_FALSE(report.filtration.degenerate);
    CHECK(report.pieces.size() == 2);
    CHECK(report.pass);
    const HarmonicClass diff = report.graded_class - alpha;
    CHECK(hetorus::norm(diff) < 1e-8);
  }
}

TEST_CASE("graded comparison rejects obstructed classes") {
  const TorusGeometry geom = hetorus::make_geometry(2, 8);
  const BundleSpec bundle = trivial_bundle(2, 2);
  const SpectralContext ctx(geom, bundle);
  const HarmonicClass alpha =
      class_of(bundle, {mat2(0.0, Complex(0.5, 0.0), 0.0, 0.0),
                        mat2(0.0, 0.0, Complex(0.5, 0.0), 0.0)});
  CHECK_THROWS_WITH(hetorus::verify_gr_theorem(ctx, alpha), "obstructed class");
}

TEST_CASE("conjugator route matches the gauge route on constant classes") {
  // The two smallness statements are interchangeable: a group conjugator
  // shrinking the class also shrinks the gauge-transformed potential, since
  // constant gauge transformations act by blockwise conjugation.
  const TorusGeometry geom = hetorus::make_geometry(1, 8);
  const BundleSpec bundle = trivial_bundle(1, 2);
  const SpectralContext ctx(geom, bundle);
  const HarmonicClass alpha =
      class_of(bundle, {mat2(0.0, Complex(0.25, 0.0), 0.0, 0.0)});
  const FlowResult flow =
      hetorus::minimize_flow(bundle, alpha, GradingOptions{}.limit_flow);
  const HarmonicClass conjugated = hetorus::act(flow.gamma, alpha);
  const Field gauge_route = ctx.gauge_act(
      hetorus::group_field(ctx, flow.gamma), ctx.embed(alpha));
  CHECK(hetorus::norm(conjugated) < 1e-5);
  CHECK(hetorus::norm(gauge_route) < 1e-5);
  CHECK(hetorus::norm(gauge_route - ctx.embed(conjugated)) <
        1e-10 * (1.0 + hetorus::norm(conjugated)));
}

TEST_CASE("grading report serializes") {
  const TorusGeometry geom = hetorus::make_geometry(1, 8);
  const BundleSpec bundle = trivial_bundle(1, 2);
  const SpectralContext ctx(geom, bundle);
  const HarmonicClass alpha =
      class_of(bundle, {mat2(0.0, Complex(0.7, 0.0), 0.0, 0.0)});
  const GradingReport report = hetorus::verify_gr_theorem(ctx, alpha);
  const std::string json = hetorus::grading_report_json(report);
  CHECK(json.find("\"filtration\"") != std::string::npos);
  CHECK(json.find("\"certificate\"") != std::string::npos);
  CHECK(json.find("\"ranks\"") != std::string::npos);
  CHECK(json.find("\"pass\": true") != std::string::npos);
}
