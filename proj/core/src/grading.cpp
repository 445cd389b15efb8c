#include "hetorus/grading.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hetorus/rng.hpp"

namespace hetorus {
namespace {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// Candidate gate for the intertwiner system; deliberately generous because
// the certificate is the evaluated residual and margin, not the eigenvalue.
constexpr double kIsoSystemThreshold = 1e-4;

double element_det_abs(const GroupElement& g) {
  double det = 1.0;
  for (const auto& block : g.blocks) det *= std::abs(block.determinant());
  return det;
}

// min over blocks of |det X| / (||X||_F / sqrt(m))^m, the scale-invariant
// invertibility margin shared with the membership tests.
double block_margin(const GroupElement& x) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& block : x.blocks) {
    const int m = static_cast<int>(block.rows());
    const double fro = block.norm();
    if (fro <= 0.0) return 0.0;
    const double unit = fro / std::sqrt(static_cast<double>(m));
    margin =
        std::min(margin, std::abs(block.determinant()) / std::pow(unit, m));
  }
  return std::isfinite(margin) ? margin : 0.0;
}

// Restarted descent. Each restart resets the step adaptation and pushes the
// degenerating directions of the conjugator further, so the kernel of the
// normalized limit separates cleanly from the bounded directions.
FlowResult deepen_flow(const BundleSpec& spec, const HarmonicClass& alpha,
                       const FlowResult* seed, const GradingOptions& options) {
  HarmonicClass current = alpha;
  GroupElement gamma = identity_element(spec);
  FlowResult last;
  if (seed != nullptr) {
    if (seed->reached_zero) return *seed;
    gamma = seed->gamma;
    current = seed->alpha_bar;
    last = *seed;
  }
  const double sqrt_rank = std::sqrt(static_cast<double>(spec.rank));
  for (int attempt = 0; attempt < std::max(1, options.sharpen_restarts);
       ++attempt) {
    FlowResult flow = minimize_flow(spec, current, options.limit_flow);
    const double growth = norm_element(flow.gamma) / sqrt_rank;
    current = flow.alpha_bar;
    gamma = multiply(flow.gamma, gamma);
    det_normalize(gamma);
    last = flow;
    if (flow.reached_zero || growth < 1.05) break;
  }
  last.gamma = gamma;
  last.alpha_bar = current;
  return last;
}

struct LimitSpectrum {
  // Per group: descending singular values and right singular vectors of the
  // conjugator block; the right polar factor is V diag(s) V^dagger.
  std::vector<VectorXd> values;
  std::vector<MatrixXcd> vectors;
  double max_value = 0.0;
  double fro = 0.0;
};

LimitSpectrum limit_spectrum(const GroupElement& gamma) {
  LimitSpectrum out;
  double sum = 0.0;
  for (const auto& block : gamma.blocks) {
    Eigen::JacobiSVD<MatrixXcd> svd(block, Eigen::ComputeFullV);
    out.values.push_back(svd.singularValues());
    out.vectors.push_back(svd.matrixV());
    out.max_value = std::max(out.max_value, svd.singularValues()(0));
    sum += svd.singularValues().squaredNorm();
  }
  out.fro = std::sqrt(sum);
  return out;
}

GroupElement polar_from_spectrum(const LimitSpectrum& spectrum, double scale) {
  GroupElement out;
  for (std::size_t g = 0; g < spectrum.vectors.size(); ++g) {
    const MatrixXcd& v = spectrum.vectors[g];
    const VectorXd s = spectrum.values[g] / scale;
    out.blocks.push_back(v * s.asDiagonal() * v.adjoint());
  }
  return out;
}

// Sub-bundle generated by per-group column frames; groups without columns are
// dropped. `to_parent` receives the parent group index of each kept group.
BundleSpec sub_spec_from_cols(const BundleSpec& spec,
                              const std::vector<MatrixXcd>& cols,
                              std::vector<int>* to_parent) {
  std::vector<std::vector<double>> characters;
  if (to_parent != nullptr) to_parent->clear();
  for (int g = 0; g < spec.group_count(); ++g) {
    const int k = static_cast<int>(cols[g].cols());
    if (k == 0) continue;
    for (int i = 0; i < k; ++i)
      characters.push_back(spec.characters[spec.group_offset[g]]);
    if (to_parent != nullptr) to_parent->push_back(g);
  }
  return make_bundle_spec(spec.n, characters);
}

// Exact block compression V^dagger A V; `defect` accumulates the invariance
// leakage ||A V - V (V^dagger A V)|| when requested.
HarmonicClass compress_class(const BundleSpec& sub, const HarmonicClass& alpha,
                             const std::vector<MatrixXcd>& cols,
                             const std::vector<int>& to_parent,
                             double* defect) {
  HarmonicClass out = zero_class(sub, alpha.q);
  for (int c = 0; c < alpha.combos(); ++c) {
    for (std::size_t ng = 0; ng < to_parent.size(); ++ng) {
      const MatrixXcd& v = cols[to_parent[ng]];
      const MatrixXcd& a = alpha.blocks[c][to_parent[ng]];
      out.blocks[c][ng] = v.adjoint() * a * v;
      if (defect != nullptr) {
        const MatrixXcd leak = a * v - v * out.blocks[c][ng];
        *defect = std::max(*defect, leak.norm());
      }
    }
  }
  return out;
}

struct FlagBuild {
  // Proper flag frames in root coordinates, innermost first.
  std::vector<std::vector<MatrixXcd>> steps;
  GroupElement gamma0;
  double gamma0_det = 0.0;
  double defect = 0.0;
};

std::vector<MatrixXcd> root_frames(const BundleSpec& root,
                                   const std::vector<MatrixXcd>& frames,
                                   const std::vector<int>& to_root) {
  std::vector<MatrixXcd> out;
  out.reserve(root.group_count());
  for (int g = 0; g < root.group_count(); ++g)
    out.push_back(MatrixXcd::Zero(root.multiplicities[g], 0));
  for (std::size_t ng = 0; ng < frames.size(); ++ng)
    out[to_root[ng]] = frames[ng];
  return out;
}

// Recursive kernel flag: the normalized limit of the descent conjugators has
// a kernel exactly when the orbit fails to close; the kernel subspace is
// invariant and carries the next level of the recursion. Frames stay exact
// block projections of the constant-coefficient input.
void build_flag(const BundleSpec& root, const BundleSpec& spec,
                const std::vector<int>& to_root,
                const std::vector<MatrixXcd>& frame, const HarmonicClass& alpha,
                const FlowResult* seed, const GradingOptions& options, bool top,
                FlagBuild& out) {
  const FlowResult flow = deepen_flow(spec, alpha, seed, options);
  const LimitSpectrum spectrum = limit_spectrum(flow.gamma);
  if (top) {
    out.gamma0 = polar_from_spectrum(spectrum, spectrum.fro);
    out.gamma0_det = element_det_abs(out.gamma0);
  }
  const double threshold = options.kernel_threshold * spectrum.max_value;
  std::vector<MatrixXcd> kernel(spec.group_count());
  int k_total = 0;
  for (int g = 0; g < spec.group_count(); ++g) {
    const VectorXd& s = spectrum.values[g];
    const int m = static_cast<int>(s.size());
    int k = 0;
    while (k < m && s(m - 1 - k) <= threshold) ++k;
    kernel[g] = spectrum.vectors[g].rightCols(k);
    k_total += k;
  }
  if (k_total == 0 || k_total >= spec.rank) return;
  std::vector<int> to_spec;
  const BundleSpec sub = sub_spec_from_cols(spec, kernel, &to_spec);
  const HarmonicClass sub_alpha =
      compress_class(sub, alpha, kernel, to_spec, &out.defect);
  std::vector<MatrixXcd> sub_frame;
  std::vector<int> sub_to_root;
  sub_frame.reserve(to_spec.size());
  sub_to_root.reserve(to_spec.size());
  for (int g : to_spec) {
    sub_frame.push_back(frame[g] * kernel[g]);
    sub_to_root.push_back(to_root[g]);
  }
  build_flag(root, sub, sub_to_root, sub_frame, sub_alpha, nullptr, options,
             false, out);
  out.steps.push_back(root_frames(root, sub_frame, sub_to_root));
}

// Orthonormal injectors splitting a constant *-family into irreducible
// summands; the commutant of an irreducible family is the scalars, so a
// generic self-adjoint commutant element separates the summands into its
// eigenspaces.
std::vector<MatrixXcd> commutant_split(const std::vector<MatrixXcd>& mats,
                                       Rng& rng) {
  const int m = mats.empty() ? 1 : static_cast<int>(mats[0].rows());
  if (m <= 1) return {MatrixXcd::Identity(m, m)};
  const int d = m * m;
  MatrixXcd sys(2 * static_cast<int>(mats.size()) * d, d);
  sys.setZero();
  int row0 = 0;
  for (const MatrixXcd& given : mats) {
    for (int pass = 0; pass < 2; ++pass) {
      const MatrixXcd a = pass == 0 ? given : MatrixXcd(given.adjoint());
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          const int row = row0 + j * m + i;
          for (int k = 0; k < m; ++k) {
            sys(row, k * m + i) += a(k, j);
            sys(row, j * m + k) -= a(i, k);
          }
        }
      }
      row0 += d;
    }
  }
  Eigen::JacobiSVD<MatrixXcd> svd(sys, Eigen::ComputeFullV);
  const VectorXd& sv = svd.singularValues();
  const double thr = std::max(1e-10 * sv(0), 1e-12);
  int nullity = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) <= thr) ++nullity;
  if (nullity <= 1) return {MatrixXcd::Identity(m, m)};
  for (int attempt = 0; attempt < 8; ++attempt) {
    MatrixXcd z = MatrixXcd::Zero(m, m);
    for (int i = 0; i < nullity; ++i) {
      const VectorXcd v = svd.matrixV().col(d - 1 - i);
      const MatrixXcd x = Eigen::Map<const MatrixXcd>(v.data(), m, m);
      z += rng.normal() * MatrixXcd(0.5 * (x + x.adjoint()));
      z += rng.normal() * MatrixXcd(Complex(0.0, -0.5) * (x - x.adjoint()));
    }
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(z);
    const VectorXd& ev = es.eigenvalues();
    const double spread = ev(m - 1) - ev(0);
    if (spread < 1e-9 * (std::abs(ev(0)) + std::abs(ev(m - 1)) + 1.0)) continue;
    const double gap = 1e-6 * spread;
    std::vector<std::pair<int, int>> clusters;
    int begin = 0;
    for (int i = 1; i <= m; ++i) {
      if (i == m || ev(i) - ev(i - 1) > gap) {
        clusters.emplace_back(begin, i);
        begin = i;
      }
    }
    if (clusters.size() <= 1) continue;
    std::vector<MatrixXcd> out;
    for (const auto& [lo, hi] : clusters) {
      const MatrixXcd u = es.eigenvectors().middleCols(lo, hi - lo);
      std::vector<MatrixXcd> inner;
      inner.reserve(mats.size());
      for (const MatrixXcd& a : mats) inner.push_back(u.adjoint() * a * u);
      for (const MatrixXcd& w : commutant_split(inner, rng))
        out.push_back(u * w);
    }
    return out;
  }
  return {MatrixXcd::Identity(m, m)};
}

// Orthonormal residue frames of consecutive filtration steps: slot j spans
// step j modulo step j-1.
std::vector<std::vector<MatrixXcd>> slot_frames(
    const BundleSpec& bundle, const KernelFiltration& filtration) {
  const int groups = bundle.group_count();
  std::vector<std::vector<MatrixXcd>> slots;
  std::vector<MatrixXcd> prev;
  prev.reserve(groups);
  for (int g = 0; g < groups; ++g)
    prev.push_back(MatrixXcd::Zero(bundle.multiplicities[g], 0));
  for (const FiltrationStep& step : filtration.steps) {
    std::vector<MatrixXcd> slot(groups);
    for (int g = 0; g < groups; ++g) {
      const MatrixXcd& s = step.injectors[g];
      const int want = static_cast<int>(s.cols() - prev[g].cols());
      if (want <= 0) {
        slot[g] = MatrixXcd::Zero(bundle.multiplicities[g], 0);
        continue;
      }
      const MatrixXcd residue = s - prev[g] * (prev[g].adjoint() * s);
      Eigen::JacobiSVD<MatrixXcd> svd(residue, Eigen::ComputeThinU);
      slot[g] = svd.matrixU().leftCols(want);
    }
    slots.push_back(std::move(slot));
    prev = step.injectors;
  }
  return slots;
}

// Slot-block-diagonal part of the class: the one-parameter scaling adapted to
// an invariant flag kills the flag-crossing blocks in the limit, so this is
// the limit point of the degeneration along the flag (up to the recorded
// invariance defect).
HarmonicClass flag_compression(const BundleSpec& bundle,
                               const HarmonicClass& alpha,
                               const std::vector<std::vector<MatrixXcd>>& slots) {
  HarmonicClass out = zero_class(bundle, alpha.q);
  for (const auto& slot : slots) {
    for (int c = 0; c < alpha.combos(); ++c) {
      for (int g = 0; g < bundle.group_count(); ++g) {
        const MatrixXcd& v = slot[g];
        if (v.cols() == 0) continue;
        out.blocks[c][g] +=
            v * MatrixXcd(v.adjoint() * alpha.blocks[c][g] * v) * v.adjoint();
      }
    }
  }
  return out;
}

std::vector<GradedPiece> pieces_from_filtration(
    const BundleSpec& bundle, const HarmonicClass& alpha,
    const KernelFiltration& filtration, const GradingOptions& options) {
  std::vector<GradedPiece> pieces;
  Rng rng(0x6772616465645ULL);
  const int groups = bundle.group_count();
  const std::vector<std::vector<MatrixXcd>> slots =
      slot_frames(bundle, filtration);
  for (const std::vector<MatrixXcd>& slot : slots) {
    std::vector<int> slot_to_root;
    const BundleSpec slot_spec = sub_spec_from_cols(bundle, slot, &slot_to_root);
    const HarmonicClass raw =
        compress_class(slot_spec, alpha, slot, slot_to_root, nullptr);
    const FlowResult refined =
        minimize_flow(slot_spec, raw, options.piece_flow);
    const HarmonicClass minimal = refined.alpha_bar;
    for (std::size_t pg = 0; pg < slot_to_root.size(); ++pg) {
      const int rg = slot_to_root[pg];
      std::vector<MatrixXcd> mats;
      mats.reserve(minimal.combos());
      for (int c = 0; c < minimal.combos(); ++c)
        mats.push_back(minimal.blocks[c][pg]);
      for (const MatrixXcd& u : commutant_split(mats, rng)) {
        GradedPiece piece;
        piece.rank = static_cast<int>(u.cols());
        const std::vector<std::vector<double>> characters(
            piece.rank, bundle.characters[bundle.group_offset[rg]]);
        piece.bundle = make_bundle_spec(bundle.n, characters);
        piece.injectors.reserve(groups);
        for (int g = 0; g < groups; ++g)
          piece.injectors.push_back(
              MatrixXcd::Zero(bundle.multiplicities[g], 0));
        piece.injectors[rg] = slot[rg] * u;
        piece.piece_class = zero_class(piece.bundle, 1);
        for (int c = 0; c < minimal.combos(); ++c)
          piece.piece_class.blocks[c][0] =
              u.adjoint() * minimal.blocks[c][pg] * u;
        piece.moment_norm = norm(moment(piece.bundle, piece.piece_class));
        const StabilityVerdict pv = classify(piece.bundle, piece.piece_class);
        piece.closed_orbit = pv.verdict == StabilityClass::kStable ||
                             pv.verdict == StabilityClass::kPolystable;
        pieces.push_back(std::move(piece));
      }
    }
  }
  return pieces;
}

// Class-level integrability gate: constant classes are unobstructed exactly
// when their direction blocks commute pairwise.
void require_unobstructed(const BundleSpec& bundle, const HarmonicClass& alpha) {
  if (alpha.q != 1)
    throw std::invalid_argument("graded object expects a (0,1) class");
  if (alpha.n < 2) return;
  const double scale = norm(alpha);
  double defect = 0.0;
  for (int a = 0; a < alpha.combos(); ++a) {
    for (int b = a + 1; b < alpha.combos(); ++b) {
      for (int g = 0; g < bundle.group_count(); ++g) {
        const MatrixXcd& xa = alpha.blocks[a][g];
        const MatrixXcd& xb = alpha.blocks[b][g];
        defect = std::max(defect, (xa * xb - xb * xa).norm());
      }
    }
  }
  if (defect > 1e-8 * (1.0 + scale * scale))
    throw std::runtime_error("obstructed class");
}

// Potential of the class through the slice: harmonic embedding plus the
// coclosed degree-two correction.
Field reassemble(const SpectralContext& ctx, const HarmonicClass& cls) {
  Field a = ctx.embed(cls);
  if (cls.n >= 2) {
    const BetaResult beta = solve_beta(ctx, a);
    if (!beta.beta.empty()) a += ctx.dbar0_star(beta.beta);
  }
  return a;
}

struct UnknownLayout {
  std::vector<int> offset;
  int total = 0;
};

UnknownLayout unknown_layout(const BundleSpec& bundle) {
  UnknownLayout layout;
  for (int g = 0; g < bundle.group_count(); ++g) {
    layout.offset.push_back(layout.total);
    layout.total += bundle.multiplicities[g] * bundle.multiplicities[g];
  }
  return layout;
}

GroupElement unpack_unknown(const BundleSpec& bundle,
                            const UnknownLayout& layout, const VectorXcd& v) {
  GroupElement x;
  for (int g = 0; g < bundle.group_count(); ++g) {
    const int m = bundle.multiplicities[g];
    x.blocks.emplace_back(
        Eigen::Map<const MatrixXcd>(v.data() + layout.offset[g], m, m));
  }
  return x;
}

double intertwiner_residual(const SpectralContext& ctx, const Field& a1,
                            const Field& a2, const GroupElement& x) {
  const Field xf = group_field(ctx, x);
  const Field defect = wedge(a2, xf) - wedge(xf, a1);
  const double unit =
      norm_element(x) / std::sqrt(static_cast<double>(ctx.rank()));
  const double scale = std::max(norm(a1), norm(a2)) * unit + 1e-300;
  return norm(defect) / scale;
}

void require_slice_input(const SpectralContext& ctx, const Field& a,
                         const GradingOptions& options) {
  if (a.p() != 0 || a.q() != 1 || a.rank() != ctx.rank())
    throw std::invalid_argument("intertwiner search expects (0,1) potentials");
  const double an = norm(a);
  if (an > KuranishiOptions{}.slice_radius)
    throw std::runtime_error("outside slice radius");
  if (norm(ctx.dbar0_star(a)) > options.slice_tolerance * (1.0 + an))
    throw std::runtime_error("potential not coclosed");
}

}  // namespace

HarmonicClass orbit_closure_polystable(const BundleSpec& bundle,
                                       const HarmonicClass& alpha,
                                       const GradingOptions& options) {
  if (alpha.q != 1)
    throw std::invalid_argument("orbit closure expects a (0,1) class");
  // The descent either converges inside the orbit or degenerates along an
  // invariant flag; in the second case the limit point is the flag
  // compression, which may itself need further descent. Each pass refines a
  // proper flag, so at most rank passes occur.
  HarmonicClass current = alpha;
  for (int round = 0; round < bundle.rank + 2; ++round) {
    const FlowResult deep = deepen_flow(bundle, current, nullptr, options);
    if (deep.reached_zero) return zero_class(bundle, 1);
    const KernelFiltration filtration =
        limit_kernel_filtration(bundle, current, deep, options);
    if (!filtration.degenerate) {
      if (norm(moment(bundle, deep.alpha_bar)) <= options.moment_tolerance)
        return deep.alpha_bar;
      current = deep.alpha_bar;
      continue;
    }
    current = flag_compression(bundle, current,
                               slot_frames(bundle, filtration));
  }
  throw std::runtime_error("orbit closure not resolved");
}

KernelFiltration limit_kernel_filtration(const BundleSpec& bundle,
                                         const HarmonicClass& alpha,
                                         const FlowResult& flow,
                                         const GradingOptions& options) {
  if (alpha.q != 1)
    throw std::invalid_argument("kernel filtration expects a (0,1) class");
  FlagBuild build;
  std::vector<MatrixXcd> frame;
  std::vector<int> to_root;
  for (int g = 0; g < bundle.group_count(); ++g) {
    frame.push_back(MatrixXcd::Identity(bundle.multiplicities[g],
                                        bundle.multiplicities[g]));
    to_root.push_back(g);
  }
  build_flag(bundle, bundle, to_root, frame, alpha, &flow, options, true,
             build);
  KernelFiltration out;
  out.gamma0 = build.gamma0;
  out.gamma0_norm = norm_element(build.gamma0);
  out.gamma0_det = build.gamma0_det;
  out.invariance_defect = build.defect;
  out.degenerate = !build.steps.empty();
  for (const auto& frames : build.steps) {
    FiltrationStep step;
    step.injectors = frames;
    for (const auto& cols : frames) step.rank += static_cast<int>(cols.cols());
    out.steps.push_back(std::move(step));
  }
  FiltrationStep full;
  full.rank = bundle.rank;
  full.injectors = frame;
  out.steps.push_back(std::move(full));
  return out;
}

std::vector<GradedPiece> graded_object(const BundleSpec& bundle,
                                       const HarmonicClass& alpha,
                                       const GradingOptions& options) {
  require_unobstructed(bundle, alpha);
  const FlowResult flow = minimize_flow(bundle, alpha, options.limit_flow);
  const KernelFiltration filtration =
      limit_kernel_filtration(bundle, alpha, flow, options);
  return pieces_from_filtration(bundle, alpha, filtration, options);
}

HarmonicClass assemble_graded_class(const BundleSpec& bundle,
                                    const std::vector<GradedPiece>& pieces) {
  HarmonicClass out = zero_class(bundle, 1);
  for (const GradedPiece& piece : pieces) {
    for (int c = 0; c < out.combos(); ++c) {
      int pg = 0;
      for (int g = 0; g < bundle.group_count(); ++g) {
        if (piece.injectors[g].cols() == 0) continue;
        out.blocks[c][g] += piece.injectors[g] *
                            piece.piece_class.blocks[c][pg] *
                            piece.injectors[g].adjoint();
        ++pg;
      }
    }
  }
  return out;
}

IsoCertificate is_isomorphic(const SpectralContext& ctx, const Field& a1,
                             const Field& a2, const GradingOptions& options) {
  require_slice_input(ctx, a1, options);
  require_slice_input(ctx, a2, options);
  const BundleSpec& bundle = ctx.bundle();
  IsoCertificate cert;
  cert.intertwiner = identity_element(bundle);
  const UnknownLayout layout = unknown_layout(bundle);
  // Both potentials flat: the identity already intertwines.
  if (std::max(norm(a1), norm(a2)) <= options.trivial_tolerance) {
    cert.isomorphic = true;
    cert.margin = 1.0;
    cert.kernel_dimension = layout.total;
    return cert;
  }
  const int r = ctx.rank();
  const int d = layout.total;
  MatrixXcd h = MatrixXcd::Zero(d, d);
  MatrixXcd rows(r * r, d);
  const std::int64_t points = ctx.geometry().points;
  const double weight = 2.0 / static_cast<double>(points);
  for (int c = 0; c < a1.components(); ++c) {
    for (std::int64_t x = 0; x < points; ++x) {
      rows.setZero();
      for (int i = 0; i < r; ++i) {
        const int gi = bundle.group_of[i];
        const int oi = bundle.group_offset[gi];
        const int mi = bundle.multiplicities[gi];
        for (int j = 0; j < r; ++j) {
          const int gj = bundle.group_of[j];
          const int oj = bundle.group_offset[gj];
          const int mj = bundle.multiplicities[gj];
          const int row = i * r + j;
          for (int k = 0; k < mj; ++k)
            rows(row, layout.offset[gj] + (j - oj) * mj + k) +=
                a2.at(c, i, oj + k, x);
          for (int k = 0; k < mi; ++k)
            rows(row, layout.offset[gi] + k * mi + (i - oi)) -=
                a1.at(c, oi + k, j, x);
        }
      }
      h.noalias() += weight * (rows.adjoint() * rows);
    }
  }
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(h);
  const VectorXd& ev = es.eigenvalues();
  const double emax = std::max(ev(d - 1), 0.0);
  if (emax <= 0.0) {
    cert.isomorphic = true;
    cert.margin = 1.0;
    cert.kernel_dimension = d;
    return cert;
  }
  cert.smallest_obstruction = std::sqrt(std::max(ev(0), 0.0) / emax);
  std::vector<VectorXcd> kernel;
  for (int i = 0; i < d; ++i)
    if (std::sqrt(std::max(ev(i), 0.0) / emax) <= kIsoSystemThreshold)
      kernel.push_back(es.eigenvectors().col(i));
  cert.kernel_dimension = static_cast<int>(kernel.size());
  std::vector<VectorXcd> candidates;
  if (kernel.empty()) {
    candidates.push_back(es.eigenvectors().col(0));
  } else {
    candidates = kernel;
    if (kernel.size() > 1) {
      VectorXcd sum = VectorXcd::Zero(d);
      for (const auto& v : kernel) sum += v;
      candidates.push_back(sum.normalized());
      Rng rng(0x696e74657274ULL);
      for (int t = 0; t < 40; ++t) {
        VectorXcd mix = VectorXcd::Zero(d);
        for (const auto& v : kernel)
          mix += Complex(rng.normal(), rng.normal()) * v;
        candidates.push_back(mix.normalized());
      }
    }
  }
  double best = -1.0;
  for (const auto& v : candidates) {
    GroupElement x = unpack_unknown(bundle, layout, v);
    const double margin = block_margin(x);
    if (margin > best) {
      best = margin;
      cert.intertwiner = std::move(x);
      cert.margin = margin;
    }
  }
  cert.residual = intertwiner_residual(ctx, a1, a2, cert.intertwiner);
  cert.isomorphic = !kernel.empty() && cert.margin > options.iso_margin &&
                    cert.residual <= options.iso_residual_tolerance;
  return cert;
}

GradingReport verify_gr_theorem(const SpectralContext& ctx,
                                const HarmonicClass& alpha,
                                const GradingOptions& options) {
  const BundleSpec& bundle = ctx.bundle();
  if (alpha.q != 1 || alpha.n != bundle.n)
    throw std::invalid_argument("graded comparison expects a (0,1) class");
  GradingReport report;
  report.alpha = alpha;
  require_unobstructed(bundle, alpha);
  // Obstruction through the full slice solver at an embeddable scale; it must
  // agree with the class-level commutator gate above.
  const double anorm = norm(alpha);
  const double pre_scale =
      std::min(1.0, options.field_scale / (anorm + 1e-300));
  const HarmonicClass obstruction =
      psi(ctx, Complex(pre_scale, 0.0) * alpha);
  report.psi_norm = norm(obstruction);
  if (report.psi_norm >
      options.psi_tolerance * (1.0 + pre_scale * pre_scale * anorm * anorm))
    throw std::runtime_error("obstructed class");
  const StabilityVerdict verdict = classify(bundle, alpha);
  report.verdict = verdict.verdict;
  if (report.verdict == StabilityClass::kInconclusive)
    throw std::runtime_error("stability classification inconclusive");
  report.alpha_bar = orbit_closure_polystable(bundle, alpha, options);
  const FlowResult flow = minimize_flow(bundle, alpha, options.limit_flow);
  report.filtration = limit_kernel_filtration(bundle, alpha, flow, options);
  report.pieces =
      pieces_from_filtration(bundle, alpha, report.filtration, options);
  report.graded_class = assemble_graded_class(bundle, report.pieces);
  const double target =
      std::max(norm(report.graded_class), norm(report.alpha_bar));
  const double scale =
      target < 1e-300 ? 1.0 : std::min(1.0, options.field_scale / target);
  report.field_scale = scale;
  const Field route_graded =
      reassemble(ctx, Complex(scale, 0.0) * report.graded_class);
  const Field route_limit =
      reassemble(ctx, Complex(scale, 0.0) * report.alpha_bar);
  report.certificate = is_isomorphic(ctx, route_graded, route_limit, options);
  bool pieces_ok = !report.pieces.empty();
  int total_rank = 0;
  for (const GradedPiece& piece : report.pieces) {
    pieces_ok = pieces_ok && piece.moment_norm <= options.moment_tolerance &&
                piece.closed_orbit;
    total_rank += piece.rank;
  }
  pieces_ok = pieces_ok && total_rank == bundle.rank;
  bool ranks_ok = !report.filtration.steps.empty() &&
                  report.filtration.steps.back().rank == bundle.rank;
  int last = 0;
  for (const FiltrationStep& step : report.filtration.steps) {
    ranks_ok = ranks_ok && step.rank > last;
    last = step.rank;
  }
  const bool defect_ok =
      report.filtration.invariance_defect <= 1e-6 * (1.0 + anorm);
  report.pass =
      pieces_ok && ranks_ok && defect_ok && report.certificate.isomorphic;
  return report;
}

bool recover_trivial(const SpectralContext& ctx, const Field& a01,
                     const GradingOptions& options) {
  require_slice_input(ctx, a01, options);
  const double harmonic_part = norm(ctx.harmonic_project(a01));
  const bool via_projection =
      harmonic_part <= options.trivial_tolerance * (1.0 + norm(a01));
  const Field flat(ctx.geometry(), 0, 1, ctx.rank());
  const bool via_intertwiner =
      is_isomorphic(ctx, a01, flat, options).isomorphic;
  if (via_projection != via_intertwiner)
    throw std::runtime_error("triviality routes disagree");
  return via_projection;
}

std::string grading_report_json(const GradingReport& report) {
  nlohmann::json j;
  j["verdict"] = to_string(report.verdict);
  j["alpha_norm"] = norm(report.alpha);
  j["alpha_bar_norm"] = norm(report.alpha_bar);
  j["graded_norm"] = norm(report.graded_class);
  j["psi_norm"] = report.psi_norm;
  j["field_scale"] = report.field_scale;
  j["pass"] = report.pass;
  nlohmann::json filtration;
  filtration["degenerate"] = report.filtration.degenerate;
  filtration["gamma0_norm"] = report.filtration.gamma0_norm;
  filtration["gamma0_det"] = report.filtration.gamma0_det;
  filtration["invariance_defect"] = report.filtration.invariance_defect;
  filtration["ranks"] = nlohmann::json::array();
  for (const FiltrationStep& step : report.filtration.steps)
    filtration["ranks"].push_back(step.rank);
  j["filtration"] = filtration;
  j["pieces"] = nlohmann::json::array();
  for (const GradedPiece& piece : report.pieces) {
    j["pieces"].push_back({{"rank", piece.rank},
                           {"moment_norm", piece.moment_norm},
                           {"closed_orbit", piece.closed_orbit},
                           {"class_norm", norm(piece.piece_class)}});
  }
  j["certificate"] = {
      {"isomorphic", report.certificate.isomorphic},
      {"residual", report.certificate.residual},
      {"margin", report.certificate.margin},
      {"smallest_obstruction", report.certificate.smallest_obstruction},
      {"kernel_dimension", report.certificate.kernel_dimension}};
  return j.dump(2);
}

}  // namespace hetorus
