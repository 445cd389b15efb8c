#include "hetorus/moment_git.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "hetorus/rng.hpp"

namespace hetorus {
namespace {

constexpr double kMembershipThreshold = 1e-8;
constexpr double kContradictionMargin = 1e-4;
constexpr double kIntertwinerResidualFactor = 1e-8;
constexpr double kPolishTargetFactor = 1e-24;
constexpr double kPolishAcceptFactor = 1e-8;
constexpr int kPolishCap = 80;
constexpr int kMembershipSamples = 24;
constexpr double kWitnessFloor = 1e-9;
constexpr double kWitnessPositive = 1e-3;
constexpr double kLimitResolution = 1e-6;
constexpr double kBandFactor = 100.0;
constexpr double kArmijoFraction = 0.1;
constexpr double kCollapseFraction = 1e-3;
constexpr long double kRefineRankFloor = 1e-14L;
constexpr long double kRefineResidualFloor = 0.1L;
constexpr long double kRefineTrust = 4.0L;
constexpr std::size_t kTraceCap = 512;

void require_degree(const HarmonicClass& h, int q, const char* message) {
  if (h.q != q) throw std::invalid_argument(message);
}

double block_margin(const Eigen::MatrixXcd& x) {
  const int m = static_cast<int>(x.rows());
  const double fro = x.norm();
  if (fro == 0.0) return 0.0;
  const double scale = fro / std::sqrt(static_cast<double>(m));
  return std::abs(Eigen::MatrixXcd(x / scale).determinant());
}

// Best invertibility margin over the linear space of blockwise intertwiners
// X alpha = alpha_bar X; the supplied conjugator is always a candidate. The
// margin is the min over groups, each group maximized over kernel samples.
double intertwiner_margin(const BundleSpec& bundle, const HarmonicClass& alpha,
                          const HarmonicClass& alpha_bar,
                          const GroupElement& seed) {
  Rng rng(0x5eedULL);
  const int combos = alpha.combos();
  double margin = std::numeric_limits<double>::infinity();
  for (int g = 0; g < bundle.group_count(); ++g) {
    const int m = bundle.multiplicities[g];
    double scale = 0.0;
    for (int b = 0; b < combos; ++b) scale += alpha.blocks[b][g].squaredNorm();
    scale = std::max(1.0, std::sqrt(scale));

    const auto residual = [&](const Eigen::MatrixXcd& x) {
      double r = 0.0;
      for (int b = 0; b < combos; ++b) {
        r += (x * alpha.blocks[b][g] - alpha_bar.blocks[b][g] * x).norm();
      }
      return r;
    };
    const auto admissible = [&](const Eigen::MatrixXcd& x) {
      const double nx = x.norm();
      return nx > 0.0 && residual(x) <= kIntertwinerResidualFactor * nx * scale;
    };

    double best = 0.0;
    if (admissible(seed.blocks[g])) best = block_margin(seed.blocks[g]);

    Eigen::MatrixXcd t(combos * m * m, m * m);
    for (int q = 0; q < m; ++q) {
      for (int p = 0; p < m; ++p) {
        Eigen::MatrixXcd e = Eigen::MatrixXcd::Zero(m, m);
        e(p, q) = 1.0;
        for (int b = 0; b < combos; ++b) {
          const Eigen::MatrixXcd img =
              e * alpha.blocks[b][g] - alpha_bar.blocks[b][g] * e;
          t.block(b * m * m, q * m + p, m * m, 1) =
              Eigen::Map<const Eigen::VectorXcd>(img.data(), m * m);
        }
      }
    }
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(t, Eigen::ComputeFullV);
    const double smax = svd.singularValues().size() > 0
                            ? svd.singularValues()(0)
                            : 0.0;
    std::vector<Eigen::MatrixXcd> kernel;
    for (int j = 0; j < svd.singularValues().size(); ++j) {
      if (svd.singularValues()(j) <= 1e-10 * std::max(1.0, smax)) {
        Eigen::VectorXcd col = svd.matrixV().col(j);
        kernel.push_back(
            Eigen::Map<const Eigen::MatrixXcd>(col.data(), m, m));
      }
    }
    for (const auto& x : kernel) {
      if (admissible(x)) best = std::max(best, block_margin(x));
    }
    if (kernel.size() > 1) {
      for (int s = 0; s < kMembershipSamples; ++s) {
        Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(m, m);
        for (const auto& v : kernel) x += rng.complex_normal() * v;
        if (admissible(x)) best = std::max(best, block_margin(x));
      }
    }
    margin = std::min(margin, best);
  }
  return std::isfinite(margin) ? margin : 0.0;
}

int algebra_real_dimension(const BundleSpec& bundle) {
  int dim = 0;
  for (int m : bundle.multiplicities) dim += m * m;
  return dim;
}

// Extended-precision kernels for the conjugator refinement. The moment map
// evaluated through double conjugation has a cancellation noise floor around
// 1e-16 * ||alpha||^2, which stalls Newton exactly where the membership
// margin is decided; long double pushes the floor far below the thresholds.
using Cld = std::complex<long double>;
using Mld = Eigen::Matrix<Cld, Eigen::Dynamic, Eigen::Dynamic>;
using Vld = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
using Gld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

std::vector<std::vector<Mld>> class_blocks_ld(const HarmonicClass& h) {
  std::vector<std::vector<Mld>> out(h.blocks.size());
  for (std::size_t b = 0; b < h.blocks.size(); ++b) {
    out[b].reserve(h.blocks[b].size());
    for (const auto& blk : h.blocks[b]) out[b].push_back(blk.cast<Cld>());
  }
  return out;
}

std::vector<std::vector<Mld>> act_ld(const std::vector<Mld>& gamma,
                                     const std::vector<std::vector<Mld>>& a) {
  std::vector<Mld> inv(gamma.size());
  for (std::size_t g = 0; g < gamma.size(); ++g) inv[g] = gamma[g].inverse();
  std::vector<std::vector<Mld>> out(a.size());
  for (std::size_t b = 0; b < a.size(); ++b) {
    out[b].resize(a[b].size());
    for (std::size_t g = 0; g < a[b].size(); ++g) {
      out[b][g] = gamma[g] * a[b][g] * inv[g];
    }
  }
  return out;
}

std::vector<Mld> moment_ld(const std::vector<std::vector<Mld>>& abar) {
  std::vector<Mld> m(abar[0].size());
  for (std::size_t g = 0; g < m.size(); ++g) {
    m[g] = Mld::Zero(abar[0][g].rows(), abar[0][g].cols());
  }
  for (const auto& combo : abar) {
    for (std::size_t g = 0; g < combo.size(); ++g) {
      const Mld ad = combo[g].adjoint();
      m[g] += Cld(2.0L, 0.0L) * (combo[g] * ad - ad * combo[g]);
    }
  }
  return m;
}

long double norm_blocks_ld(const std::vector<Mld>& m) {
  long double s = 0.0L;
  for (const auto& blk : m) s += blk.squaredNorm();
  return std::sqrt(s);
}

Vld pack_selfadjoint_ld(const std::vector<Mld>& blocks, int dim) {
  Vld x(dim);
  int idx = 0;
  for (const auto& blk : blocks) {
    const int m = static_cast<int>(blk.rows());
    for (int i = 0; i < m; ++i) x(idx++) = blk(i, i).real();
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) {
        x(idx++) = blk(i, j).real();
        x(idx++) = blk(i, j).imag();
      }
    }
  }
  return x;
}

std::vector<Mld> unpack_selfadjoint_ld(const BundleSpec& bundle, const Vld& x) {
  std::vector<Mld> blocks(bundle.group_count());
  int idx = 0;
  for (int g = 0; g < bundle.group_count(); ++g) {
    const int m = bundle.multiplicities[g];
    blocks[g] = Mld::Zero(m, m);
    for (int i = 0; i < m; ++i) blocks[g](i, i) = Cld(x(idx++), 0.0L);
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) {
        const long double re = x(idx++);
        const long double im = x(idx++);
        blocks[g](i, j) = Cld(re, im);
        blocks[g](j, i) = Cld(re, -im);
      }
    }
  }
  return blocks;
}

std::vector<Mld> m_alpha_ld(const std::vector<std::vector<Mld>>& abar,
                            const std::vector<Mld>& delta) {
  std::vector<Mld> out(delta.size());
  for (std::size_t g = 0; g < delta.size(); ++g) {
    out[g] = Mld::Zero(delta[g].rows(), delta[g].cols());
  }
  for (const auto& combo : abar) {
    for (std::size_t g = 0; g < combo.size(); ++g) {
      const Mld& a = combo[g];
      const Mld ad = a.adjoint();
      const Mld& d = delta[g];
      const Mld dd = d.adjoint();
      const Mld da = d * a - a * d;
      const Mld add = ad * dd - dd * ad;
      out[g] += Cld(2.0L, 0.0L) * ((da * ad - ad * da) + (a * add - add * a));
    }
  }
  return out;
}

Mld exp_selfadjoint_ld(const Mld& d) {
  Eigen::SelfAdjointEigenSolver<Mld> es(d);
  return es.eigenvectors() *
         es.eigenvalues().array().exp().matrix().cast<Cld>().asDiagonal() *
         es.eigenvectors().adjoint();
}

void det_normalize_ld(Mld& x) {
  const Cld det = x.determinant();
  if (std::abs(det) == 0.0L) return;
  x *= std::exp(-std::log(det) / Cld(static_cast<long double>(x.rows()), 0.0L));
}

struct RefineOutcome {
  GroupElement gamma;
  HarmonicClass alpha_bar;
  double moment_norm = 0.0;
  int iterations = 0;
};

// Newton iteration on the conjugator: solve the linearized moment equation
// over self-adjoint directions with a rank-revealing least-squares step and
// accept only strict decrease of ||m||. Converges quadratically at interior
// zeros and geometrically along closed-orbit boundaries.
RefineOutcome refine_extended(const BundleSpec& bundle,
                              const HarmonicClass& alpha,
                              const GroupElement& gamma0, double target) {
  const auto alpha_ld = class_blocks_ld(alpha);
  std::vector<Mld> gamma(gamma0.blocks.size());
  for (std::size_t g = 0; g < gamma.size(); ++g) {
    gamma[g] = gamma0.blocks[g].cast<Cld>();
  }
  auto abar = act_ld(gamma, alpha_ld);
  auto m = moment_ld(abar);
  long double mn = norm_blocks_ld(m);
  const int dim = algebra_real_dimension(bundle);
  RefineOutcome out;
  for (int iter = 0; iter < kPolishCap; ++iter) {
    if (mn <= static_cast<long double>(target)) break;
    Gld jac(dim, dim);
    for (int k = 0; k < dim; ++k) {
      Vld e = Vld::Zero(dim);
      e(k) = 1.0L;
      jac.col(k) =
          pack_selfadjoint_ld(m_alpha_ld(abar, unpack_selfadjoint_ld(bundle, e)), dim);
    }
    Eigen::JacobiSVD<Gld> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const long double smax = svd.singularValues()(0);
    if (smax <= 0.0L) break;
    // Near a closed-orbit boundary the productive directions have singular
    // values that shrink with ||m|| while semisimple directions stay O(1),
    // so the rank cutoff must track the residual, not the top of the
    // spectrum, or those directions get truncated away.
    const long double cutoff =
        std::max(kRefineRankFloor * smax, kRefineResidualFloor * mn);
    svd.setThreshold(std::min(1.0L, cutoff / smax));
    Vld step = svd.solve(Vld(-pack_selfadjoint_ld(m, dim)));
    const long double step_norm = step.norm();
    if (step_norm > kRefineTrust) step *= kRefineTrust / step_norm;
    bool accepted = false;
    long double s = 1.0L;
    for (int half = 0; half < 16; ++half) {
      const std::vector<Mld> delta = unpack_selfadjoint_ld(bundle, Vld(s * step));
      std::vector<Mld> trial(gamma.size());
      for (std::size_t g = 0; g < gamma.size(); ++g) {
        trial[g] = exp_selfadjoint_ld(delta[g]) * gamma[g];
        det_normalize_ld(trial[g]);
      }
      const auto a_try = act_ld(trial, alpha_ld);
      const auto m_try = moment_ld(a_try);
      const long double mn_try = norm_blocks_ld(m_try);
      if (mn_try < mn) {
        gamma = std::move(trial);
        abar = a_try;
        m = m_try;
        mn = mn_try;
        accepted = true;
        break;
      }
      s *= 0.5L;
    }
    out.iterations = iter + 1;
    if (!accepted) break;
  }
  out.gamma.blocks.resize(gamma.size());
  for (std::size_t g = 0; g < gamma.size(); ++g) {
    out.gamma.blocks[g] = gamma[g].cast<Complex>();
  }
  out.alpha_bar = zero_class(bundle, 1);
  for (std::size_t b = 0; b < abar.size(); ++b) {
    for (std::size_t g = 0; g < abar[b].size(); ++g) {
      out.alpha_bar.blocks[b][g] = abar[b][g].cast<Complex>();
    }
  }
  out.moment_norm = static_cast<double>(mn);
  return out;
}

Eigen::MatrixXcd commutator_matrix(const HarmonicClass& alpha, int g, int m) {
  const int combos = alpha.combos();
  Eigen::MatrixXcd t(combos * m * m, m * m);
  for (int q = 0; q < m; ++q) {
    for (int p = 0; p < m; ++p) {
      Eigen::MatrixXcd e = Eigen::MatrixXcd::Zero(m, m);
      e(p, q) = 1.0;
      for (int b = 0; b < combos; ++b) {
        const Eigen::MatrixXcd img =
            alpha.blocks[b][g] * e - e * alpha.blocks[b][g];
        t.block(b * m * m, q * m + p, m * m, 1) =
            Eigen::Map<const Eigen::VectorXcd>(img.data(), m * m);
      }
    }
  }
  return t;
}

struct KernelCount {
  int kernel = 0;
  bool band_clear = true;
};

// Centralizer kernel count at the 1e-6 resolution with a guard band: any
// singular value inside (tau, 100 tau) makes the count unreliable.
KernelCount count_limit_kernel(const BundleSpec& bundle,
                               const HarmonicClass& alpha) {
  KernelCount out;
  for (int g = 0; g < bundle.group_count(); ++g) {
    const int m = bundle.multiplicities[g];
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(commutator_matrix(alpha, g, m));
    const double smax =
        svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
    const double tau = kLimitResolution * std::max(1.0, smax);
    for (int j = 0; j < svd.singularValues().size(); ++j) {
      const double sv = svd.singularValues()(j);
      if (sv <= tau) {
        ++out.kernel;
      } else if (sv < kBandFactor * tau) {
        out.band_clear = false;
      }
    }
  }
  return out;
}

void thin_trace(std::vector<double>& trace) {
  if (trace.size() <= kTraceCap) return;
  std::vector<double> kept;
  const std::size_t stride = (trace.size() + kTraceCap - 1) / kTraceCap;
  for (std::size_t i = 0; i < trace.size(); i += stride) kept.push_back(trace[i]);
  if (kept.back() != trace.back()) kept.push_back(trace.back());
  trace = std::move(kept);
}

// Destabilizing diagonal direction read off from the polar part of the
// accumulated conjugator; attached only if it verifiably sends alpha to zero.
void attach_witness(const BundleSpec& bundle, const HarmonicClass& alpha,
                    StabilityVerdict& v) {
  GroupElement u;
  u.blocks.resize(bundle.group_count());
  std::vector<double> w(bundle.rank, 0.0);
  double wmax = 0.0;
  for (int g = 0; g < bundle.group_count(); ++g) {
    const Eigen::MatrixXcd& x = v.gamma.blocks[g];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(x.adjoint() * x);
    u.blocks[g] = es.eigenvectors();
    for (int j = 0; j < bundle.multiplicities[g]; ++j) {
      const double h = 0.5 * std::log(std::max(es.eigenvalues()(j), 1e-300));
      w[bundle.group_offset[g] + j] = -h;
      wmax = std::max(wmax, std::abs(h));
    }
  }
  if (wmax < kWitnessFloor) return;
  for (double& x : w) x /= wmax;
  HarmonicClass rotated = act(dagger_element(u), alpha);
  // Entries below the decision resolution are not support: the certificate
  // asserts instability of a class within that resolution of the input.
  double top = 0.0;
  for (const auto& combo : rotated.blocks) {
    for (const auto& blk : combo) {
      top = std::max(top, blk.cwiseAbs().maxCoeff());
    }
  }
  if (top == 0.0) return;
  for (auto& combo : rotated.blocks) {
    for (auto& blk : combo) {
      for (Eigen::Index c = 0; c < blk.cols(); ++c) {
        for (Eigen::Index r = 0; r < blk.rows(); ++r) {
          if (std::abs(blk(r, c)) <= kLimitResolution * top) blk(r, c) = 0.0;
        }
      }
    }
  }
  const OnePsWeights weights = one_ps_weights(rotated, w);
  if (!weights.degenerate && weights.w_flat > kWitnessPositive) {
    v.has_witness = true;
    v.witness_weights = w;
    v.witness_flat = weights.w_flat;
    v.witness_sharp = weights.w_sharp;
  }
}

}  // namespace

std::string to_string(StabilityClass value) {
  switch (value) {
    case StabilityClass::kUnstable:
      return "Unstable";
    case StabilityClass::kSemistableNotPolystable:
      return "SemistableNotPolystable";
    case StabilityClass::kPolystable:
      return "Polystable";
    case StabilityClass::kStable:
      return "Stable";
    case StabilityClass::kInconclusive:
      return "Inconclusive";
  }
  return "Inconclusive";
}

HarmonicClass act(const GroupElement& gamma, const HarmonicClass& alpha) {
  HarmonicClass out = alpha;
  std::vector<Eigen::MatrixXcd> inverses(gamma.blocks.size());
  for (std::size_t g = 0; g < gamma.blocks.size(); ++g) {
    inverses[g] = gamma.blocks[g].inverse();
  }
  for (auto& combo : out.blocks) {
    for (std::size_t g = 0; g < combo.size(); ++g) {
      combo[g] = gamma.blocks[g] * combo[g] * inverses[g];
    }
  }
  return out;
}

HarmonicClass moment(const BundleSpec& bundle, const HarmonicClass& alpha) {
  require_degree(alpha, 1, "moment map requires a (0,1) class");
  HarmonicClass m = zero_class(bundle, 0);
  for (const auto& combo : alpha.blocks) {
    for (int g = 0; g < bundle.group_count(); ++g) {
      const Eigen::MatrixXcd& a = combo[g];
      const Eigen::MatrixXcd ad = a.adjoint();
      m.blocks[0][g] += 2.0 * (a * ad - ad * a);
    }
  }
  return m;
}

HarmonicClass moment_quadrature(const SpectralContext& ctx,
                                const HarmonicClass& alpha) {
  require_degree(alpha, 1, "moment map requires a (0,1) class");
  const Field a = ctx.embed(alpha);
  const Field a_star = adjoint_form(a);
  const Field pairing = wedge(a, a_star) + wedge(a_star, a);
  return ctx.harmonic_project(Complex(0.0, -1.0) * lambda_contract(pairing));
}

double symplectic_pairing(const HarmonicClass& a, const HarmonicClass& b) {
  return inner_product(a, b).imag();
}

HarmonicClass m_alpha_apply(const BundleSpec& bundle,
                            const HarmonicClass& alpha,
                            const HarmonicClass& delta) {
  require_degree(alpha, 1, "moment map requires a (0,1) class");
  require_degree(delta, 0, "derivative direction must be a (0,0) class");
  HarmonicClass out = zero_class(bundle, 0);
  for (const auto& combo : alpha.blocks) {
    for (int g = 0; g < bundle.group_count(); ++g) {
      const Eigen::MatrixXcd& a = combo[g];
      const Eigen::MatrixXcd ad = a.adjoint();
      const Eigen::MatrixXcd& d = delta.blocks[0][g];
      const Eigen::MatrixXcd dd = d.adjoint();
      const Eigen::MatrixXcd da = d * a - a * d;
      const Eigen::MatrixXcd add = ad * dd - dd * ad;
      out.blocks[0][g] += 2.0 * ((da * ad - ad * da) + (a * add - add * a));
    }
  }
  return out;
}

FlowResult minimize_flow(const BundleSpec& bundle, const HarmonicClass& alpha,
                         const FlowOptions& options) {
  require_degree(alpha, 1, "moment map requires a (0,1) class");
  FlowResult r;
  r.gamma = identity_element(bundle);
  r.alpha_bar = alpha;
  const double norm0 = norm(alpha);
  const double tol_zero = options.tol_zero_factor * norm0;
  double h = options.initial_step;
  HarmonicClass m = moment(bundle, r.alpha_bar);
  double mn = norm(m);
  double an = norm0;
  r.norm_trace.push_back(an);
  r.moment_trace.push_back(mn);
  const int groups = bundle.group_count();
  while (r.steps < options.max_steps) {
    if (mn < options.tol_m || mn == 0.0) {
      r.reached_moment_tolerance = true;
      break;
    }
    if (an < tol_zero) {
      r.reached_zero = true;
      break;
    }
    // Spectral factors of the step generator, shared across trial sizes.
    std::vector<Eigen::MatrixXcd> basis(groups);
    std::vector<Eigen::VectorXd> lam(groups);
    for (int g = 0; g < groups; ++g) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m.blocks[0][g]);
      basis[g] = es.eigenvectors();
      lam[g] = es.eigenvalues();
    }
    // Soft cap on the step exponent so a trial never overflows exp.
    if (h * mn > 50.0) h = 50.0 / mn;
    bool accepted = false;
    GroupElement g_try;
    while (h >= options.min_step) {
      std::vector<Eigen::MatrixXcd> e_minus(groups);
      std::vector<Eigen::MatrixXcd> e_plus(groups);
      for (int g = 0; g < groups; ++g) {
        Eigen::VectorXcd dm(lam[g].size());
        Eigen::VectorXcd dp(lam[g].size());
        for (int j = 0; j < lam[g].size(); ++j) {
          dm(j) = std::expm1(-h * lam[g](j));
          dp(j) = std::expm1(h * lam[g](j));
        }
        e_minus[g] = basis[g] * dm.asDiagonal() * basis[g].adjoint();
        e_plus[g] = basis[g] * dp.asDiagonal() * basis[g].adjoint();
      }
      // First difference of the conjugated class, assembled from expm1
      // factors so the descent test keeps full relative precision even when
      // the norm change is far below the norm itself.
      HarmonicClass diff = r.alpha_bar;
      for (auto& combo : diff.blocks) {
        for (int g = 0; g < groups; ++g) {
          const Eigen::MatrixXcd a = combo[g];
          const Eigen::MatrixXcd ae = a * e_plus[g];
          combo[g] = e_minus[g] * (a + ae) + ae;
        }
      }
      const double dn = norm(diff);
      const double delta_sq =
          2.0 * inner_product(r.alpha_bar, diff).real() + dn * dn;
      // Armijo test against the exact initial slope d/dt ||alpha||^2 =
      // -2 ||m||^2.
      if (delta_sq <= -2.0 * kArmijoFraction * h * mn * mn) {
        g_try = r.gamma;
        for (int g = 0; g < groups; ++g) {
          g_try.blocks[g] =
              (Eigen::MatrixXcd::Identity(e_minus[g].rows(),
                                          e_minus[g].cols()) +
               e_minus[g]) *
              r.gamma.blocks[g];
        }
        det_normalize(g_try);
        accepted = true;
        break;
      }
      h *= options.step_shrink;
    }
    if (!accepted) {
      r.step_underflow = true;
      break;
    }
    r.gamma = g_try;
    r.alpha_bar = act(r.gamma, alpha);
    an = norm(r.alpha_bar);
    m = moment(bundle, r.alpha_bar);
    mn = norm(m);
    ++r.steps;
    r.norm_trace.push_back(an);
    r.moment_trace.push_back(mn);
    h *= options.step_grow;
  }
  r.final_moment_norm = mn;
  r.final_norm = an;
  thin_trace(r.norm_trace);
  thin_trace(r.moment_trace);
  return r;
}

StabilityVerdict classify(const BundleSpec& bundle, const HarmonicClass& alpha,
                          const FlowOptions& options) {
  require_degree(alpha, 1, "moment map requires a (0,1) class");
  StabilityVerdict v;
  const double norm0 = norm(alpha);
  if (norm0 == 0.0) {
    // Trivial orbit: polystable by convention, never upgraded to Stable.
    v.verdict = StabilityClass::kPolystable;
    v.alpha_bar = alpha;
    v.gamma = identity_element(bundle);
    v.membership_margin = 1.0;
    v.isotropy_dim = isotropy_dimension(bundle, alpha);
    v.input_isotropy_dim = v.isotropy_dim;
    return v;
  }
  v.flow = minimize_flow(bundle, alpha, options);
  v.gamma = v.flow.gamma;
  v.alpha_bar = v.flow.alpha_bar;
  v.minimal_norm = v.flow.final_norm;
  if (v.flow.reached_zero) {
    v.verdict = StabilityClass::kUnstable;
    v.minimal_norm = 0.0;
    v.isotropy_dim = count_limit_kernel(bundle, v.alpha_bar).kernel;
    v.input_isotropy_dim = count_limit_kernel(bundle, alpha).kernel;
    v.isotropy_jump = v.isotropy_dim > v.input_isotropy_dim;
    attach_witness(bundle, alpha, v);
    return v;
  }
  if (!v.flow.reached_moment_tolerance && !v.flow.step_underflow) {
    v.verdict = StabilityClass::kInconclusive;
    return v;
  }
  const double scale = std::max(1.0, norm0 * norm0);
  const RefineOutcome polished =
      refine_extended(bundle, alpha, v.gamma, kPolishTargetFactor * scale);
  v.gamma = polished.gamma;
  v.alpha_bar = polished.alpha_bar;
  v.polished_moment_norm = polished.moment_norm;
  v.minimal_norm = norm(v.alpha_bar);
  const KernelCount at_input = count_limit_kernel(bundle, alpha);
  const KernelCount at_limit = count_limit_kernel(bundle, v.alpha_bar);
  v.input_isotropy_dim = at_input.kernel;
  v.isotropy_dim = at_limit.kernel;
  v.isotropy_jump = at_limit.kernel > at_input.kernel;
  v.membership_margin = intertwiner_margin(bundle, alpha, v.alpha_bar, v.gamma);
  // Unstable iff the squeezed norm collapsed and the polar part of the
  // conjugator yields a verified destabilizing weight. Either signal alone
  // is not trusted.
  attach_witness(bundle, alpha, v);
  const bool collapsed = v.minimal_norm <= kCollapseFraction * norm0;
  if (v.has_witness && collapsed) {
    v.verdict = StabilityClass::kUnstable;
    v.minimal_norm = 0.0;
    return v;
  }
  if (v.has_witness || collapsed) {
    v.has_witness = false;
    v.witness_weights.clear();
    v.witness_flat = 0.0;
    v.witness_sharp = 0.0;
    v.verdict = StabilityClass::kInconclusive;
    return v;
  }
  if (polished.moment_norm > kPolishAcceptFactor * scale ||
      !at_input.band_clear || !at_limit.band_clear) {
    v.verdict = StabilityClass::kInconclusive;
    return v;
  }
  if (v.isotropy_jump) {
    // A strictly larger limit stabilizer certifies escape from the orbit;
    // a simultaneously large margin would contradict it.
    v.verdict = v.membership_margin < kContradictionMargin
                    ? StabilityClass::kSemistableNotPolystable
                    : StabilityClass::kInconclusive;
  } else if (v.membership_margin > kMembershipThreshold) {
    v.verdict = v.isotropy_dim == 1 ? StabilityClass::kStable
                                    : StabilityClass::kPolystable;
  } else {
    v.verdict = StabilityClass::kInconclusive;
  }
  return v;
}

OnePsWeights one_ps_weights(const HarmonicClass& alpha,
                            const std::vector<double>& weights) {
  OnePsWeights out;
  int rank = 0;
  for (const auto& blk : alpha.blocks[0]) rank += static_cast<int>(blk.rows());
  if (static_cast<int>(weights.size()) != rank) {
    throw std::invalid_argument("weight vector length must match total rank");
  }
  double scale = 0.0;
  for (const auto& combo : alpha.blocks) {
    for (const auto& blk : combo) scale = std::max(scale, blk.cwiseAbs().maxCoeff());
  }
  if (scale == 0.0) {
    out.degenerate = true;
    return out;
  }
  bool found = false;
  double lo = 0.0;
  double hi = 0.0;
  for (const auto& combo : alpha.blocks) {
    int offset = 0;
    for (const auto& blk : combo) {
      const int m = static_cast<int>(blk.rows());
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          if (std::abs(blk(i, j)) <= 1e-12 * scale) continue;
          const double w = weights[offset + i] - weights[offset + j];
          if (!found) {
            lo = hi = w;
            found = true;
          } else {
            lo = std::min(lo, w);
            hi = std::max(hi, w);
          }
        }
      }
      offset += m;
    }
  }
  if (!found) {
    out.degenerate = true;
    return out;
  }
  out.w_flat = lo;
  out.w_sharp = hi;
  return out;
}

std::vector<HarmonicClass> isotropy(const BundleSpec& bundle,
                                    const HarmonicClass& alpha,
                                    double threshold) {
  std::vector<HarmonicClass> basis;
  for (int g = 0; g < bundle.group_count(); ++g) {
    const int m = bundle.multiplicities[g];
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(commutator_matrix(alpha, g, m),
                                           Eigen::ComputeFullV);
    const double smax =
        svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
    for (int j = 0; j < svd.singularValues().size(); ++j) {
      if (svd.singularValues()(j) <= threshold * std::max(1.0, smax)) {
        HarmonicClass h = zero_class(bundle, 0);
        Eigen::VectorXcd col = svd.matrixV().col(j);
        h.blocks[0][g] = Eigen::Map<const Eigen::MatrixXcd>(col.data(), m, m);
        basis.push_back(std::move(h));
      }
    }
  }
  return basis;
}

int isotropy_dimension(const BundleSpec& bundle, const HarmonicClass& alpha,
                       double threshold) {
  return static_cast<int>(isotropy(bundle, alpha, threshold).size());
}

SkewSumReport skew_sum_inequality(const Eigen::MatrixXd& s) {
  const int m = static_cast<int>(s.rows());
  if (s.cols() != m) throw std::invalid_argument("square matrix required");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (std::abs(s(i, j) + s(j, i)) > 1e-12 * scale) {
        throw std::invalid_argument("matrix must be skew-symmetric");
      }
      if (j > i && s(i, j) < 0.0) {
        throw std::invalid_argument("upper triangle must be nonnegative");
      }
    }
  }
  SkewSumReport report;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) report.lhs += s(i, j);
    report.rhs += std::abs(s.row(i).sum());
  }
  report.rhs *= std::pow(2.0, m - 1);
  report.holds = report.lhs <= report.rhs + 1e-12 * (1.0 + report.rhs);
  return report;
}

MinimalityGap minimality_gap(const BundleSpec& bundle,
                             const HarmonicClass& alpha,
                             const GroupElement& gamma, double tol) {
  require_degree(alpha, 1, "moment map requires a (0,1) class");
  if (norm(moment(bundle, alpha)) >= tol) {
    throw std::invalid_argument("minimality gap requires a moment map zero");
  }
  const HarmonicClass moved = act(gamma, alpha);
  MinimalityGap out;
  const double na = norm(alpha);
  const double nm = norm(moved);
  out.gap = nm * nm - na * na;
  out.mnorm = norm(moment(bundle, moved));
  out.ratio = out.mnorm > 0.0 ? out.gap / out.mnorm : 0.0;
  return out;
}

}  // namespace hetorus
