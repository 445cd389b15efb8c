#include "hetorus/bundle_complex.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hetorus {

namespace {

void require(bool condition, const char* message) {
  if (!condition) throw std::invalid_argument(message);
}

double distance_to_integer(double v) { return std::abs(v - std::round(v)); }

}  // namespace

BundleSpec make_bundle_spec(int n, std::vector<std::vector<double>> characters) {
  require(n == 1 || n == 2, "unsupported dimension");
  require(!characters.empty(), "bundle needs at least one summand");
  BundleSpec spec;
  spec.n = n;
  spec.rank = static_cast<int>(characters.size());
  for (const auto& xi : characters) {
    require(static_cast<int>(xi.size()) == 2 * n,
            "character length must be 2n");
    for (double v : xi) require(v >= 0.0 && v < 1.0, "character entries must lie in [0,1)");
  }
  spec.characters = std::move(characters);

  spec.group_of.resize(spec.rank);
  for (int i = 0; i < spec.rank; ++i) {
    if (i == 0 || spec.characters[i] != spec.characters[i - 1]) {
      spec.group_offset.push_back(i);
      spec.multiplicities.push_back(0);
    }
    spec.group_of[i] = static_cast<int>(spec.multiplicities.size()) - 1;
    spec.multiplicities.back() += 1;
  }

  // Distinct groups must be genuinely non-isomorphic: equal characters placed
  // apart, or differences within rounding of an integer vector, are rejected.
  for (int i = 0; i < spec.rank; ++i) {
    for (int j = i + 1; j < spec.rank; ++j) {
      if (spec.group_of[i] == spec.group_of[j]) continue;
      if (spec.characters[i] == spec.characters[j])
        throw std::invalid_argument("equal characters must be contiguous");
      double max_dist = 0.0;
      for (int d = 0; d < 2 * n; ++d)
        max_dist = std::max(max_dist, distance_to_integer(spec.characters[i][d] -
                                                          spec.characters[j][d]));
      if (max_dist < 1e-9)
        throw std::invalid_argument("degenerate character difference between groups");
    }
  }
  return spec;
}

HarmonicClass zero_class(const BundleSpec& bundle, int q) {
  // q beyond the dimension yields the empty class (zero combos), so the
  // degree-two obstruction space exists uniformly on curves and surfaces.
  require(q >= 0 && q <= 2 * bundle.n, "degree out of range");
  HarmonicClass h;
  h.n = bundle.n;
  h.q = q;
  const int combos = binomial(bundle.n, q);
  h.blocks.resize(combos);
  for (int c = 0; c < combos; ++c)
    for (int g = 0; g < bundle.group_count(); ++g)
      h.blocks[c].push_back(Eigen::MatrixXcd::Zero(bundle.multiplicities[g],
                                                   bundle.multiplicities[g]));
  return h;
}

HarmonicClass random_class(const BundleSpec& bundle, int q, Rng& rng) {
  HarmonicClass h = zero_class(bundle, q);
  for (auto& combo : h.blocks)
    for (auto& block : combo)
      for (int i = 0; i < block.rows(); ++i)
        for (int j = 0; j < block.cols(); ++j) block(i, j) = rng.complex_normal();
  return h;
}

HarmonicClass operator+(HarmonicClass a, const HarmonicClass& b) {
  require(a.q == b.q && a.combos() == b.combos(), "class shape mismatch");
  for (int c = 0; c < a.combos(); ++c)
    for (size_t g = 0; g < a.blocks[c].size(); ++g) a.blocks[c][g] += b.blocks[c][g];
  return a;
}

HarmonicClass operator-(HarmonicClass a, const HarmonicClass& b) {
  require(a.q == b.q && a.combos() == b.combos(), "class shape mismatch");
  for (int c = 0; c < a.combos(); ++c)
    for (size_t g = 0; g < a.blocks[c].size(); ++g) a.blocks[c][g] -= b.blocks[c][g];
  return a;
}

HarmonicClass operator*(Complex scale, HarmonicClass a) {
  for (auto& combo : a.blocks)
    for (auto& block : combo) block *= scale;
  return a;
}

HarmonicClass dagger_class(HarmonicClass a) {
  for (auto& combo : a.blocks)
    for (auto& block : combo) block = block.adjoint().eval();
  return a;
}

Complex inner_product(const HarmonicClass& a, const HarmonicClass& b) {
  require(a.q == b.q && a.combos() == b.combos(), "class shape mismatch");
  Complex sum = 0.0;
  for (int c = 0; c < a.combos(); ++c)
    for (size_t g = 0; g < a.blocks[c].size(); ++g)
      sum += (a.blocks[c][g].adjoint() * b.blocks[c][g]).trace();
  return sum * form_metric_factor(0, a.q);
}

double norm(const HarmonicClass& a) {
  return std::sqrt(std::max(0.0, inner_product(a, a).real()));
}

GroupElement identity_element(const BundleSpec& bundle) {
  GroupElement e;
  for (int m : bundle.multiplicities)
    e.blocks.push_back(Eigen::MatrixXcd::Identity(m, m));
  return e;
}

GroupElement multiply(const GroupElement& a, const GroupElement& b) {
  require(a.blocks.size() == b.blocks.size(), "group shape mismatch");
  GroupElement out;
  for (size_t g = 0; g < a.blocks.size(); ++g)
    out.blocks.push_back(a.blocks[g] * b.blocks[g]);
  return out;
}

GroupElement inverse(const GroupElement& a) {
  GroupElement out;
  for (const auto& block : a.blocks) {
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(block);
    if (std::abs(lu.determinant()) < 1e-14)
      throw std::invalid_argument("singular group element");
    out.blocks.push_back(
        lu.solve(Eigen::MatrixXcd::Identity(block.rows(), block.cols())));
  }
  return out;
}

GroupElement dagger_element(const GroupElement& a) {
  GroupElement out;
  for (const auto& block : a.blocks) out.blocks.push_back(block.adjoint());
  return out;
}

GroupElement random_unitary_element(const BundleSpec& bundle, Rng& rng) {
  GroupElement out;
  for (int m : bundle.multiplicities) {
    Eigen::MatrixXcd z(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) z(i, j) = rng.complex_normal();
    Eigen::HouseholderQR<Eigen::MatrixXcd> qr(z);
    Eigen::MatrixXcd q = qr.householderQ();
    // Fix the phase ambiguity so draws are well distributed.
    Eigen::MatrixXcd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < m; ++i) {
      const Complex d = r(i, i);
      if (std::abs(d) > 0.0) q.col(i) *= d / std::abs(d);
    }
    out.blocks.push_back(q);
  }
  return out;
}

GroupElement exp_class(const HarmonicClass& a) {
  require(a.q == 0, "exp needs a degree zero class");
  GroupElement out;
  for (const auto& block : a.blocks[0]) out.blocks.push_back(block.exp());
  return out;
}

double det_normalize(GroupElement& a) {
  double worst = 0.0;
  for (auto& block : a.blocks) {
    const Complex det = block.determinant();
    if (std::abs(det) < 1e-14) throw std::invalid_argument("singular group element");
    const int m = static_cast<int>(block.rows());
    const Complex scale = std::exp(-std::log(det) / static_cast<double>(m));
    block *= scale;
    worst = std::max(worst, std::abs(scale - 1.0));
  }
  return worst;
}

double max_condition(const GroupElement& a) {
  double worst = 1.0;
  for (const auto& block : a.blocks) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(block);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 0.0) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, sv(0) / sv(sv.size() - 1));
  }
  return worst;
}

double norm_element(const GroupElement& a) {
  double sum = 0.0;
  for (const auto& block : a.blocks) sum += block.squaredNorm();
  return std::sqrt(sum);
}

SpectralContext::SpectralContext(const TorusGeometry& geometry,
                                 const BundleSpec& bundle)
    : geometry_(geometry), bundle_(bundle) {
  require(geometry.n == bundle.n, "geometry and bundle dimension mismatch");
  const int groups = bundle_.group_count();
  tables_.resize(static_cast<size_t>(groups) * groups);
  const int axes = geometry_.num_axes;
  std::vector<std::int64_t> strides(axes, 1);
  for (int d = axes - 2; d >= 0; --d) strides[d] = strides[d + 1] * geometry_.N;

  for (int gi = 0; gi < groups; ++gi) {
    const auto& xi = bundle_.characters[bundle_.group_offset[gi]];
    for (int gj = 0; gj < groups; ++gj) {
      const auto& xj = bundle_.characters[bundle_.group_offset[gj]];
      PairTable& table = tables_[static_cast<size_t>(gi) * groups + gj];
      table.w.assign(geometry_.n, std::vector<Complex>(geometry_.points));
      table.laplace.assign(geometry_.points, 0.0);
      // Raw differences keep twists exactly additive across entry products.
      std::vector<double> twist(axes);
      for (int d = 0; d < axes; ++d) twist[d] = xi[d] - xj[d];
      for (std::int64_t x = 0; x < geometry_.points; ++x) {
        double lap = 0.0;
        std::int64_t rest = x;
        // Decompose x into per-axis indices (last axis fastest).
        int idx[4] = {0, 0, 0, 0};
        for (int d = axes - 1; d >= 0; --d) {
          idx[d] = static_cast<int>(rest % geometry_.N);
          rest /= geometry_.N;
        }
        for (int a = 0; a < geometry_.n; ++a) {
          const double kx = geometry_.deriv_wavenumbers[idx[2 * a]] + twist[2 * a];
          const double ky =
              geometry_.deriv_wavenumbers[idx[2 * a + 1]] + twist[2 * a + 1];
          table.w[a][x] = Complex(kx, ky);
          lap += kx * kx + ky * ky;
        }
        table.laplace[x] = 2.0 * kPi * kPi * lap;
      }
    }
  }
}

int SpectralContext::harmonic_dimension(int q) const {
  int sum = 0;
  for (int m : bundle_.multiplicities) sum += m * m;
  return binomial(bundle_.n, q) * sum;
}

Complex SpectralContext::w_symbol(int i, int j, int a, std::int64_t x) const {
  return pair_table(i, j).w[a][x];
}

double SpectralContext::laplace_symbol(int i, int j, std::int64_t x) const {
  return pair_table(i, j).laplace[x];
}

namespace {

// Entry loop shared by the derivative kernels: rank-1 fields are treated as
// untwisted scalars, full-rank fields use per-entry twists.
struct EntryRange {
  int rank;
  bool scalar;
};

EntryRange entry_range(const SpectralContext& ctx, const Field& f) {
  if (f.rank() == 1) return {1, true};
  if (f.rank() != ctx.bundle().rank)
    throw std::invalid_argument("rank mismatch");
  return {f.rank(), false};
}

}  // namespace

Field SpectralContext::spectral_derivative(const Field& f, Derivative kind) const {
  const int n = geometry_.n;
  const int p = f.p();
  const int q = f.q();
  int p_out = p;
  int q_out = q;
  switch (kind) {
    case Derivative::kDbar: q_out = q + 1; break;
    case Derivative::kDbarStar: q_out = q - 1; break;
    case Derivative::kDel: p_out = p + 1; break;
    case Derivative::kDelStar: p_out = p - 1; break;
  }
  require(p_out >= 0 && p_out <= n && q_out >= 0 && q_out <= n,
          "degree out of range for derivative");
  const EntryRange entries = entry_range(*this, f);

  const Field fhat = fourier_forward(f);
  Field out_hat(geometry_, p_out, q_out, f.rank());

  const auto& holo = index_subsets(n, p);
  const auto& anti = index_subsets(n, q);
  const int anti_count = static_cast<int>(anti.size());
  const int anti_out_count = binomial(n, q_out);

  for (int c = 0; c < f.components(); ++c) {
    const auto& I = holo[c / anti_count];
    const auto& J = anti[c % anti_count];
    for (int a = 0; a < n; ++a) {
      int sign = 0;
      int c_out = -1;
      bool use_conj = false;
      Complex base(0.0, 0.0);
      std::vector<int> target;
      switch (kind) {
        case Derivative::kDbar: {
          sign = insertion_sign(a, J);
          if (sign == 0) continue;
          if (p % 2 != 0) sign = -sign;
          target = J;
          target.push_back(a);
          std::sort(target.begin(), target.end());
          c_out = (c / anti_count) * anti_out_count + subset_position(n, target);
          base = Complex(0.0, kPi);  // pi i W_a
          use_conj = false;
          break;
        }
        case Derivative::kDel: {
          sign = insertion_sign(a, I);
          if (sign == 0) continue;
          target = I;
          target.push_back(a);
          std::sort(target.begin(), target.end());
          c_out = subset_position(n, target) * anti_count + (c % anti_count);
          base = Complex(0.0, kPi);  // pi i conj(W_a)
          use_conj = true;
          break;
        }
        case Derivative::kDbarStar: {
          if (insertion_sign(a, J) != 0) continue;  // needs a in J
          target.clear();
          for (int v : J)
            if (v != a) target.push_back(v);
          sign = insertion_sign(a, target);
          if (p % 2 != 0) sign = -sign;
          c_out = (c / anti_count) * anti_out_count + subset_position(n, target);
          base = Complex(0.0, -2.0 * kPi);  // -2 pi i conj(W_a)
          use_conj = true;
          break;
        }
        case Derivative::kDelStar: {
          if (insertion_sign(a, I) != 0) continue;  // needs a in I
          target.clear();
          for (int v : I)
            if (v != a) target.push_back(v);
          sign = insertion_sign(a, target);
          c_out = subset_position(n, target) * anti_count + (c % anti_count);
          base = Complex(0.0, -2.0 * kPi);  // -2 pi i W_a
          use_conj = false;
          break;
        }
      }
      const Complex coef = base * static_cast<double>(sign);
      for (int i = 0; i < entries.rank; ++i) {
        for (int j = 0; j < entries.rank; ++j) {
          const auto& table = entries.scalar ? tables_[0] : pair_table(i, j);
          const Complex* w = table.w[a].data();
          const Complex* src = fhat.plane(c, i, j);
          Complex* dst = out_hat.plane(c_out, i, j);
          if (use_conj) {
            for (std::int64_t x = 0; x < geometry_.points; ++x)
              dst[x] += coef * std::conj(w[x]) * src[x];
          } else {
            for (std::int64_t x = 0; x < geometry_.points; ++x)
              dst[x] += coef * w[x] * src[x];
          }
        }
      }
    }
  }
  return fourier_inverse(out_hat);
}

Field SpectralContext::dbar0(const Field& f) const {
  return spectral_derivative(f, Derivative::kDbar);
}

Field SpectralContext::dbar0_star(const Field& f) const {
  return spectral_derivative(f, Derivative::kDbarStar);
}

Field SpectralContext::del0(const Field& f) const {
  return spectral_derivative(f, Derivative::kDel);
}

Field SpectralContext::del0_star(const Field& f) const {
  return spectral_derivative(f, Derivative::kDelStar);
}

Field SpectralContext::laplace_dbar(const Field& f) const {
  const EntryRange entries = entry_range(*this, f);
  Field fhat = fourier_forward(f);
  for (int c = 0; c < fhat.components(); ++c) {
    for (int i = 0; i < entries.rank; ++i) {
      for (int j = 0; j < entries.rank; ++j) {
        const auto& table = entries.scalar ? tables_[0] : pair_table(i, j);
        Complex* v = fhat.plane(c, i, j);
        for (std::int64_t x = 0; x < geometry_.points; ++x) v[x] *= table.laplace[x];
      }
    }
  }
  return fourier_inverse(fhat);
}

Field SpectralContext::dbar(const Field& a01, const Field& f) const {
  Field out = dbar0(f);
  if (!a01.empty()) out += wedge(a01, f);
  return out;
}

Field SpectralContext::dbar_end(const Field& a01, const Field& f) const {
  Field out = dbar0(f);
  if (!a01.empty()) {
    out += wedge(a01, f);
    const double sign = (f.q() % 2 == 0) ? -1.0 : 1.0;
    out.axpy(Complex(sign, 0.0), wedge(f, a01));
  }
  return out;
}

Field SpectralContext::wedge_left_adjoint(const Field& a01, const Field& v) const {
  require(a01.p() == 0 && a01.q() == 1, "multiplier must be a (0,1)-form");
  require(a01.rank() == v.rank(), "rank mismatch");
  require(v.q() >= 1, "cannot lower degree below zero");
  const int n = geometry_.n;
  Field out(geometry_, v.p(), v.q() - 1, v.rank());
  const auto& anti_out = index_subsets(n, v.q() - 1);
  const int anti_in_count = binomial(n, v.q());
  const int anti_out_count = static_cast<int>(anti_out.size());
  const int r = v.rank();
  const double left_parity = (v.p() % 2 == 0) ? 1.0 : -1.0;
  // (A_L* v)_K = 2 (-1)^p sum_{b not in K} eps(b,K) A_b^dagger v_{K u b}.
  for (int c_out = 0; c_out < out.components(); ++c_out) {
    const auto& K = anti_out[c_out % anti_out_count];
    const int hi = c_out / anti_out_count;
    for (int b = 0; b < n; ++b) {
      const int sign = insertion_sign(b, K);
      if (sign == 0) continue;
      std::vector<int> target = K;
      target.push_back(b);
      std::sort(target.begin(), target.end());
      const int c_in = hi * anti_in_count + subset_position(n, target);
      const double scale = 2.0 * left_parity * sign;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int k = 0; k < r; ++k) {
            // (A_b^dagger)_{ij} = conj(A_b)_{ji}
            const Complex* am = a01.plane(b, j, i);
            const Complex* vm = v.plane(c_in, j, k);
            Complex* om = out.plane(c_out, i, k);
            for (std::int64_t x = 0; x < geometry_.points; ++x)
              om[x] += scale * std::conj(am[x]) * vm[x];
          }
    }
  }
  return out;
}

Field SpectralContext::wedge_right_adjoint(const Field& a01, const Field& v) const {
  require(a01.p() == 0 && a01.q() == 1, "multiplier must be a (0,1)-form");
  require(a01.rank() == v.rank(), "rank mismatch");
  require(v.q() >= 1, "cannot lower degree below zero");
  const int n = geometry_.n;
  Field out(geometry_, v.p(), v.q() - 1, v.rank());
  const auto& anti_out = index_subsets(n, v.q() - 1);
  const int anti_in_count = binomial(n, v.q());
  const int anti_out_count = static_cast<int>(anti_out.size());
  const int r = v.rank();
  const double parity = (out.q() % 2 == 0) ? 1.0 : -1.0;
  // (A_R* v)_K = 2 (-1)^{q_out} sum_{b not in K} eps(b,K) v_{K u b} A_b^dagger.
  for (int c_out = 0; c_out < out.components(); ++c_out) {
    const auto& K = anti_out[c_out % anti_out_count];
    const int hi = c_out / anti_out_count;
    for (int b = 0; b < n; ++b) {
      const int sign = insertion_sign(b, K);
      if (sign == 0) continue;
      std::vector<int> target = K;
      target.push_back(b);
      std::sort(target.begin(), target.end());
      const int c_in = hi * anti_in_count + subset_position(n, target);
      const double scale = 2.0 * parity * sign;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int k = 0; k < r; ++k) {
            const Complex* vm = v.plane(c_in, i, j);
            const Complex* am = a01.plane(b, k, j);  // (A_b^dagger)_{jk}
            Complex* om = out.plane(c_out, i, k);
            for (std::int64_t x = 0; x < geometry_.points; ++x)
              om[x] += scale * vm[x] * std::conj(am[x]);
          }
    }
  }
  return out;
}

Field SpectralContext::dbar_end_star(const Field& a01, const Field& f) const {
  Field out = dbar0_star(f);
  if (!a01.empty()) {
    out += wedge_left_adjoint(a01, f);
    const double sign = (out.q() % 2 == 0) ? -1.0 : 1.0;
    out.axpy(Complex(sign, 0.0), wedge_right_adjoint(a01, f));
  }
  return out;
}

HarmonicClass SpectralContext::harmonic_project(const Field& f) const {
  require(f.p() == 0, "harmonic classes live in degree (0,q)");
  require(f.rank() == bundle_.rank, "rank mismatch");
  HarmonicClass h = zero_class(bundle_, f.q());
  const double weight = geometry_.volume_weight;
  for (int c = 0; c < f.components(); ++c) {
    for (int g = 0; g < bundle_.group_count(); ++g) {
      const int off = bundle_.group_offset[g];
      const int m = bundle_.multiplicities[g];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          const Complex* v = f.plane(c, off + i, off + j);
          Complex mean = 0.0;
          for (std::int64_t x = 0; x < geometry_.points; ++x) mean += v[x];
          h.blocks[c][g](i, j) = mean * weight;
        }
    }
  }
  return h;
}

Field SpectralContext::embed(const HarmonicClass& h) const {
  require(h.n == bundle_.n, "class dimension mismatch");
  Field f(geometry_, 0, h.q, bundle_.rank);
  for (int c = 0; c < h.combos(); ++c) {
    for (int g = 0; g < bundle_.group_count(); ++g) {
      const int off = bundle_.group_offset[g];
      const int m = bundle_.multiplicities[g];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          const Complex value = h.blocks[c][g](i, j);
          if (value == Complex(0.0, 0.0)) continue;
          Complex* v = f.plane(c, off + i, off + j);
          for (std::int64_t x = 0; x < geometry_.points; ++x) v[x] = value;
        }
    }
  }
  return f;
}

Field SpectralContext::remove_harmonic(const Field& f) const {
  return f - embed(harmonic_project(f));
}

GreenResult SpectralContext::green_solve(const Field& rhs) const {
  require(rhs.p() == 0, "green solve expects degree (0,q)");
  require(rhs.rank() == bundle_.rank, "rank mismatch");
  Field rhat = fourier_forward(rhs);
  GreenResult result;
  result.discarded = zero_class(bundle_, rhs.q());
  const double metric = form_metric_factor(0, rhs.q());
  for (int c = 0; c < rhat.components(); ++c) {
    for (int i = 0; i < bundle_.rank; ++i) {
      for (int j = 0; j < bundle_.rank; ++j) {
        const PairTable& table = pair_table(i, j);
        Complex* v = rhat.plane(c, i, j);
        if (untwisted(i, j)) {
          const int g = bundle_.group_of[i];
          const int off = bundle_.group_offset[g];
          result.discarded.blocks[c][g](i - off, j - off) = v[0];
          v[0] = 0.0;
          for (std::int64_t x = 1; x < geometry_.points; ++x) {
            if (table.laplace[x] == 0.0) {
              result.degenerate_energy += metric * std::norm(v[x]);
              v[x] = 0.0;
            } else {
              v[x] /= table.laplace[x];
            }
          }
        } else {
          for (std::int64_t x = 0; x < geometry_.points; ++x)
            v[x] /= table.laplace[x];
        }
      }
    }
  }
  result.solution = fourier_inverse(rhat);
  return result;
}

Field SpectralContext::scrub_degenerate(const Field& f) const {
  const EntryRange entries = entry_range(*this, f);
  Field fhat = fourier_forward(f);
  for (int c = 0; c < fhat.components(); ++c) {
    for (int i = 0; i < entries.rank; ++i) {
      for (int j = 0; j < entries.rank; ++j) {
        if (!entries.scalar && !untwisted(i, j)) continue;
        const auto& table = entries.scalar ? tables_[0] : pair_table(i, j);
        Complex* v = fhat.plane(c, i, j);
        for (std::int64_t x = 1; x < geometry_.points; ++x)
          if (table.laplace[x] == 0.0) v[x] = 0.0;
      }
    }
  }
  return fourier_inverse(fhat);
}

SpectralContext::Curvature SpectralContext::curvature(const Field& a01) const {
  require(a01.p() == 0 && a01.q() == 1, "potential must be a (0,1)-form");
  const Field a10 = -adjoint_form(a01);
  Curvature f;
  // On the elliptic curve there are no (0,2) or (2,0) degrees; those
  // curvature components vanish identically and stay empty.
  if (geometry_.n >= 2) {
    f.f02 = dbar0(a01) + wedge(a01, a01);
    f.f20 = del0(a10) + wedge(a10, a10);
  }
  f.f11 = del0(a01) + dbar0(a10) + wedge(a10, a01) + wedge(a01, a10);
  return f;
}

Field SpectralContext::central_curvature(const Field& a01) const {
  return Complex(0.0, 1.0) * lambda_contract(curvature(a01).f11);
}

double SpectralContext::curvature_norm(const Curvature& f) const {
  const double n20 = norm(f.f20);
  const double n11 = norm(f.f11);
  const double n02 = norm(f.f02);
  return std::sqrt(n20 * n20 + n11 * n11 + n02 * n02);
}

Field SpectralContext::gauge_act(const Field& g, const Field& a01) const {
  require(g.p() == 0 && g.q() == 0, "gauge field must have degree (0,0)");
  const Field ginv = pointwise_inverse(g);
  Field out = wedge(wedge(g, a01), ginv);
  out -= wedge(dbar0(g), ginv);
  return out;
}

Field SpectralContext::gauge_act_10(const Field& g, const Field& a10) const {
  require(g.p() == 0 && g.q() == 0, "gauge field must have degree (0,0)");
  const Field gs = dagger(g);
  const Field gsinv = pointwise_inverse(gs);
  Field out = wedge(wedge(gsinv, a10), gs);
  out += wedge(gsinv, del0(gs));
  return out;
}

namespace {

// Preconditioned conjugate gradient for hermitian positive definite operators.
template <typename Op, typename Pre>
Field pcg_solve(const Field& b, Op&& apply, Pre&& precond, double tolerance,
                int cap, int* iterations_out) {
  Field x(b.geometry(), b.p(), b.q(), b.rank());
  Field r = b;
  Field z = precond(r);
  Field p = z;
  double rz = inner_product(r, z).real();
  const double bnorm = std::max(norm(b), 1e-300);
  int iter = 0;
  for (; iter < cap; ++iter) {
    if (norm(r) / bnorm < tolerance) break;
    const Field ap = apply(p);
    const double pap = inner_product(p, ap).real();
    if (pap <= 0.0) break;
    const double alpha = rz / pap;
    x.axpy(Complex(alpha, 0.0), p);
    r.axpy(Complex(-alpha, 0.0), ap);
    z = precond(r);
    const double rz_new = inner_product(r, z).real();
    const double beta = rz_new / rz;
    rz = rz_new;
    Field p_new = z;
    p_new.axpy(Complex(beta, 0.0), p);
    p = std::move(p_new);
  }
  if (iterations_out != nullptr) *iterations_out = iter;
  return x;
}

}  // namespace

PerturbedSpace SpectralContext::perturbed_harmonic_space(
    int q, const Field& a01, int count, Rng& rng, int max_iterations,
    double tolerance) const {
  require(q >= 0 && q <= geometry_.n, "degree out of range");
  require(count >= 1, "need at least one vector");
  const double shift = 0.05;

  auto apply_h = [&](const Field& f) {
    Field out(geometry_, f.p(), f.q(), f.rank());
    if (f.q() < geometry_.n) out += dbar_end_star(a01, dbar_end(a01, f));
    if (f.q() > 0) out += dbar_end(a01, dbar_end_star(a01, f));
    return out;
  };
  auto apply_shifted = [&](const Field& f) {
    Field out = apply_h(f);
    out.axpy(Complex(shift, 0.0), f);
    return out;
  };
  auto precond = [&](const Field& f) {
    Field fhat = fourier_forward(f);
    for (int c = 0; c < fhat.components(); ++c)
      for (int i = 0; i < bundle_.rank; ++i)
        for (int j = 0; j < bundle_.rank; ++j) {
          const PairTable& table = pair_table(i, j);
          Complex* v = fhat.plane(c, i, j);
          for (std::int64_t x = 0; x < geometry_.points; ++x)
            v[x] /= (table.laplace[x] + shift);
        }
    return fourier_inverse(fhat);
  };

  // Seed with the flat harmonic basis, then random band-limited directions.
  std::vector<Field> basis;
  {
    HarmonicClass unit = zero_class(bundle_, q);
    for (int c = 0; c < unit.combos() && static_cast<int>(basis.size()) < count; ++c)
      for (int g = 0; g < bundle_.group_count(); ++g)
        for (int i = 0; i < bundle_.multiplicities[g]; ++i)
          for (int j = 0; j < bundle_.multiplicities[g]; ++j) {
            if (static_cast<int>(basis.size()) >= count) break;
            unit.blocks[c][g](i, j) = 1.0;
            basis.push_back(embed(unit));
            unit.blocks[c][g](i, j) = 0.0;
          }
    const int kmax = std::min(3, geometry_.N / 2 - 1);
    while (static_cast<int>(basis.size()) < count)
      basis.push_back(random_band_limited(geometry_, 0, q, bundle_.rank, kmax, rng));
  }

  auto orthonormalize = [&](std::vector<Field>& vs) {
    for (size_t i = 0; i < vs.size(); ++i) {
      for (size_t j = 0; j < i; ++j)
        vs[i].axpy(-inner_product(vs[j], vs[i]), vs[j]);
      const double len = norm(vs[i]);
      if (len < 1e-12) {
        const int kmax = std::min(3, geometry_.N / 2 - 1);
        vs[i] = random_band_limited(geometry_, 0, q, bundle_.rank, kmax, rng);
        const double fresh = norm(vs[i]);
        vs[i] *= Complex(1.0 / fresh, 0.0);
        for (size_t j = 0; j < i; ++j)
          vs[i].axpy(-inner_product(vs[j], vs[i]), vs[j]);
        const double len2 = norm(vs[i]);
        vs[i] *= Complex(1.0 / std::max(len2, 1e-12), 0.0);
      } else {
        vs[i] *= Complex(1.0 / len, 0.0);
      }
    }
  };
  for (Field& v : basis) v = scrub_degenerate(v);
  orthonormalize(basis);

  PerturbedSpace out;
  for (int iter = 1; iter <= max_iterations; ++iter) {
    std::vector<Field> next;
    next.reserve(basis.size());
    // Scrubbing each solve keeps roundoff leakage into the excluded
    // zero-symbol modes from being amplified by the inverse iteration.
    for (const Field& v : basis)
      next.push_back(scrub_degenerate(
          pcg_solve(v, apply_shifted, precond, 1e-12, 200, nullptr)));
    orthonormalize(next);

    std::vector<Field> images;
    images.reserve(next.size());
    for (const Field& v : next) images.push_back(apply_h(v));
    Eigen::MatrixXcd gram(count, count);
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < count; ++j)
        gram(i, j) = inner_product(next[i], images[j]);
    gram = Complex(0.5, 0.0) * (gram + gram.adjoint().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(gram);

    std::vector<Field> rotated;
    std::vector<Field> rotated_images;
    for (int i = 0; i < count; ++i) {
      Field v(geometry_, 0, q, bundle_.rank);
      Field w(geometry_, 0, q, bundle_.rank);
      for (int j = 0; j < count; ++j) {
        v.axpy(es.eigenvectors()(j, i), next[j]);
        w.axpy(es.eigenvectors()(j, i), images[j]);
      }
      rotated.push_back(std::move(v));
      rotated_images.push_back(std::move(w));
    }

    double worst = 0.0;
    for (int i = 0; i < count; ++i) {
      Field residual = rotated_images[i];
      residual.axpy(Complex(-es.eigenvalues()(i), 0.0), rotated[i]);
      worst = std::max(worst,
                       norm(residual) / (1.0 + std::abs(es.eigenvalues()(i))));
    }
    basis = std::move(rotated);
    if (worst < tolerance) {
      out.basis = std::move(basis);
      out.singular_values.resize(count);
      for (int i = 0; i < count; ++i)
        out.singular_values[i] = std::sqrt(std::max(0.0, es.eigenvalues()(i)));
      out.iterations = iter;
      return out;
    }
  }
  throw std::runtime_error("perturbed harmonic space iteration did not converge");
}

}  // namespace hetorus
