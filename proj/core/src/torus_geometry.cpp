#include "hetorus/torus_geometry.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <stdexcept>
#include <unsupported/Eigen/MatrixFunctions>

namespace hetorus {

namespace {

constexpr int kMinResolution = 8;

std::int64_t int_pow(std::int64_t base, int exponent) {
  std::int64_t out = 1;
  for (int i = 0; i < exponent; ++i) out *= base;
  return out;
}

void require(bool condition, const char* message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace

TorusGeometry make_geometry(int n, int N) {
  require(n == 1 || n == 2, "unsupported dimension");
  require(N >= kMinResolution && N % 2 == 0,
          "resolution must be even and at least 8");
  TorusGeometry geometry;
  geometry.n = n;
  geometry.N = N;
  geometry.num_axes = 2 * n;
  geometry.points = int_pow(N, 2 * n);
  geometry.volume_weight = 1.0 / static_cast<double>(geometry.points);
  geometry.wavenumbers.resize(N);
  geometry.deriv_wavenumbers.resize(N);
  for (int t = 0; t < N; ++t) {
    const int k = t < N / 2 ? t : t - N;
    geometry.wavenumbers[t] = k;
    geometry.deriv_wavenumbers[t] = (t == N / 2) ? 0.0 : static_cast<double>(k);
  }
  return geometry;
}

int binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  int out = 1;
  for (int i = 0; i < k; ++i) out = out * (n - i) / (i + 1);
  return out;
}

const std::vector<std::vector<int>>& index_subsets(int n, int k) {
  static const std::vector<std::vector<std::vector<std::vector<int>>>> tables =
      [] {
        std::vector<std::vector<std::vector<std::vector<int>>>> all(3);
        for (int n_ = 0; n_ <= 2; ++n_) {
          all[n_].resize(n_ + 1);
          for (int mask = 0; mask < (1 << n_); ++mask) {
            std::vector<int> subset;
            for (int i = 0; i < n_; ++i)
              if (mask & (1 << i)) subset.push_back(i);
            all[n_][subset.size()].push_back(subset);
          }
          for (auto& level : all[n_]) std::sort(level.begin(), level.end());
        }
        return all;
      }();
  require(n >= 0 && n <= 2 && k >= 0 && k <= n, "subset table out of range");
  return tables[n][k];
}

int subset_position(int n, const std::vector<int>& subset) {
  const auto& table = index_subsets(n, static_cast<int>(subset.size()));
  for (int i = 0; i < static_cast<int>(table.size()); ++i)
    if (table[i] == subset) return i;
  throw std::invalid_argument("subset not found");
}

int merge_sign(const std::vector<int>& a, const std::vector<int>& b,
               std::vector<int>* merged) {
  std::vector<int> joined = a;
  joined.insert(joined.end(), b.begin(), b.end());
  // Count inversions of the concatenation; repeated index means wedge zero.
  int inversions = 0;
  for (size_t i = 0; i < joined.size(); ++i) {
    for (size_t j = i + 1; j < joined.size(); ++j) {
      if (joined[i] == joined[j]) return 0;
      if (joined[i] > joined[j]) ++inversions;
    }
  }
  if (merged != nullptr) {
    std::sort(joined.begin(), joined.end());
    *merged = std::move(joined);
  }
  return (inversions % 2 == 0) ? 1 : -1;
}

int insertion_sign(int value, const std::vector<int>& sorted_set) {
  int below = 0;
  for (int s : sorted_set) {
    if (s == value) return 0;
    if (s < value) ++below;
  }
  return (below % 2 == 0) ? 1 : -1;
}

Field::Field(const TorusGeometry& geometry, int p, int q, int rank)
    : geometry_(geometry), p_(p), q_(q), rank_(rank) {
  require(p >= 0 && p <= geometry.n && q >= 0 && q <= geometry.n,
          "degree out of range");
  require(rank >= 1, "rank must be positive");
  const int comps = binomial(geometry.n, p) * binomial(geometry.n, q);
  data_.assign(comps, std::vector<Complex>(
                          static_cast<std::size_t>(rank) * rank *
                          static_cast<std::size_t>(geometry.points)));
}

bool Field::same_shape(const Field& other) const {
  return geometry_.same_grid(other.geometry_) && p_ == other.p_ &&
         q_ == other.q_ && rank_ == other.rank_;
}

Field& Field::operator+=(const Field& other) {
  require(same_shape(other), "shape mismatch");
  for (int c = 0; c < components(); ++c)
    for (size_t i = 0; i < data_[c].size(); ++i) data_[c][i] += other.data_[c][i];
  return *this;
}

Field& Field::operator-=(const Field& other) {
  require(same_shape(other), "shape mismatch");
  for (int c = 0; c < components(); ++c)
    for (size_t i = 0; i < data_[c].size(); ++i) data_[c][i] -= other.data_[c][i];
  return *this;
}

Field& Field::operator*=(Complex scale) {
  for (auto& comp : data_)
    for (auto& v : comp) v *= scale;
  return *this;
}

Field& Field::axpy(Complex scale, const Field& other) {
  require(same_shape(other), "shape mismatch");
  for (int c = 0; c < components(); ++c)
    for (size_t i = 0; i < data_[c].size(); ++i)
      data_[c][i] += scale * other.data_[c][i];
  return *this;
}

Field operator+(Field lhs, const Field& rhs) { return lhs += rhs; }
Field operator-(Field lhs, const Field& rhs) { return lhs -= rhs; }
Field operator*(Complex scale, Field f) { return f *= scale; }
Field operator-(Field f) { return f *= Complex(-1.0, 0.0); }

Complex inner_product(const Field& f, const Field& g) {
  require(f.same_shape(g), "shape mismatch");
  Complex sum = 0.0;
  for (int c = 0; c < f.components(); ++c) {
    const auto& a = f.component(c);
    const auto& b = g.component(c);
    Complex acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
    sum += acc;
  }
  return sum * form_metric_factor(f.p(), f.q()) * f.geometry().volume_weight;
}

double norm(const Field& f) {
  double sum = 0.0;
  for (int c = 0; c < f.components(); ++c)
    for (const Complex& v : f.component(c)) sum += std::norm(v);
  return std::sqrt(sum * form_metric_factor(f.p(), f.q()) *
                   f.geometry().volume_weight);
}

namespace {

// Pointwise squared metric norm accumulated over components and entries.
std::vector<double> pointwise_sq(const Field& f) {
  const std::int64_t points = f.points();
  std::vector<double> acc(static_cast<std::size_t>(points), 0.0);
  const double factor = form_metric_factor(f.p(), f.q());
  const int planes = f.rank() * f.rank();
  for (int c = 0; c < f.components(); ++c) {
    const Complex* base = f.component(c).data();
    for (int pl = 0; pl < planes; ++pl) {
      const Complex* v = base + static_cast<std::int64_t>(pl) * points;
      for (std::int64_t x = 0; x < points; ++x) acc[x] += factor * std::norm(v[x]);
    }
  }
  return acc;
}

}  // namespace

double sup_norm(const Field& f) {
  const auto acc = pointwise_sq(f);
  double best = 0.0;
  for (double v : acc) best = std::max(best, v);
  return std::sqrt(best);
}

double lp_norm(const Field& f, double p) {
  const auto acc = pointwise_sq(f);
  double sum = 0.0;
  for (double v : acc) sum += std::pow(v, 0.5 * p);
  return std::pow(sum * f.geometry().volume_weight, 1.0 / p);
}

Field wedge(const Field& f, const Field& g) {
  require(f.geometry().same_grid(g.geometry()), "geometry mismatch");
  require(f.rank() == g.rank(), "rank mismatch");
  const int n = f.geometry().n;
  const int p_out = f.p() + g.p();
  const int q_out = f.q() + g.q();
  require(p_out <= n && q_out <= n, "degree out of range");
  Field out(f.geometry(), p_out, q_out, f.rank());

  const auto& holo_f = index_subsets(n, f.p());
  const auto& anti_f = index_subsets(n, f.q());
  const auto& holo_g = index_subsets(n, g.p());
  const auto& anti_g = index_subsets(n, g.q());
  const int anti_f_count = static_cast<int>(anti_f.size());
  const int anti_g_count = static_cast<int>(anti_g.size());
  const int anti_out_count = binomial(n, q_out);
  const int r = f.rank();
  const std::int64_t points = f.points();
  const int swap_parity = (g.p() * f.q()) % 2;

  for (int c1 = 0; c1 < f.components(); ++c1) {
    const auto& i1 = holo_f[c1 / anti_f_count];
    const auto& j1 = anti_f[c1 % anti_f_count];
    for (int c2 = 0; c2 < g.components(); ++c2) {
      const auto& i2 = holo_g[c2 / anti_g_count];
      const auto& j2 = anti_g[c2 % anti_g_count];
      std::vector<int> holo_merged;
      std::vector<int> anti_merged;
      const int sign_holo = merge_sign(i1, i2, &holo_merged);
      if (sign_holo == 0) continue;
      const int sign_anti = merge_sign(j1, j2, &anti_merged);
      if (sign_anti == 0) continue;
      int sign = sign_holo * sign_anti;
      if (swap_parity != 0) sign = -sign;
      const int c_out = subset_position(n, holo_merged) * anti_out_count +
                        subset_position(n, anti_merged);
      const Complex scale(static_cast<double>(sign), 0.0);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
          const Complex* a = f.plane(c1, i, j);
          for (int k = 0; k < r; ++k) {
            const Complex* b = g.plane(c2, j, k);
            Complex* o = out.plane(c_out, i, k);
            for (std::int64_t x = 0; x < points; ++x) o[x] += scale * a[x] * b[x];
          }
        }
      }
    }
  }
  return out;
}

Field lambda_contract(const Field& f) {
  require(f.p() == 1 && f.q() == 1, "degree mismatch");
  const int n = f.geometry().n;
  Field out(f.geometry(), 0, 0, f.rank());
  const int planes = f.rank() * f.rank();
  const std::int64_t points = f.points();
  for (int a = 0; a < n; ++a) {
    const int c = a * n + a;
    const Complex* src = f.component(c).data();
    Complex* dst = out.component(0).data();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(planes) * points; ++i)
      dst[i] += kLambdaDiagonal * src[i];
  }
  return out;
}

Field adjoint_form(const Field& f) {
  const int n = f.geometry().n;
  Field out(f.geometry(), f.q(), f.p(), f.rank());
  const auto& holo = index_subsets(n, f.p());
  const auto& anti = index_subsets(n, f.q());
  const int anti_count = static_cast<int>(anti.size());
  const int holo_count = static_cast<int>(holo.size());
  const double sign = ((f.p() * f.q()) % 2 == 0) ? 1.0 : -1.0;
  const int r = f.rank();
  const std::int64_t points = f.points();
  for (int c = 0; c < f.components(); ++c) {
    const int hi = c / anti_count;
    const int ai = c % anti_count;
    const int c_out = ai * holo_count + hi;
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const Complex* src = f.plane(c, j, i);
        Complex* dst = out.plane(c_out, i, j);
        for (std::int64_t x = 0; x < points; ++x)
          dst[x] = sign * std::conj(src[x]);
      }
    }
  }
  return out;
}

Field dagger(const Field& f) {
  Field out(f.geometry(), f.p(), f.q(), f.rank());
  const int r = f.rank();
  const std::int64_t points = f.points();
  for (int c = 0; c < f.components(); ++c)
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j) {
        const Complex* src = f.plane(c, j, i);
        Complex* dst = out.plane(c, i, j);
        for (std::int64_t x = 0; x < points; ++x) dst[x] = std::conj(src[x]);
      }
  return out;
}

Field trace_field(const Field& f) {
  Field out(f.geometry(), f.p(), f.q(), 1);
  const std::int64_t points = f.points();
  for (int c = 0; c < f.components(); ++c) {
    Complex* dst = out.plane(c, 0, 0);
    for (int i = 0; i < f.rank(); ++i) {
      const Complex* src = f.plane(c, i, i);
      for (std::int64_t x = 0; x < points; ++x) dst[x] += src[x];
    }
  }
  return out;
}

Complex integral_trace(const Field& f) {
  require(f.components() == 1, "integral trace needs a single component");
  Complex sum = 0.0;
  for (int i = 0; i < f.rank(); ++i) {
    const Complex* src = f.plane(0, i, i);
    for (std::int64_t x = 0; x < f.points(); ++x) sum += src[x];
  }
  return sum * f.geometry().volume_weight;
}

Field identity_field(const TorusGeometry& geometry, int rank) {
  Field out(geometry, 0, 0, rank);
  for (int i = 0; i < rank; ++i) {
    Complex* dst = out.plane(0, i, i);
    for (std::int64_t x = 0; x < geometry.points; ++x) dst[x] = 1.0;
  }
  return out;
}

namespace {

struct PlanKey {
  int axes;
  int N;
  int sign;
  bool operator<(const PlanKey& other) const {
    if (axes != other.axes) return axes < other.axes;
    if (N != other.N) return N < other.N;
    return sign < other.sign;
  }
};

std::mutex g_plan_mutex;  // NOLINT: guards the process-wide FFTW plan cache

fftw_plan acquired_plan(int axes, int N, int sign) {
  static std::map<PlanKey, fftw_plan>* cache = new std::map<PlanKey, fftw_plan>;
  static std::vector<Complex>* scratch = new std::vector<Complex>;
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  const PlanKey key{axes, N, sign};
  auto it = cache->find(key);
  if (it != cache->end()) return it->second;
  std::int64_t size = 1;
  std::vector<int> dims(axes, N);
  for (int i = 0; i < axes; ++i) size *= N;
  if (static_cast<std::int64_t>(scratch->size()) < size) scratch->resize(size);
  fftw_complex* buffer = reinterpret_cast<fftw_complex*>(scratch->data());
  fftw_plan plan = fftw_plan_dft(axes, dims.data(), buffer, buffer, sign,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (plan == nullptr) throw std::runtime_error("fftw plan creation failed");
  (*cache)[key] = plan;
  return plan;
}

void transform_in_place(Field& f, int sign) {
  fftw_plan plan = acquired_plan(f.geometry().num_axes, f.geometry().N, sign);
  const std::int64_t points = f.points();
  const int planes = f.rank() * f.rank();
  for (int c = 0; c < f.components(); ++c) {
    Complex* base = f.component(c).data();
    for (int pl = 0; pl < planes; ++pl) {
      fftw_complex* ptr =
          reinterpret_cast<fftw_complex*>(base + static_cast<std::int64_t>(pl) * points);
      fftw_execute_dft(plan, ptr, ptr);
    }
  }
}

}  // namespace

Field fourier_forward(const Field& f) {
  Field out = f;
  transform_in_place(out, FFTW_FORWARD);
  out *= Complex(out.geometry().volume_weight, 0.0);
  return out;
}

Field fourier_inverse(const Field& f) {
  Field out = f;
  transform_in_place(out, FFTW_BACKWARD);
  return out;
}

Field fourier_roundtrip(const Field& f) { return fourier_inverse(fourier_forward(f)); }

Field random_band_limited(const TorusGeometry& geometry, int p, int q, int rank,
                          int kmax, Rng& rng) {
  require(kmax >= 0 && kmax < geometry.N / 2, "band limit must stay below Nyquist");
  Field spectral(geometry, p, q, rank);
  // Allowed per-axis indices, in increasing index order (draw order is fixed).
  std::vector<int> allowed;
  for (int t = 0; t < geometry.N; ++t)
    if (std::abs(geometry.wavenumbers[t]) <= kmax && t != geometry.N / 2)
      allowed.push_back(t);
  std::sort(allowed.begin(), allowed.end());
  const int axes = geometry.num_axes;
  std::vector<std::int64_t> strides(axes, 1);
  for (int d = axes - 2; d >= 0; --d) strides[d] = strides[d + 1] * geometry.N;

  std::vector<int> cursor(axes, 0);
  const int planes = rank * rank;
  for (int c = 0; c < spectral.components(); ++c) {
    Complex* base = spectral.component(c).data();
    for (int pl = 0; pl < planes; ++pl) {
      Complex* plane = base + static_cast<std::int64_t>(pl) * geometry.points;
      std::fill(cursor.begin(), cursor.end(), 0);
      while (true) {
        std::int64_t x = 0;
        for (int d = 0; d < axes; ++d) x += strides[d] * allowed[cursor[d]];
        plane[x] = rng.complex_normal();
        int d = axes - 1;
        while (d >= 0 && ++cursor[d] == static_cast<int>(allowed.size())) {
          cursor[d] = 0;
          --d;
        }
        if (d < 0) break;
      }
    }
  }
  return fourier_inverse(spectral);
}

namespace {

Eigen::MatrixXcd gather_point(const Field& f, int c, std::int64_t x) {
  const int r = f.rank();
  Eigen::MatrixXcd m(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) m(i, j) = f.at(c, i, j, x);
  return m;
}

void scatter_point(const Eigen::MatrixXcd& m, Field& f, int c, std::int64_t x) {
  for (int i = 0; i < f.rank(); ++i)
    for (int j = 0; j < f.rank(); ++j) f.at(c, i, j, x) = m(i, j);
}

}  // namespace

Field pointwise_exp(const Field& f) {
  require(f.p() == 0 && f.q() == 0, "pointwise exp needs degree (0,0)");
  Field out(f.geometry(), 0, 0, f.rank());
  const std::int64_t points = f.points();
  if (f.rank() == 1) {
    const Complex* src = f.plane(0, 0, 0);
    Complex* dst = out.plane(0, 0, 0);
    for (std::int64_t x = 0; x < points; ++x) dst[x] = std::exp(src[x]);
    return out;
  }
  for (std::int64_t x = 0; x < points; ++x) {
    const Eigen::MatrixXcd m = gather_point(f, 0, x);
    scatter_point(m.exp(), out, 0, x);
  }
  return out;
}

Field pointwise_inverse(const Field& f) {
  require(f.p() == 0 && f.q() == 0, "pointwise inverse needs degree (0,0)");
  Field out(f.geometry(), 0, 0, f.rank());
  const std::int64_t points = f.points();
  if (f.rank() == 1) {
    const Complex* src = f.plane(0, 0, 0);
    Complex* dst = out.plane(0, 0, 0);
    for (std::int64_t x = 0; x < points; ++x) {
      if (std::abs(src[x]) < 1e-14) throw std::invalid_argument("singular gauge field");
      dst[x] = 1.0 / src[x];
    }
    return out;
  }
  const Eigen::MatrixXcd eye = Eigen::MatrixXcd::Identity(f.rank(), f.rank());
  for (std::int64_t x = 0; x < points; ++x) {
    const Eigen::MatrixXcd m = gather_point(f, 0, x);
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(m);
    if (std::abs(lu.determinant()) < 1e-14)
      throw std::invalid_argument("singular gauge field");
    scatter_point(lu.solve(eye), out, 0, x);
  }
  return out;
}

double pointwise_min_abs_det(const Field& f) {
  require(f.p() == 0 && f.q() == 0, "determinant needs degree (0,0)");
  double best = std::numeric_limits<double>::infinity();
  const std::int64_t points = f.points();
  for (std::int64_t x = 0; x < points; ++x) {
    const Eigen::MatrixXcd m = gather_point(f, 0, x);
    best = std::min(best, std::abs(m.determinant()));
  }
  return best;
}

Field pointwise_log_det_gram(const Field& f) {
  require(f.p() == 0 && f.q() == 0, "log det needs degree (0,0)");
  Field out(f.geometry(), 0, 0, 1);
  Complex* dst = out.plane(0, 0, 0);
  const std::int64_t points = f.points();
  for (std::int64_t x = 0; x < points; ++x) {
    const Eigen::MatrixXcd m = gather_point(f, 0, x);
    const double det = (m.adjoint() * m).determinant().real();
    if (det <= 0.0) throw std::invalid_argument("singular gauge field");
    dst[x] = std::log(det);
  }
  return out;
}

}  // namespace hetorus
