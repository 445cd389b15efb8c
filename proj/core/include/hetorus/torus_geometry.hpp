#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "hetorus/conventions.hpp"
#include "hetorus/rng.hpp"

namespace hetorus {

// Flat torus discretization: n in {1,2} complex dimensions, N grid points per
// real axis (2n axes), unit total volume.
struct TorusGeometry {
  int n = 0;
  int N = 0;
  int num_axes = 0;
  std::int64_t points = 0;
  double volume_weight = 0.0;
  // Index t -> integer frequency; symmetric under negation except the Nyquist
  // row t = N/2 which maps to -N/2.
  std::vector<int> wavenumbers;
  // Same lattice with the Nyquist row zeroed; used by all derivative symbols.
  std::vector<double> deriv_wavenumbers;

  bool same_grid(const TorusGeometry& other) const {
    return n == other.n && N == other.N;
  }
};

// Rejects n outside {1,2} and odd or too-small N.
TorusGeometry make_geometry(int n, int N);

// Subset tables for antisymmetric form indices (subsets of {0..n-1} of size k
// in lexicographic order) and permutation-sign helpers.
int binomial(int n, int k);
const std::vector<std::vector<int>>& index_subsets(int n, int k);
int subset_position(int n, const std::vector<int>& subset);
// Sign of the shuffle sorting a++b; returns 0 if a and b intersect.
// If merged is non-null it receives the sorted union.
int merge_sign(const std::vector<int>& a, const std::vector<int>& b,
               std::vector<int>* merged);
// Sign (-1)^{#elements of sorted_set below value} of inserting value.
int insertion_sign(int value, const std::vector<int>& sorted_set);

// Discretized r x r matrix-valued (p,q)-form. Component c = hi * C(n,q) + ai
// pairs the hi-th holomorphic with the ai-th antiholomorphic index subset;
// each component stores rank*rank contiguous planes of `points` values, plane
// (row*rank + col) holding the (row,col) entry over the grid.
class Field {
 public:
  Field() = default;
  Field(const TorusGeometry& geometry, int p, int q, int rank);

  const TorusGeometry& geometry() const { return geometry_; }
  int p() const { return p_; }
  int q() const { return q_; }
  int rank() const { return rank_; }
  int components() const { return static_cast<int>(data_.size()); }
  std::int64_t points() const { return geometry_.points; }
  bool empty() const { return data_.empty(); }

  std::vector<Complex>& component(int c) { return data_[c]; }
  const std::vector<Complex>& component(int c) const { return data_[c]; }
  Complex* plane(int c, int row, int col) {
    return data_[c].data() +
           static_cast<std::int64_t>(row * rank_ + col) * geometry_.points;
  }
  const Complex* plane(int c, int row, int col) const {
    return data_[c].data() +
           static_cast<std::int64_t>(row * rank_ + col) * geometry_.points;
  }
  Complex at(int c, int row, int col, std::int64_t x) const {
    return plane(c, row, col)[x];
  }
  Complex& at(int c, int row, int col, std::int64_t x) {
    return plane(c, row, col)[x];
  }

  bool same_shape(const Field& other) const;

  Field& operator+=(const Field& other);
  Field& operator-=(const Field& other);
  Field& operator*=(Complex scale);
  // this += scale * other
  Field& axpy(Complex scale, const Field& other);

 private:
  TorusGeometry geometry_;
  int p_ = 0;
  int q_ = 0;
  int rank_ = 0;
  std::vector<std::vector<Complex>> data_;
};

Field operator+(Field lhs, const Field& rhs);
Field operator-(Field lhs, const Field& rhs);
Field operator*(Complex scale, Field f);
Field operator-(Field f);

// L^2 pairing with unit volume: conjugate-linear in the FIRST argument,
// sum_c 2^{p+q} (1/points) sum_x tr(f_c(x)^dagger g_c(x)).
Complex inner_product(const Field& f, const Field& g);
double norm(const Field& f);
// Pointwise metric norm sqrt(sum_c 2^{p+q} |f_c(x)|_F^2), maximized (sup) or
// integrated to the p-th power (lp).
double sup_norm(const Field& f);
double lp_norm(const Field& f, double p);

// Wedge with pointwise matrix product; canonical-order sign
// (-1)^{p2 q1} * merge signs of the index subsets.
Field wedge(const Field& f, const Field& g);

// Adjoint of omega ^ . on (1,1)-forms: -2i * sum_a f_{(a,a)}.
Field lambda_contract(const Field& f);

// Form adjoint: degree (p,q) -> (q,p), out_{(J,I)} = (-1)^{pq} (f_{(I,J)})^dagger.
Field adjoint_form(const Field& f);

// Pointwise conjugate transpose per component (no index swap); primarily for
// degree (0,0) fields.
Field dagger(const Field& f);

// Pointwise matrix trace, rank 1 result.
Field trace_field(const Field& f);

// Mean of the pointwise matrix trace over the grid, weighted to unit volume.
Complex integral_trace(const Field& f);

// Identity-matrix (0,0) field.
Field identity_field(const TorusGeometry& geometry, int rank);

// Forward: fhat = FFT(f)/points. Inverse: unnormalized adjoint FFT. The pair
// composes to the identity; Parseval holds exactly in these conventions.
Field fourier_forward(const Field& f);
Field fourier_inverse(const Field& f);
Field fourier_roundtrip(const Field& f);

// Random field with spectrum supported on modes with every |k| <= kmax
// (kmax < N/2 required, so Nyquist rows are never populated).
Field random_band_limited(const TorusGeometry& geometry, int p, int q, int rank,
                          int kmax, Rng& rng);

// Pointwise matrix functions for (0,0) fields.
Field pointwise_exp(const Field& f);
Field pointwise_inverse(const Field& f);
// Minimum over the grid of |det f(x)|.
double pointwise_min_abs_det(const Field& f);
// log(det(f^dagger f)) per grid point as a rank-1 field.
Field pointwise_log_det_gram(const Field& f);

// Per-axis grid index of flat point x (axes ordered [x1,y1,x2,y2], last
// fastest).
inline int axis_index(const TorusGeometry& geometry, std::int64_t x, int axis) {
  std::int64_t stride = 1;
  for (int d = geometry.num_axes - 1; d > axis; --d) stride *= geometry.N;
  return static_cast<int>((x / stride) % geometry.N);
}

}  // namespace hetorus
