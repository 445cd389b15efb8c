#pragma once

#include <complex>

namespace hetorus {

using Complex = std::complex<double>;

// Frozen geometric conventions. Every operator factor in the library derives
// from the choices below; downstream constants fixed by them (moment-map scale
// c = 2 at the elementary nilpotent, obstruction constant kappa = 1) are frozen
// in the tests.
//
//   Torus:    C^n / (Z^n + i Z^n), coordinates z_a = x_a + i y_a, axes ordered
//             [x_1, y_1, x_2, y_2], grid index row-major with the last axis
//             fastest, total volume 1 (quadrature weight 1/points).
//   Metric:   <dz_a, dz_b> = <dzbar_a, dzbar_b> = 2 delta_ab pointwise, so a
//             (p,q)-component carries the weight 2^{p+q} in the L^2 pairing.
//   Kaehler:  omega = sum_a dx_a ^ dy_a = (i/2) sum_a dz_a ^ dzbar_a.
//   Lambda:   Lambda(dz_a ^ dzbar_b) = -2i delta_ab (adjoint of omega ^ .),
//             hence Lambda(omega) = n.
//   Fourier:  fhat(k) = (1/points) sum_x f(x) e^{-2 pi i k.x}; a section of
//             Hom(L_j, L_i) is stored as its periodic coefficient against the
//             frame e^{2 pi i (xi_i - xi_j).x}, so all derivative symbols act
//             at the shifted frequencies k + xi_i - xi_j.

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

// Weight of one (p,q) component in the pointwise form metric.
inline double form_metric_factor(int p, int q) {
  return static_cast<double>(1 << (p + q));
}

// Lambda acting on the diagonal dz_a ^ dzbar_a component.
inline const Complex kLambdaDiagonal{0.0, -2.0};

}  // namespace hetorus
