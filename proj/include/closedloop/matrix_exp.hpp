#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "closedloop/errors.hpp"

namespace closedloop {

/// exp(A) by scaling and squaring with a degree-13 Pade approximant (Higham 2005).
///
/// A is scaled by 2^-s so that ||A/2^s||_1 <= theta_13, the [13/13] approximant
/// r(X) = (V - U)^-1 (V + U) is formed from even/odd parts, and the result is
/// squared s times. Throws PropagatorFailure if the input or result is not finite.
inline Eigen::MatrixXcd matrix_exponential(const Eigen::MatrixXcd& a) {
  using Mat = Eigen::MatrixXcd;
  if (a.rows() != a.cols()) throw PropagatorFailure("matrix_exponential: matrix is not square");
  const Eigen::Index n = a.rows();
  if (n == 0) return a;

  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  if (!std::isfinite(norm)) throw PropagatorFailure("matrix_exponential: non-finite input");

  constexpr double theta13 = 5.371920351148152;
  int s = 0;
  if (norm > theta13) s = static_cast<int>(std::ceil(std::log2(norm / theta13)));
  if (s > 1000) throw PropagatorFailure("matrix_exponential: norm too large to scale");

  static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};

  const Mat x = a * std::ldexp(1.0, -s);
  const Mat ident = Mat::Identity(n, n);
  const Mat x2 = x * x;
  const Mat x4 = x2 * x2;
  const Mat x6 = x4 * x2;

  Mat inner = b[13] * x6 + b[11] * x4 + b[9] * x2;
  Mat u_even = x6 * inner;
  u_even += b[7] * x6 + b[5] * x4 + b[3] * x2 + b[1] * ident;
  const Mat u = x * u_even;

  inner = b[12] * x6 + b[10] * x4 + b[8] * x2;
  Mat v = x6 * inner;
  v += b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * ident;

  Mat r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < s; ++i) r = r * r;

  if (!r.allFinite())
    throw PropagatorFailure("matrix_exponential: result not finite (s=" + std::to_string(s) + ")");
  return r;
}

}  // namespace closedloop
