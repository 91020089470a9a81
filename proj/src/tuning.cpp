#include "commsim/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "commsim/error.hpp"

namespace commsim {

namespace {

void require_nonnegative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw ParameterError(std::string(name) + " must be finite and >= 0, got " + std::to_string(v));
  }
}

void require_probability(double p, const char* name) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw ParameterError(std::string(name) + " must lie in (0, 1], got " + std::to_string(p));
  }
}

void require_mu(double mu) {
  if (!(mu > 0.0)) throw ParameterError("PL regime needs mu > 0, got " + std::to_string(mu));
}

void require_smoothness(double L, double L_A, double L_B) {
  require_nonnegative(L, "L");
  require_nonnegative(L_A, "L_A");
  require_nonnegative(L_B, "L_B");
}

// The bracket under the square root shared by the general M3 bounds.
double m3_radicand(double L_A, double L_B, double L_max, std::size_t n, const M3Compression& c) {
  require_nonnegative(L_max, "L_max");
  require_nonnegative(c.omega_P, "omega_P");
  require_nonnegative(c.omega_D, "omega_D");
  require_nonnegative(c.theta, "theta");
  require_probability(c.p_P, "p_P");
  require_probability(c.p_D, "p_D");
  require_probability(c.beta, "beta");
  if (n < 1) throw ParameterError("n must be >= 1");
  const double nn = static_cast<double>(n);
  const double b2 = c.beta * c.beta;
  const double term_b = c.theta / c.p_P + (1.0 + c.theta * c.p_P) / b2;
  const double term_a = c.omega_P / c.p_P + (1.0 + c.omega_P * c.p_P) / b2;
  const double term_max = c.omega_D * c.omega_P * c.beta / (nn * c.p_D) +
                          c.omega_D * (1.0 + c.omega_P * c.p_P) / (nn * c.p_D);
  return term_b * L_B * L_B + term_a * L_A * L_A + term_max * L_max * L_max;
}

double reciprocal(double denom) {
  if (!(denom > 0.0)) throw ParameterError("step-size bound is unbounded (denominator 0)");
  return 1.0 / denom;
}

}  // namespace

double step_marinap_general(double L, double L_A, double L_B, double omega_P, double theta,
                            double p) {
  require_smoothness(L, L_A, L_B);
  require_nonnegative(omega_P, "omega_P");
  require_nonnegative(theta, "theta");
  require_probability(p, "p");
  const double rad = (L_A * L_A * omega_P + L_B * L_B * theta) * (1.0 / p - 1.0);
  return reciprocal(L + std::sqrt(rad));
}

double step_marinap_pl(double L, double L_A, double L_B, double omega_P, double theta, double p,
                       double mu) {
  require_smoothness(L, L_A, L_B);
  require_nonnegative(omega_P, "omega_P");
  require_nonnegative(theta, "theta");
  require_probability(p, "p");
  require_mu(mu);
  const double rad = 2.0 * (L_A * L_A * omega_P + L_B * L_B * theta) * (1.0 / p - 1.0);
  return std::min(reciprocal(L + std::sqrt(rad)), p / (2.0 * mu));
}

TheoryParams step_m3(double L, double L_A, double L_B, double L_max, std::size_t n) {
  require_smoothness(L, L_A, L_B);
  require_nonnegative(L_max, "L_max");
  if (n < 1) throw ParameterError("n must be >= 1");
  const double nn = static_cast<double>(n);
  const double n23 = std::cbrt(nn * nn);
  TheoryParams out;
  out.gamma = reciprocal(L + 34.0 * (nn * L_A + n23 * L_B + n23 * L_max));
  out.p_P = 1.0 / nn;
  out.p_D = 1.0 / nn;
  out.p = out.p_P;
  out.beta = 1.0 / n23;
  return out;
}

double step_m3_general(double L, double L_A, double L_B, double L_max, std::size_t n,
                       const M3Compression& c) {
  require_smoothness(L, L_A, L_B);
  return reciprocal(L + std::sqrt(288.0 * m3_radicand(L_A, L_B, L_max, n, c)));
}

TheoryParams step_m3_pl(double L, double L_A, double L_B, double L_max, std::size_t n,
                        const M3Compression& c, double mu) {
  require_smoothness(L, L_A, L_B);
  require_mu(mu);
  const double first = reciprocal(L + std::sqrt(1536.0 * m3_radicand(L_A, L_B, L_max, n, c)));
  TheoryParams out;
  out.gamma = std::min({first, c.p_P / (2.0 * mu), c.p_D / (2.0 * mu), c.beta / (4.0 * mu)});
  out.p_P = c.p_P;
  out.p_D = c.p_D;
  out.p = c.p_P;
  out.beta = c.beta;
  out.regime = Regime::PL;
  out.mu = mu;
  return out;
}

double m3_beta_general(std::size_t n, double omega_D, double omega_P) {
  require_nonnegative(omega_D, "omega_D");
  require_nonnegative(omega_P, "omega_P");
  if (n < 1) throw ParameterError("n must be >= 1");
  const double denom = omega_D * omega_P * (omega_D + 1.0);
  if (denom == 0.0) return 1.0;
  return std::min(std::cbrt(static_cast<double>(n) / denom), 1.0);
}

TheoryParams m3_params_general(double L, double L_A, double L_B, double L_max, std::size_t n,
                               double omega_P, double omega_D, double theta) {
  M3Compression c;
  c.omega_P = omega_P;
  c.omega_D = omega_D;
  c.theta = theta;
  c.p_P = 1.0 / (omega_P + 1.0);
  c.p_D = 1.0 / (omega_D + 1.0);
  c.beta = m3_beta_general(n, omega_D, omega_P);
  TheoryParams out;
  out.gamma = step_m3_general(L, L_A, L_B, L_max, n, c);
  out.p_P = c.p_P;
  out.p_D = c.p_D;
  out.p = c.p_P;
  out.beta = c.beta;
  return out;
}

double expected_coords(double p, double k, double d) {
  require_probability(p, "p");
  if (!(k >= 0.0 && k <= d)) throw ParameterError("k must lie in [0, d]");
  return p * d + (1.0 - p) * k;
}

double step_gd(double L) {
  require_nonnegative(L, "L");
  return reciprocal(L);
}

double step_marina(double L, double L_hat, double omega, double p, std::size_t n) {
  require_nonnegative(L, "L");
  require_nonnegative(L_hat, "L_hat");
  require_nonnegative(omega, "omega");
  require_probability(p, "p");
  if (n < 1) throw ParameterError("n must be >= 1");
  return reciprocal(L + L_hat * std::sqrt(omega * (1.0 - p) / (p * static_cast<double>(n))));
}

}  // namespace commsim
