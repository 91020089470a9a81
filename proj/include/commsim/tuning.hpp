#pragma once

#include <cstddef>

namespace commsim {

enum class Regime { Nonconvex, PL };

struct TheoryParams {
  double gamma = 0.0;
  double p = 1.0;
  double p_P = 1.0;
  double p_D = 1.0;
  double beta = 1.0;
  Regime regime = Regime::Nonconvex;
  double mu = 0.0;
};

/// Explicit compressor parameters for the general M3 bound.
struct M3Compression {
  double omega_P = 0.0;
  double omega_D = 0.0;
  double theta = 0.0;
  double p_P = 1.0;
  double p_D = 1.0;
  double beta = 1.0;
};

/// 1 / (L + sqrt((L_A^2 omega_P + L_B^2 theta)(1/p - 1)))
double step_marinap_general(double L, double L_A, double L_B, double omega_P, double theta,
                            double p);

/// min{1 / (L + sqrt(2 (L_A^2 omega_P + L_B^2 theta)(1/p - 1))), p / (2 mu)}
double step_marinap_pl(double L, double L_A, double L_B, double omega_P, double theta, double p,
                       double mu);

/// gamma = 1 / (L + 34 (n L_A + n^{2/3} L_B + n^{2/3} L_max)), p_P = p_D = 1/n,
/// beta = n^{-2/3}. Valid for PermK downlink and RandK uplink with K = d/n.
TheoryParams step_m3(double L, double L_A, double L_B, double L_max, std::size_t n);

/// General M3 step with the given compressor parameters (constant 288).
double step_m3_general(double L, double L_A, double L_B, double L_max, std::size_t n,
                       const M3Compression& c);

/// PL variant: min of the general form with constant 1536 and
/// p_P / (2 mu), p_D / (2 mu), beta / (4 mu).
TheoryParams step_m3_pl(double L, double L_A, double L_B, double L_max, std::size_t n,
                        const M3Compression& c, double mu);

/// min{(n / (omega_D omega_P (omega_D + 1)))^{1/3}, 1}
double m3_beta_general(std::size_t n, double omega_D, double omega_P);

/// p_P = 1/(omega_P + 1), p_D = 1/(omega_D + 1), beta from m3_beta_general,
/// gamma from step_m3_general.
TheoryParams m3_params_general(double L, double L_A, double L_B, double L_max, std::size_t n,
                               double omega_P, double omega_D, double theta);

/// Expected downlink coordinates per worker and iteration: p d + (1 - p) k.
double expected_coords(double p, double k, double d);

/// 1 / L.
double step_gd(double L);

/// 1 / (L + L_hat sqrt(omega (1 - p) / (p n))), the MARINA uplink bound.
double step_marina(double L, double L_hat, double omega, double p, std::size_t n);

}  // namespace commsim
