#pragma once

#include <string>
#include <vector>

#include "qnet/slh.hpp"

namespace qnet {

inline constexpr double tol_lin = 1e-9;

enum class LinearForm { passive, active };

// a' = A a + B b_in, b_out = C a + D b_in; doubled-up (a, a^dag) vectors in active form.
struct LinearModel {
  LinearForm form = LinearForm::passive;
  Eigen::MatrixXcd A, B, C, D;
  Eigen::MatrixXcd Phi_minus, Phi_plus;      // n x m
  Eigen::MatrixXcd Omega_minus, Omega_plus;  // m x m
  std::vector<std::string> modes;
  std::vector<int> dims;
  int n_ports = 0;
  std::string basis = "ladder";  // ladder | quadrature

  int n_modes() const { return static_cast<int>(modes.size()); }
};

// H = a^dag Om- a + a^dag Om+ a^dag + a Om+* a, L = Phi- a + Phi+ a^dag.
LinearModel extract_linear(const SLHTriple& G, bool force_active = false);
LinearModel to_active(const LinearModel& m);

// J_k = diag(I_k, -I_k).
Eigen::MatrixXcd J(int k);
// X^flat = J_cols X^dag J_rows for a 2r x 2c matrix.
Eigen::MatrixXcd flat(const Eigen::MatrixXcd& X);

Eigen::MatrixXcd transfer_function(const LinearModel& m, cplx s);
Eigen::MatrixXcd initial_condition_response(const LinearModel& m, cplx s);  // C (sI - A)^-1

// Change of basis (a, a^dag) -> (x, y) with x = (a + a^dag)/sqrt2, y = i(a^dag - a)/sqrt2.
Eigen::MatrixXcd quadrature_transform(int k);
LinearModel to_quadrature(const LinearModel& m);

struct RealizabilityReport {
  double r1 = 0.0;  // A + A^flat + C^flat C
  double r2 = 0.0;  // B + C^flat D
  double r3 = 0.0;  // D^flat D - I
  bool ok(double tol = tol_lin) const { return r1 <= tol && r2 <= tol && r3 <= tol; }
  json to_json() const;
};
RealizabilityReport realizability_check(const LinearModel& m);

SLHTriple abcd_to_slh(const LinearModel& m, int default_dim = 8);

// Largest real part among eigenvalues of A.
double max_real_eigenvalue(const LinearModel& m);

cplx tla_reflection(double gamma, double delta, double omega);

json linear_model_to_json(const LinearModel& m);

}  // namespace qnet
