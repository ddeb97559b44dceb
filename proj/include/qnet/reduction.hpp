#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qnet/slh.hpp"

namespace qnet {

inline constexpr double ytilde_max_condition = 1e12;

// K(k) = k^2 Y + k A + B, L_i(k) = k F_i + G_i, S(k) = W.
struct EliminationProblem {
  LabeledSpace space;
  int n_ports = 0;
  std::vector<std::string> port_names;
  Operator P0, P1;
  Operator Y, A, B;
  std::vector<Operator> F, G;
  OpMatrix W;
};

// Projector-based split of an unscaled triple: Y = P1 K P1, A = P1 K P0 + P0 K P1, B = P0 K P0,
// F_i = P1 L_i P1 + P0 L_i P1, G_i = P1 L_i P0 + P0 L_i P0, W = S.
EliminationProblem decompose(const SLHTriple& G_bar, const Operator& P0);
// Reads Y, A, B, F, G, W off a k-parametrized family evaluated at k = 0, 1, 2; checks the
// polynomial form at k = 3.
EliminationProblem decompose_scaled(const std::function<SLHTriple(double)>& family, const Operator& P0);

struct AssumptionReport {
  bool ytilde_exists = false;
  double ytilde_condition = 0.0;
  std::string ytilde_message;
  DMat Ytilde;      // pseudo-inverse of Y on range(P1)
  double r1 = 0.0;  // max(|Yt Y - P1|, |Y Yt - P1|)
  double r2 = 0.0;  // |Y P0|
  double r3 = 0.0;  // max_i |F_i P0|
  double r4 = 0.0;  // |P0 A P0|
  bool ok(double tol = tol_op) const { return ytilde_exists && r1 <= tol && r2 <= tol && r3 <= tol && r4 <= tol; }
  std::string failures(double tol = tol_op) const;
  json to_json() const;
};
AssumptionReport check_assumptions(const EliminationProblem& prob);

struct EliminationResult {
  SLHTriple full;     // operators on the original space, supported on range(P0)
  SLHTriple reduced;  // restricted to range(P0) when P0 = |v><v| (x) I on a subset of factors
  bool product_form = false;
  std::vector<std::string> eliminated_factors;
  AssumptionReport report;
};
EliminationResult eliminate(const EliminationProblem& prob);

// |0><0| on the listed factors, identity elsewhere.
Operator ground_projector(const LabeledSpace& space, const std::vector<std::string>& labels);
// Projector onto the span of the given kets.
Operator span_projector(const LabeledSpace& space, const std::vector<DVec>& kets);

}  // namespace qnet
