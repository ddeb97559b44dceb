#pragma once

#include <map>
#include <string>
#include <vector>

#include "qnet/hilbert.hpp"

namespace qnet {

// Row-major matrix of operators.
struct OpMatrix {
  int rows = 0, cols = 0;
  std::vector<Operator> e;

  OpMatrix() = default;
  OpMatrix(int r, int c);
  static OpMatrix identity(int n);
  static OpMatrix from_scalar(const Eigen::MatrixXcd& m);
  Operator& operator()(int i, int j) { return e[static_cast<std::size_t>(i) * cols + j]; }
  const Operator& operator()(int i, int j) const { return e[static_cast<std::size_t>(i) * cols + j]; }
  OpMatrix operator*(const OpMatrix& o) const;
  OpMatrix operator+(const OpMatrix& o) const;
  OpMatrix operator-(const OpMatrix& o) const;
  OpMatrix adjoint() const;
  OpMatrix embed(const LabeledSpace& s) const;
  LabeledSpace joint_space() const;
};

OpMatrix column(const std::vector<Operator>& v);
std::vector<Operator> as_vector(const OpMatrix& m);
double max_abs_diff(const OpMatrix& a, const OpMatrix& b);

struct SLHTriple {
  LabeledSpace space;
  int n_ports = 0;
  OpMatrix S;
  std::vector<Operator> L;
  Operator H;
  std::vector<std::string> port_names;
  // Initial local states for factors (e.g. source cavities), keyed by factor label.
  std::map<std::string, DMat> local_states;
  json meta = json::object();

  const Operator& s(int i, int j) const { return S(i, j); }
};

// Builds a triple, embedding every entry into the joint space.
SLHTriple make_triple(const OpMatrix& S, const std::vector<Operator>& L, const Operator& H,
                      std::vector<std::string> port_names = {});
SLHTriple embed_triple(const SLHTriple& G, const LabeledSpace& target);
SLHTriple trivial_channels(int n);
SLHTriple scattering_only(const Eigen::MatrixXcd& S);

struct InvariantReport {
  double unitarity = 0.0;
  double hermiticity = 0.0;
  bool ok(double tol = 1e-8) const { return unitarity <= tol && hermiticity <= tol; }
};
InvariantReport check_invariants(const SLHTriple& G);

// Symmetrizes H when its anti-Hermitian residual is within tolerance; throws otherwise.
Operator hermitize(const Operator& H, const std::string& context);

SLHTriple series(const SLHTriple& G2, const SLHTriple& G1);
SLHTriple concat(const SLHTriple& G1, const SLHTriple& G2);
SLHTriple direct_couple(const SLHTriple& G1, const SLHTriple& G2, const Operator& H_int);

struct FeedbackResult {
  SLHTriple G;
  std::vector<int> output_map;  // new output index -> old output index (0-based)
  std::vector<int> input_map;   // new input index -> old input index (0-based)
};

struct PortMap {
  std::vector<std::pair<int, int>> pairs;  // (out, in), 1-based
};

// x, y are 1-based.
FeedbackResult feedback(const SLHTriple& G, int x, int y);
FeedbackResult feedback_multi(const SLHTriple& G, const PortMap& wiring);
// Eliminates the pairs one at a time in the given order (indices into wiring.pairs).
FeedbackResult feedback_sequential(const SLHTriple& G, const PortMap& wiring, const std::vector<int>& order);

enum class PortSide { inputs, outputs, both };
// sigma is 1-based; P_{j,k} = delta_{j, sigma(k)}.
SLHTriple permute_ports(const SLHTriple& G, const std::vector<int>& sigma, PortSide which);
Eigen::MatrixXd permutation_matrix(const std::vector<int>& sigma);

enum class PadSide { before, after };
SLHTriple pad(const SLHTriple& G, int n_extra, PadSide position);

double max_abs_diff(const SLHTriple& a, const SLHTriple& b);
bool approx_equal(const SLHTriple& a, const SLHTriple& b, double tol = tol_op);

inline constexpr int slh_schema_version = 1;
json triple_to_json(const SLHTriple& G);
SLHTriple triple_from_json(const json& j);
std::string triple_hash(const SLHTriple& G);

}  // namespace qnet
