#pragma once

#include <complex>
#include <functional>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "json.hpp"

namespace qnet {

using cplx = std::complex<double>;
using SpMat = Eigen::SparseMatrix<cplx>;
using DMat = Eigen::MatrixXcd;
using DVec = Eigen::VectorXcd;
using json = nlohmann::json;

inline constexpr double tol_op = 1e-10;
inline constexpr double trunc_guard = 1e-6;
inline constexpr cplx I_unit{0.0, 1.0};

enum class ErrorKind { construction, embedding, composition, validation, singular, unsupported, numeric, parse, elaboration };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

enum class FactorKind { oscillator, spin, other };

struct Factor {
  std::string label;
  int dim = 1;
  FactorKind kind = FactorKind::other;
  bool operator==(const Factor& o) const { return label == o.label && dim == o.dim; }
};

// Factors are always kept sorted by label.
class LabeledSpace {
 public:
  LabeledSpace() = default;
  explicit LabeledSpace(std::vector<Factor> factors);

  const std::vector<Factor>& factors() const { return factors_; }
  long total_dim() const { return total_; }
  bool trivial() const { return factors_.empty(); }
  int index_of(const std::string& label) const;  // -1 if absent
  bool has(const std::string& label) const { return index_of(label) >= 0; }
  std::vector<std::string> labels() const;
  bool operator==(const LabeledSpace& o) const { return factors_ == o.factors_; }
  bool operator!=(const LabeledSpace& o) const { return !(*this == o); }

  static LabeledSpace unite(const LabeledSpace& a, const LabeledSpace& b);
  LabeledSpace restrict_to(const std::set<std::string>& keep) const;

 private:
  std::vector<Factor> factors_;
  long total_ = 1;
};

// A named scalar function of time.
struct EnvelopeAtom {
  std::string name;
  std::function<cplx(double)> fn;
  long id = 0;
};

std::shared_ptr<const EnvelopeAtom> make_atom(std::string name, std::function<cplx(double)> fn);

// Product of atoms, each possibly conjugated; canonical ordering makes equal products compare equal.
class Envelope {
 public:
  Envelope() = default;
  explicit Envelope(std::shared_ptr<const EnvelopeAtom> a);

  cplx operator()(double t) const;
  Envelope conj() const;
  Envelope operator*(const Envelope& o) const;
  bool constant() const { return parts_.empty(); }
  std::string describe() const;
  bool operator==(const Envelope& o) const { return key() == o.key(); }
  bool operator<(const Envelope& o) const { return key() < o.key(); }

 private:
  using Part = std::pair<std::shared_ptr<const EnvelopeAtom>, bool>;
  std::vector<std::pair<long, bool>> key() const;
  void canonicalize();
  std::vector<Part> parts_;
};

enum class ElemKind { annihilation, creation, number, pauli_x, pauli_y, pauli_z, sigma_minus, sigma_plus, projector, identity };

// Sparse operator, optionally with scalar-envelope time-dependent terms: X(t) = M0 + sum_k f_k(t) M_k.
class Operator {
 public:
  struct Term {
    Envelope env;
    SpMat mat;
  };

  Operator();
  Operator(LabeledSpace space, SpMat m);
  static Operator scalar(cplx c);
  static Operator identity(const LabeledSpace& space);
  static Operator zero(const LabeledSpace& space);
  static Operator timed(const Envelope& env, const Operator& x);

  const LabeledSpace& space() const { return space_; }
  const SpMat& matrix() const { return c_; }
  const std::vector<Term>& terms() const { return terms_; }
  bool time_dependent() const { return !terms_.empty(); }
  long dim() const { return space_.total_dim(); }
  SpMat at(double t) const;
  DMat dense(double t = 0.0) const { return DMat(at(t)); }

  Operator operator+(const Operator& o) const;
  Operator operator-(const Operator& o) const;
  Operator operator-() const;
  Operator operator*(const Operator& o) const;
  Operator operator*(cplx c) const;
  Operator adjoint() const;
  Operator embed(const LabeledSpace& target) const;
  Operator pruned(double eps = 0.0) const;
  bool is_zero(double tol = tol_op) const;
  // Value if the operator is a constant multiple of identity within tol.
  bool scalar_value(cplx& out, double tol = tol_op) const;

 private:
  void add_term(const Envelope& env, const SpMat& m);
  LabeledSpace space_;
  SpMat c_;
  std::vector<Term> terms_;
};

inline Operator operator*(cplx c, const Operator& x) { return x * c; }
inline Operator operator*(double c, const Operator& x) { return x * cplx(c, 0.0); }

Operator make_elementary(ElemKind kind, const std::string& label, int dim, int i = 0, int j = 0);
Operator embed(const Operator& op, const LabeledSpace& target);
Operator adjoint(const Operator& x);
Operator commutator(const Operator& x, const Operator& y);
Operator anticommutator(const Operator& x, const Operator& y);
Operator partial_trace(const Operator& rho, const std::set<std::string>& keep);
cplx trace(const Operator& x);

// Sample times used to compare time-dependent operators.
const std::vector<double>& probe_times();
double max_abs(const SpMat& m);
double max_abs_diff(const Operator& x, const Operator& y);
bool approx_equal(const Operator& x, const Operator& y, double tol = tol_op);
double hermiticity_residual(const Operator& x);

// Maps a sparse matrix with all its nonzeros onto the index layout of a larger space.
SpMat embed_matrix(const SpMat& m, const LabeledSpace& from, const LabeledSpace& to);
DMat embed_dense(const DMat& m, const LabeledSpace& from, const LabeledSpace& to);
std::vector<int> multi_index(long flat, const LabeledSpace& space);
long flat_index(const std::vector<int>& idx, const LabeledSpace& space);

// Basis ket |n1,...,nk> with per-label levels; unspecified factors use level 0.
DVec basis_ket(const LabeledSpace& space, const std::vector<std::pair<std::string, int>>& levels);

// %.12e, locale independent.
std::string fmt12(double x);
double round12(double x);

json space_to_json(const LabeledSpace& s);
LabeledSpace space_from_json(const json& j);
json operator_to_json(const Operator& x);
Operator operator_from_json(const json& j);

}  // namespace qnet
