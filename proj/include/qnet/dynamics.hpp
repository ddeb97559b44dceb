#pragma once

#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "qnet/slh.hpp"

namespace qnet {

inline constexpr double tol_tr = 1e-8;

// One term c * env(t) * A(t) rho B(t); an empty A or B stands for the identity.
struct SuperTerm {
  bool left_id = false;
  bool right_id = false;
  Operator A;
  Operator B;
  cplx c{1.0};
  Envelope env;
};

// Linear map on density matrices, rho' = sum of SuperTerms.
class Superoperator {
 public:
  Superoperator() = default;
  explicit Superoperator(LabeledSpace space) : space_(std::move(space)) {}

  const LabeledSpace& space() const { return space_; }
  const std::vector<SuperTerm>& terms() const { return terms_; }
  bool time_dependent() const;

  void add_left(const Operator& A, cplx c = 1.0, const Envelope& env = {});
  void add_right(const Operator& B, cplx c = 1.0, const Envelope& env = {});
  void add_sandwich(const Operator& A, const Operator& B, cplx c = 1.0, const Envelope& env = {});
  void add_identity(cplx c = 1.0, const Envelope& env = {});
  void add(const Superoperator& o, cplx c = 1.0, const Envelope& env = {});

  DMat apply(double t, const DMat& rho) const;
  // Acts on column-stacked vec(rho).
  SpMat matrix(double t = 0.0) const;

 private:
  LabeledSpace space_;
  std::vector<SuperTerm> terms_;
};

DVec vec(const DMat& rho);
DMat unvec(const DVec& v, long d);

Superoperator liouvillian(const SLHTriple& G);

// Drive-dependent pieces for a non-vacuum input on port p (1-based):
// left(X) = sum_i [S_ip X, L_i^dag], right(X) = sum_i [L_i, X S_ip^dag], both(X) = sum_i S_ip X S_ip^dag - X.
struct DrivePieces {
  Superoperator left, right, both;
};
DrivePieces drive_pieces(const SLHTriple& G, int port);

Superoperator liouvillian_coherent(const SLHTriple& G, cplx alpha, int port = 1);
Superoperator liouvillian_coherent(const SLHTriple& G, const Envelope& alpha, int port = 1);

struct GaussianEnv {
  double N = 0.0;
  cplx M{0.0};
  cplx alpha{0.0};
  Envelope alpha_env;  // multiplies alpha when non-constant

  void validate() const;
  static GaussianEnv from_squeezing(double r, double phi, double n_th);
  double squeeze_r() const;
  double squeeze_phi() const;
  double n_th() const;
};

// The driven port must scatter only into itself through a scalar phase.
Superoperator liouvillian_gaussian(const SLHTriple& G, const GaussianEnv& env, int port = 1);

struct FockHierarchyState {
  int nmax = 0;
  DMat c;                    // field coefficients c_{m,n}
  std::vector<DMat> blocks;  // index m*(nmax+1)+n
  double time = 0.0;

  DMat& block(int m, int n) { return blocks[static_cast<std::size_t>(m * (nmax + 1) + n)]; }
  const DMat& block(int m, int n) const { return blocks[static_cast<std::size_t>(m * (nmax + 1) + n)]; }
  DMat physical() const;  // sum c_{m,n} rho_{m,n}
};

FockHierarchyState fock_initial(const DMat& rho_sys, const DMat& c);
FockHierarchyState fock_number_state(const DMat& rho_sys, int n);

class FockHierarchy {
 public:
  FockHierarchy(const SLHTriple& G, Envelope xi, int port = 1);

  const SLHTriple& triple() const { return G_; }
  void rhs(double t, const FockHierarchyState& s, FockHierarchyState& ds) const;
  // Expectation E_{m,n}[X] = tr(rho_{m,n}^dag X).
  static cplx block_expect(const DMat& block, const DMat& X);
  static cplx expect(const FockHierarchyState& s, const DMat& X);
  // Mean photon flux into output port q (1-based).
  double flux(double t, const FockHierarchyState& s, int out_port) const;

 private:
  SLHTriple G_;
  Envelope xi_;
  int port_;
  Superoperator vac_;
  DrivePieces drive_;
};

FockHierarchyState fock_hierarchy_rhs(const SLHTriple& G, const Envelope& xi, const FockHierarchyState& state, double t,
                                      int port = 1);

struct HeisenbergCoefficients {
  Operator drift;
  std::vector<Operator> dB;     // coefficient of dB_j
  std::vector<Operator> dBdag;  // coefficient of dB_j^dag
  OpMatrix dLambda;             // coefficient of dLambda_ij
};
HeisenbergCoefficients heisenberg_coefficients(const SLHTriple& G, const Operator& X);

// dB_out = S dB + L dt; dLambda_out,ij = (L_i^dag L_j) dt + sum_k S_ik^dag dB_k^dag L_j + sum_k L_i^dag S_jk dB_k
// + sum_kl S_ik^dag S_jl dLambda_kl.
struct OutputRelations {
  OpMatrix S;
  std::vector<Operator> L;
  OpMatrix LdagL;  // (i,j) -> L_i^dag L_j
  json describe() const;
};
OutputRelations output_relations(const SLHTriple& G);

// Mean output flux of port q for state rho under vacuum or a coherent amplitude on port p.
double output_flux(const SLHTriple& G, const DMat& rho, int out_port, double t = 0.0, cplx alpha = 0.0,
                   int drive_port = 1);

using RhsFn = std::function<void(double, const DVec&, DVec&)>;
// Called after every accepted step; throws to abort.
using StepCheck = std::function<void(double, const DVec&)>;

struct IntegrateOptions {
  double atol = 1e-10;
  double rtol = 1e-8;
  bool fixed_step = false;
  double h = 1e-3;  // fixed step size, or initial guess when adaptive (0 = automatic)
  double h_min = 1e-13;
  double h_max = std::numeric_limits<double>::infinity();
  long max_steps = 50'000'000;
};

struct Trajectory {
  std::vector<double> t;
  std::vector<DVec> y;
  long accepted = 0;
  long rejected = 0;
};

// Dormand-Prince 5(4); records y at each requested sample time (ascending, within [t0, t1]).
Trajectory integrate(const RhsFn& f, const DVec& y0, double t0, const std::vector<double>& samples,
                     const IntegrateOptions& opt = {}, const StepCheck& check = {});

struct DensityState {
  Operator rho;
  double time = 0.0;
};

struct MasterOptions {
  IntegrateOptions ode;
  double truncation_guard = trunc_guard;  // negative disables
  bool check_positivity = true;
};

struct MasterRun {
  std::vector<double> t;
  std::vector<DMat> rho;
  long accepted = 0;
  long rejected = 0;
};

// Throws numeric errors for trace drift, positivity loss, or truncation-guard breach.
void check_density(const LabeledSpace& space, const DMat& rho, double t, double guard, bool positivity);
MasterRun evolve(const Superoperator& L, const DMat& rho0, const std::vector<double>& times,
                 const MasterOptions& opt = {});

struct FockRun {
  std::vector<double> t;
  std::vector<FockHierarchyState> states;
  std::vector<double> emitted;  // integral of the flux on out_port up to t
};
FockRun evolve_fock(const FockHierarchy& F, const FockHierarchyState& s0, const std::vector<double>& times,
                    int out_port = 1, const MasterOptions& opt = {});

DensityState steady_state(const Superoperator& L);

cplx expect(const DMat& rho, const Operator& X, const LabeledSpace& space, double t = 0.0);
// Population of the highest level of each oscillator factor.
double top_level_population(const LabeledSpace& space, const DMat& rho);

struct Observable {
  std::string name;
  Operator op;
};

struct TrajectoryTable {
  std::vector<std::string> names;
  std::vector<bool> hermitian;
  std::vector<double> t;
  std::vector<std::vector<cplx>> values;  // [sample][observable]
};

TrajectoryTable tabulate(const LabeledSpace& space, const std::vector<double>& t, const std::vector<DMat>& rho,
                         const std::vector<Observable>& obs);
void write_csv(std::ostream& os, const TrajectoryTable& tab);
json trajectory_json(const TrajectoryTable& tab, const json& meta);

}  // namespace qnet
