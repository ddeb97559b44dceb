#include "qnet/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/SparseLU>
#include <unsupported/Eigen/KroneckerProduct>

namespace qnet {

namespace {

SpMat eval_at(const Operator& x, double t) { return x.time_dependent() ? x.at(t) : x.matrix(); }

bool skip(const Operator& x) { return !x.time_dependent() && x.matrix().nonZeros() == 0; }

}  // namespace

bool Superoperator::time_dependent() const {
  for (const auto& term : terms_)
    if (!term.env.constant() || (!term.left_id && term.A.time_dependent()) || (!term.right_id && term.B.time_dependent()))
      return true;
  return false;
}

void Superoperator::add_left(const Operator& A, cplx c, const Envelope& env) {
  if (skip(A)) return;
  SuperTerm t;
  t.A = A.embed(space_);
  t.right_id = true;
  t.c = c;
  t.env = env;
  terms_.push_back(std::move(t));
}

void Superoperator::add_right(const Operator& B, cplx c, const Envelope& env) {
  if (skip(B)) return;
  SuperTerm t;
  t.B = B.embed(space_);
  t.left_id = true;
  t.c = c;
  t.env = env;
  terms_.push_back(std::move(t));
}

void Superoperator::add_sandwich(const Operator& A, const Operator& B, cplx c, const Envelope& env) {
  if (skip(A) || skip(B)) return;
  SuperTerm t;
  t.A = A.embed(space_);
  t.B = B.embed(space_);
  t.c = c;
  t.env = env;
  terms_.push_back(std::move(t));
}

void Superoperator::add_identity(cplx c, const Envelope& env) {
  SuperTerm t;
  t.left_id = t.right_id = true;
  t.c = c;
  t.env = env;
  terms_.push_back(std::move(t));
}

void Superoperator::add(const Superoperator& o, cplx c, const Envelope& env) {
  if (o.space_ != space_) throw Error(ErrorKind::embedding, "superoperator spaces differ");
  for (SuperTerm t : o.terms_) {
    t.c *= c;
    t.env = t.env * env;
    terms_.push_back(std::move(t));
  }
}

DMat Superoperator::apply(double t, const DMat& rho) const {
  DMat out = DMat::Zero(rho.rows(), rho.cols());
  for (const auto& term : terms_) {
    cplx k = term.c * term.env(t);
    if (k == cplx(0.0)) continue;
    if (term.left_id && term.right_id) {
      out += k * rho;
    } else if (term.right_id) {
      out += k * (eval_at(term.A, t) * rho);
    } else if (term.left_id) {
      out += k * (rho * eval_at(term.B, t));
    } else {
      DMat ar = eval_at(term.A, t) * rho;
      out += k * (ar * eval_at(term.B, t));
    }
  }
  return out;
}

SpMat Superoperator::matrix(double t) const {
  long d = space_.total_dim();
  SpMat id(d, d);
  id.setIdentity();
  SpMat out(d * d, d * d);
  for (const auto& term : terms_) {
    cplx k = term.c * term.env(t);
    if (k == cplx(0.0)) continue;
    SpMat A = term.left_id ? id : eval_at(term.A, t);
    SpMat Bt = term.right_id ? id : SpMat(eval_at(term.B, t).transpose());
    SpMat kr = Eigen::kroneckerProduct(Bt, A);
    out += k * kr;
  }
  out.makeCompressed();
  return out;
}

DVec vec(const DMat& rho) { return Eigen::Map<const DVec>(rho.data(), rho.size()); }

DMat unvec(const DVec& v, long d) { return Eigen::Map<const DMat>(v.data(), d, d); }

Superoperator liouvillian(const SLHTriple& G) {
  Superoperator L(G.space);
  Operator K = cplx(0, -1) * G.H;
  for (const auto& l : G.L) K = K - 0.5 * (l.adjoint() * l);
  K = K.embed(G.space).pruned();
  L.add_left(K);
  L.add_right(K.adjoint());
  for (const auto& l : G.L) L.add_sandwich(l, l.adjoint());
  return L;
}

DrivePieces drive_pieces(const SLHTriple& G, int port) {
  if (port < 1 || port > G.n_ports)
    throw Error(ErrorKind::validation, "drive port " + std::to_string(port) + " out of range 1.." + std::to_string(G.n_ports));
  int p = port - 1;
  DrivePieces d{Superoperator(G.space), Superoperator(G.space), Superoperator(G.space)};
  for (int i = 0; i < G.n_ports; ++i) {
    const Operator& s = G.S(i, p);
    const Operator& l = G.L[static_cast<std::size_t>(i)];
    Operator sd = s.adjoint(), ld = l.adjoint();
    d.left.add_sandwich(s, ld);
    d.left.add_left(ld * s, -1.0);
    d.right.add_sandwich(l, sd);
    d.right.add_right(sd * l, -1.0);
    d.both.add_sandwich(s, sd);
  }
  d.both.add_identity(-1.0);
  return d;
}

Superoperator liouvillian_coherent(const SLHTriple& G, cplx alpha, int port) {
  Superoperator L = liouvillian(G);
  DrivePieces d = drive_pieces(G, port);
  L.add(d.left, alpha);
  L.add(d.right, std::conj(alpha));
  L.add(d.both, std::norm(alpha));
  return L;
}

Superoperator liouvillian_coherent(const SLHTriple& G, const Envelope& alpha, int port) {
  Superoperator L = liouvillian(G);
  DrivePieces d = drive_pieces(G, port);
  L.add(d.left, 1.0, alpha);
  L.add(d.right, 1.0, alpha.conj());
  L.add(d.both, 1.0, alpha * alpha.conj());
  return L;
}

void GaussianEnv::validate() const {
  if (N < 0) throw Error(ErrorKind::validation, "gaussian field: constraint N >= 0 violated (N = " + fmt12(N) + ")");
  if (std::norm(M) - N * (N + 1) > tol_op)
    throw Error(ErrorKind::validation, "gaussian field: constraint N(N+1) >= |M|^2 violated (N = " + fmt12(N) +
                                           ", |M| = " + fmt12(std::abs(M)) + ")");
}

GaussianEnv GaussianEnv::from_squeezing(double r, double phi, double nth) {
  GaussianEnv e;
  e.M = std::exp(cplx(0, -2 * phi)) * std::sinh(2 * r) * (nth + 0.5);
  e.N = std::cosh(2 * r) * nth + std::sinh(r) * std::sinh(r);
  return e;
}

double GaussianEnv::squeeze_r() const { return 0.5 * std::atanh(std::min(1.0, std::abs(M) / (N + 0.5))); }
double GaussianEnv::squeeze_phi() const { return -0.5 * std::arg(M); }
double GaussianEnv::n_th() const { return std::sqrt(std::max(0.0, (N + 0.5) * (N + 0.5) - std::norm(M))) - 0.5; }

Superoperator liouvillian_gaussian(const SLHTriple& G, const GaussianEnv& env, int port) {
  env.validate();
  if (port < 1 || port > G.n_ports)
    throw Error(ErrorKind::validation, "drive port " + std::to_string(port) + " out of range 1.." + std::to_string(G.n_ports));
  int p = port - 1;
  cplx phase;
  if (!G.S(p, p).scalar_value(phase, tol_op))
    throw Error(ErrorKind::unsupported, "gaussian input requires a scalar phase S on the driven port");
  for (int i = 0; i < G.n_ports; ++i) {
    if (i == p) continue;
    if (!G.S(i, p).is_zero(tol_op) || !G.S(p, i).is_zero(tol_op))
      throw Error(ErrorKind::unsupported, "gaussian input requires the driven port to scatter only into itself");
  }
  cplx alpha = phase * env.alpha;
  cplx M = phase * phase * env.M;
  double N = env.N;

  Superoperator out(G.space);
  Operator Hk = cplx(0, -1) * G.H;
  out.add_left(Hk);
  out.add_right(Hk.adjoint());
  auto lindblad = [&](const Operator& l, double w) {
    if (w == 0.0) return;
    Operator ldl = l.adjoint() * l;
    out.add_sandwich(l, l.adjoint(), w);
    out.add_left(ldl, -0.5 * w);
    out.add_right(ldl, -0.5 * w);
  };
  auto double_comm = [&](const Operator& A, cplx w) {
    if (w == cplx(0.0)) return;
    Operator AA = A * A;
    out.add_left(AA, w);
    out.add_sandwich(A, A, -2.0 * w);
    out.add_right(AA, w);
  };
  for (int i = 0; i < G.n_ports; ++i)
    if (i != p) lindblad(G.L[static_cast<std::size_t>(i)], 1.0);
  const Operator& L = G.L[static_cast<std::size_t>(p)];
  Operator Ld = L.adjoint();
  lindblad(L, N + 1);
  lindblad(Ld, N);
  double_comm(Ld, 0.5 * M);
  double_comm(L, 0.5 * std::conj(M));
  if (alpha != cplx(0.0)) {
    // [alpha* L - alpha L^dag, rho]
    out.add_left(L, std::conj(alpha), env.alpha_env.conj());
    out.add_right(L, -std::conj(alpha), env.alpha_env.conj());
    out.add_left(Ld, -alpha, env.alpha_env);
    out.add_right(Ld, alpha, env.alpha_env);
  }
  return out;
}

DMat FockHierarchyState::physical() const {
  DMat out = DMat::Zero(blocks[0].rows(), blocks[0].cols());
  for (int m = 0; m <= nmax; ++m)
    for (int n = 0; n <= nmax; ++n)
      if (c(m, n) != cplx(0.0)) out += c(m, n) * block(m, n);
  return out;
}

FockHierarchyState fock_initial(const DMat& rho_sys, const DMat& c) {
  if (c.rows() != c.cols() || c.rows() < 1) throw Error(ErrorKind::validation, "field coefficients must be square");
  if ((c - c.adjoint()).cwiseAbs().maxCoeff() > tol_op)
    throw Error(ErrorKind::validation, "field coefficients must be Hermitian");
  if (std::abs(c.trace() - cplx(1.0)) > tol_tr)
    throw Error(ErrorKind::validation, "field coefficients must have unit trace");
  FockHierarchyState s;
  s.nmax = static_cast<int>(c.rows()) - 1;
  s.c = c;
  s.blocks.assign(static_cast<std::size_t>((s.nmax + 1) * (s.nmax + 1)), DMat::Zero(rho_sys.rows(), rho_sys.cols()));
  for (int n = 0; n <= s.nmax; ++n) s.block(n, n) = rho_sys;
  return s;
}

FockHierarchyState fock_number_state(const DMat& rho_sys, int n) {
  DMat c = DMat::Zero(n + 1, n + 1);
  c(n, n) = 1.0;
  return fock_initial(rho_sys, c);
}

FockHierarchy::FockHierarchy(const SLHTriple& G, Envelope xi, int port)
    : G_(G), xi_(std::move(xi)), port_(port), vac_(liouvillian(G)), drive_(drive_pieces(G, port)) {}

void FockHierarchy::rhs(double t, const FockHierarchyState& s, FockHierarchyState& ds) const {
  ds.nmax = s.nmax;
  ds.c = s.c;
  ds.time = t;
  ds.blocks.resize(s.blocks.size());
  cplx x = xi_(t);
  for (int m = 0; m <= s.nmax; ++m) {
    for (int n = 0; n <= s.nmax; ++n) {
      DMat d = vac_.apply(t, s.block(m, n));
      if (x != cplx(0.0)) {
        if (m > 0) d += std::sqrt(double(m)) * x * drive_.left.apply(t, s.block(m - 1, n));
        if (n > 0) d += std::sqrt(double(n)) * std::conj(x) * drive_.right.apply(t, s.block(m, n - 1));
        if (m > 0 && n > 0) d += std::sqrt(double(m * n)) * std::norm(x) * drive_.both.apply(t, s.block(m - 1, n - 1));
      }
      ds.block(m, n) = std::move(d);
    }
  }
}

cplx FockHierarchy::block_expect(const DMat& block, const DMat& X) { return (block.conjugate().cwiseProduct(X)).sum(); }

cplx FockHierarchy::expect(const FockHierarchyState& s, const DMat& X) {
  cplx v = 0.0;
  for (int m = 0; m <= s.nmax; ++m)
    for (int n = 0; n <= s.nmax; ++n)
      if (s.c(m, n) != cplx(0.0)) v += std::conj(s.c(m, n)) * block_expect(s.block(m, n), X);
  return v;
}

double FockHierarchy::flux(double t, const FockHierarchyState& s, int out_port) const {
  if (out_port < 1 || out_port > G_.n_ports) throw Error(ErrorKind::validation, "output port out of range");
  int q = out_port - 1, p = port_ - 1;
  DMat L(eval_at(G_.L[static_cast<std::size_t>(q)], t));
  DMat S(eval_at(G_.S(q, p), t));
  DMat LdL = L.adjoint() * L, SdL = S.adjoint() * L, LdS = L.adjoint() * S, SdS = S.adjoint() * S;
  cplx x = xi_(t);
  cplx total = 0.0;
  for (int m = 0; m <= s.nmax; ++m) {
    for (int n = 0; n <= s.nmax; ++n) {
      if (s.c(m, n) == cplx(0.0)) continue;
      cplx f = block_expect(s.block(m, n), LdL);
      if (m > 0) f += std::sqrt(double(m)) * std::conj(x) * block_expect(s.block(m - 1, n), SdL);
      if (n > 0) f += std::sqrt(double(n)) * x * block_expect(s.block(m, n - 1), LdS);
      if (m > 0 && n > 0) f += std::sqrt(double(m * n)) * std::norm(x) * block_expect(s.block(m - 1, n - 1), SdS);
      total += std::conj(s.c(m, n)) * f;
    }
  }
  return total.real();
}

FockHierarchyState fock_hierarchy_rhs(const SLHTriple& G, const Envelope& xi, const FockHierarchyState& state, double t,
                                      int port) {
  FockHierarchy F(G, xi, port);
  FockHierarchyState ds;
  F.rhs(t, state, ds);
  return ds;
}

HeisenbergCoefficients heisenberg_coefficients(const SLHTriple& G0, const Operator& X0) {
  LabeledSpace sp = LabeledSpace::unite(G0.space, X0.space());
  SLHTriple G = embed_triple(G0, sp);
  Operator X = X0.embed(sp);
  HeisenbergCoefficients h;
  Operator drift = cplx(0, -1) * commutator(X, G.H);
  for (const auto& l : G.L) {
    Operator ld = l.adjoint();
    drift = drift + ld * X * l - 0.5 * anticommutator(ld * l, X);
  }
  h.drift = drift.embed(sp).pruned(1e-15);
  int n = G.n_ports;
  for (int j = 0; j < n; ++j) {
    Operator b = Operator::zero(sp), bd = Operator::zero(sp);
    for (int i = 0; i < n; ++i) {
      const Operator& l = G.L[static_cast<std::size_t>(i)];
      b = b + commutator(l.adjoint(), X) * G.S(i, j);
      bd = bd + G.S(i, j).adjoint() * commutator(X, l);
    }
    h.dB.push_back(b.pruned(1e-15));
    h.dBdag.push_back(bd.pruned(1e-15));
  }
  h.dLambda = OpMatrix(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Operator v = Operator::zero(sp);
      for (int k = 0; k < n; ++k) v = v + G.S(k, i).adjoint() * X * G.S(k, j);
      if (i == j) v = v - X;
      h.dLambda(i, j) = v.pruned(1e-15);
    }
  }
  return h;
}

json OutputRelations::describe() const {
  json j;
  int n = static_cast<int>(L.size());
  j["n_ports"] = n;
  j["S"] = json::array();
  for (int i = 0; i < n; ++i) {
    json row = json::array();
    for (int k = 0; k < n; ++k) row.push_back(operator_to_json(S(i, k)));
    j["S"].push_back(row);
  }
  j["L"] = json::array();
  for (const auto& l : L) j["L"].push_back(operator_to_json(l));
  return j;
}

OutputRelations output_relations(const SLHTriple& G) {
  OutputRelations r;
  r.S = G.S;
  r.L = G.L;
  int n = G.n_ports;
  r.LdagL = OpMatrix(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) r.LdagL(i, j) = (G.L[static_cast<std::size_t>(i)].adjoint() * G.L[static_cast<std::size_t>(j)]).pruned();
  return r;
}

cplx expect(const DMat& rho, const Operator& X, const LabeledSpace& space, double t) {
  SpMat x = eval_at(X.embed(space), t);
  cplx v = 0.0;
  for (int k = 0; k < x.outerSize(); ++k)
    for (SpMat::InnerIterator it(x, k); it; ++it) v += it.value() * rho(it.col(), it.row());
  return v;
}

double output_flux(const SLHTriple& G, const DMat& rho, int out_port, double t, cplx alpha, int drive_port) {
  if (out_port < 1 || out_port > G.n_ports) throw Error(ErrorKind::validation, "output port out of range");
  Operator l = G.L[static_cast<std::size_t>(out_port - 1)];
  if (alpha != cplx(0.0)) l = l + G.S(out_port - 1, drive_port - 1) * alpha;
  return expect(rho, l.adjoint() * l, G.space, t).real();
}

double top_level_population(const LabeledSpace& space, const DMat& rho) {
  double worst = 0.0;
  const auto& fs = space.factors();
  long stride = space.total_dim();
  for (const auto& f : fs) {
    stride /= f.dim;
    if (f.kind != FactorKind::oscillator || f.dim < 2) continue;
    double pop = 0.0;
    for (long k = 0; k < rho.rows(); ++k)
      if ((k / stride) % f.dim == f.dim - 1) pop += rho(k, k).real();
    worst = std::max(worst, pop);
  }
  return worst;
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = b1 - 5179.0 / 57600, e3 = b3 - 7571.0 / 16695, e4 = b4 - 393.0 / 640, e5 = b5 - (-92097.0 / 339200),
                 e6 = b6 - 187.0 / 2100, e7 = -1.0 / 40;

struct Stepper {
  const RhsFn& f;
  DVec k1, k2, k3, k4, k5, k6, k7, tmp;

  // Returns the new state; k1 must hold f(t, y).
  DVec step(double t, const DVec& y, double h, DVec& err) {
    tmp = y + h * (a21 * k1);
    f(t + c2 * h, tmp, k2);
    tmp = y + h * (a31 * k1 + a32 * k2);
    f(t + c3 * h, tmp, k3);
    tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * h, tmp, k4);
    tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * h, tmp, k5);
    tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(t + h, tmp, k6);
    DVec yn = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    f(t + h, yn, k7);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    return yn;
  }
};

double err_norm(const DVec& err, const DVec& y, const DVec& yn, const IntegrateOptions& o) {
  if (err.size() == 0) return 0.0;
  double s = 0.0;
  for (long i = 0; i < err.size(); ++i) {
    double sc = o.atol + o.rtol * std::max(std::abs(y[i]), std::abs(yn[i]));
    double r = std::abs(err[i]) / sc;
    s += r * r;
  }
  return std::sqrt(s / double(err.size()));
}

}  // namespace

Trajectory integrate(const RhsFn& f, const DVec& y0, double t0, const std::vector<double>& samples,
                     const IntegrateOptions& opt, const StepCheck& check) {
  Trajectory tr;
  for (std::size_t k = 1; k < samples.size(); ++k)
    if (samples[k] < samples[k - 1]) throw Error(ErrorKind::validation, "sample times must be ascending");
  if (!samples.empty() && samples.front() < t0) throw Error(ErrorKind::validation, "sample time before start time");
  Stepper st{f, {}, {}, {}, {}, {}, {}, {}, {}};
  DVec y = y0, err;
  double t = t0;
  st.k1.resize(y.size());
  f(t, y, st.k1);
  double h;
  if (opt.fixed_step) {
    if (!(opt.h > 0)) throw Error(ErrorKind::validation, "fixed step size must be positive");
    h = opt.h;
  } else if (opt.h > 0) {
    h = opt.h;
  } else {
    double d0 = y.norm(), d1 = st.k1.norm();
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    double span = samples.empty() ? 1.0 : samples.back() - t0;
    if (span > 0) h = std::min(h, 0.1 * span);
    h = std::max(h, 1e-8);
  }
  h = std::min(h, opt.h_max);
  long steps = 0;
  for (double target : samples) {
    while (t < target) {
      if (++steps > opt.max_steps) throw Error(ErrorKind::numeric, "integrator exceeded max_steps at t = " + fmt12(t));
      double hs = std::min(h, target - t);
      bool last = hs >= target - t;
      DVec yn = st.step(t, y, hs, err);
      if (!yn.allFinite()) {
        if (opt.fixed_step) throw Error(ErrorKind::numeric, "non-finite state at t = " + fmt12(t));
        h = hs * 0.25;
        ++tr.rejected;
        if (h < opt.h_min) throw Error(ErrorKind::numeric, "step size underflow at t = " + fmt12(t));
        continue;
      }
      if (!opt.fixed_step) {
        double en = err_norm(err, y, yn, opt);
        double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
        if (en > 1.0) {
          ++tr.rejected;
          h = hs * std::min(fac, 0.9);
          if (h < opt.h_min) throw Error(ErrorKind::numeric, "step size underflow at t = " + fmt12(t));
          continue;
        }
        double hn = std::min(hs * fac, opt.h_max);
        if (!last || hn > h) h = hn;
      }
      t = last ? target : t + hs;
      y = std::move(yn);
      std::swap(st.k1, st.k7);
      ++tr.accepted;
      if (check) check(t, y);
    }
    tr.t.push_back(target);
    tr.y.push_back(y);
  }
  return tr;
}

void check_density(const LabeledSpace& space, const DMat& rho, double t, double guard, bool positivity) {
  cplx tr = rho.trace();
  if (std::abs(tr - cplx(1.0)) > tol_tr)
    throw Error(ErrorKind::numeric, "trace drift " + fmt12(std::abs(tr - cplx(1.0))) + " at t = " + fmt12(t));
  if (guard >= 0) {
    const auto& fs = space.factors();
    long stride = space.total_dim();
    for (const auto& f : fs) {
      stride /= f.dim;
      if (f.kind != FactorKind::oscillator || f.dim < 2) continue;
      double pop = 0.0;
      for (long k = 0; k < rho.rows(); ++k)
        if ((k / stride) % f.dim == f.dim - 1) pop += rho(k, k).real();
      if (pop > guard)
        throw Error(ErrorKind::numeric, "truncation guard breached on mode '" + f.label + "': top-level population " + fmt12(pop) +
                                            " at t = " + fmt12(t) + "; increase the truncation");
    }
  }
  if (positivity) {
    DMat hpart = 0.5 * (rho + rho.adjoint());
    double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    if (herm > 1e-8) throw Error(ErrorKind::numeric, "density matrix lost Hermiticity (" + fmt12(herm) + ") at t = " + fmt12(t));
    Eigen::SelfAdjointEigenSolver<DMat> es(hpart, Eigen::EigenvaluesOnly);
    double mn = es.eigenvalues().minCoeff();
    if (mn < -1e-8) throw Error(ErrorKind::numeric, "density matrix lost positivity (min eigenvalue " + fmt12(mn) + ") at t = " + fmt12(t));
  }
}

MasterRun evolve(const Superoperator& L, const DMat& rho0, const std::vector<double>& times, const MasterOptions& opt) {
  long d = L.space().total_dim();
  if (rho0.rows() != d || rho0.cols() != d) throw Error(ErrorKind::validation, "initial state dimension mismatch");
  check_density(L.space(), rho0, times.empty() ? 0.0 : times.front(), opt.truncation_guard, opt.check_positivity);
  double tr0 = rho0.trace().real();
  RhsFn f = [&](double t, const DVec& y, DVec& dy) { dy = vec(L.apply(t, unvec(y, d))); };
  StepCheck chk = [&](double t, const DVec& y) {
    cplx tr = 0.0;
    for (long k = 0; k < d; ++k) tr += y[k * d + k];
    if (std::abs(tr - tr0) > tol_tr)
      throw Error(ErrorKind::numeric, "trace drift " + fmt12(std::abs(tr - tr0)) + " at t = " + fmt12(t));
  };
  double t0 = times.empty() ? 0.0 : times.front();
  Trajectory tr = integrate(f, vec(rho0), t0, times, opt.ode, chk);
  MasterRun run;
  run.accepted = tr.accepted;
  run.rejected = tr.rejected;
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    DMat r = unvec(tr.y[k], d);
    check_density(L.space(), r, tr.t[k], opt.truncation_guard, opt.check_positivity);
    run.t.push_back(tr.t[k]);
    run.rho.push_back(std::move(r));
  }
  return run;
}

FockRun evolve_fock(const FockHierarchy& F, const FockHierarchyState& s0, const std::vector<double>& times, int out_port,
                    const MasterOptions& opt) {
  const LabeledSpace& sp = F.triple().space;
  long d = sp.total_dim();
  long nb = static_cast<long>(s0.blocks.size());
  long bs = d * d;
  auto pack = [&](const FockHierarchyState& s, double acc) {
    DVec y(nb * bs + 1);
    for (long b = 0; b < nb; ++b) y.segment(b * bs, bs) = vec(s.blocks[static_cast<std::size_t>(b)]);
    y[nb * bs] = acc;
    return y;
  };
  auto unpack = [&](const DVec& y, FockHierarchyState& s) {
    s.nmax = s0.nmax;
    s.c = s0.c;
    s.blocks.resize(static_cast<std::size_t>(nb));
    for (long b = 0; b < nb; ++b) s.blocks[static_cast<std::size_t>(b)] = unvec(y.segment(b * bs, bs), d);
  };
  FockHierarchyState cur, der;
  RhsFn f = [&](double t, const DVec& y, DVec& dy) {
    unpack(y, cur);
    F.rhs(t, cur, der);
    dy = pack(der, F.flux(t, cur, out_port));
  };
  StepCheck chk = [&](double t, const DVec& y) {
    unpack(y, cur);
    cplx tr = cur.physical().trace();
    if (std::abs(tr - cplx(1.0)) > tol_tr)
      throw Error(ErrorKind::numeric, "trace drift " + fmt12(std::abs(tr - cplx(1.0))) + " at t = " + fmt12(t));
  };
  double t0 = times.empty() ? 0.0 : times.front();
  Trajectory tr = integrate(f, pack(s0, 0.0), t0, times, opt.ode, chk);
  FockRun run;
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    FockHierarchyState s;
    unpack(tr.y[k], s);
    s.time = tr.t[k];
    check_density(sp, s.physical(), tr.t[k], opt.truncation_guard, opt.check_positivity);
    run.t.push_back(tr.t[k]);
    run.emitted.push_back(tr.y[k][nb * bs].real());
    run.states.push_back(std::move(s));
  }
  return run;
}

DensityState steady_state(const Superoperator& L) {
  if (L.time_dependent()) throw Error(ErrorKind::unsupported, "steady state requires a time-independent Liouvillian");
  long d = L.space().total_dim();
  long n = d * d;
  SpMat M = L.matrix();
  DVec x;
  if (n <= 1024) {
    DMat Md(M);
    Eigen::BDCSVD<DMat> svd(Md, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    double thr = 1e-9 * std::max(1.0, s(0));
    int nulls = 0;
    for (long k = 0; k < s.size(); ++k)
      if (s(k) < thr) ++nulls;
    if (nulls > 1)
      throw Error(ErrorKind::singular, "non-unique steady state: null-space dimension " + std::to_string(nulls));
    x = svd.matrixV().col(n - 1);
  } else {
    SpMat B = M;
    std::vector<Eigen::Triplet<cplx>> trip;
    for (int k = 0; k < B.outerSize(); ++k)
      for (SpMat::InnerIterator it(B, k); it; ++it)
        if (it.row() != 0) trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (long k = 0; k < d; ++k) trip.emplace_back(0, static_cast<int>(k * d + k), cplx(1.0));
    SpMat A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<SpMat> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw Error(ErrorKind::singular, "non-unique steady state: bordered system is singular");
    DVec rhs = DVec::Zero(n);
    rhs[0] = 1.0;
    x = lu.solve(rhs);
    double res = (M * x).norm();
    if (!(res < 1e-6)) throw Error(ErrorKind::singular, "non-unique steady state: residual " + fmt12(res));
  }
  DMat rho = unvec(x, d);
  cplx tr = rho.trace();
  if (std::abs(tr) < 1e-12) throw Error(ErrorKind::singular, "steady state has zero trace");
  rho /= tr;
  rho = 0.5 * (rho + rho.adjoint()).eval();
  DensityState s;
  s.rho = Operator(L.space(), rho.sparseView(1e-300, 1.0));
  s.time = 0.0;
  return s;
}

TrajectoryTable tabulate(const LabeledSpace& space, const std::vector<double>& t, const std::vector<DMat>& rho,
                         const std::vector<Observable>& obs) {
  TrajectoryTable tab;
  tab.t = t;
  for (const auto& o : obs) {
    tab.names.push_back(o.name);
    tab.hermitian.push_back(!o.op.time_dependent() && hermiticity_residual(o.op) <= tol_op);
  }
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::vector<cplx> row;
    for (const auto& o : obs) row.push_back(expect(rho[k], o.op, space, t[k]));
    tab.values.push_back(std::move(row));
  }
  return tab;
}

void write_csv(std::ostream& os, const TrajectoryTable& tab) {
  os << "t";
  for (const auto& n : tab.names) os << "," << n;
  os << "\n";
  for (std::size_t k = 0; k < tab.t.size(); ++k) {
    os << fmt12(tab.t[k]);
    for (std::size_t j = 0; j < tab.names.size(); ++j) {
      cplx v = tab.values[k][j];
      if (tab.hermitian[j])
        os << "," << fmt12(v.real());
      else
        os << "," << fmt12(v.real()) << ":" << fmt12(v.imag());
    }
    os << "\n";
  }
}

json trajectory_json(const TrajectoryTable& tab, const json& meta) {
  json j;
  j["meta"] = meta;
  j["t"] = json::array();
  for (double t : tab.t) j["t"].push_back(round12(t));
  j["observables"] = json::array();
  for (std::size_t c = 0; c < tab.names.size(); ++c) {
    json o;
    o["name"] = tab.names[c];
    o["complex"] = !tab.hermitian[c];
    json vals = json::array();
    for (std::size_t k = 0; k < tab.t.size(); ++k) {
      cplx v = tab.values[k][c];
      if (tab.hermitian[c])
        vals.push_back(round12(v.real()));
      else
        vals.push_back(json::array({round12(v.real()), round12(v.imag())}));
    }
    o["values"] = vals;
    j["observables"].push_back(o);
  }
  return j;
}

}  // namespace qnet
