#include "qnet/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qnet {

namespace {

Operator op(const LabeledSpace& sp, const DMat& m) {
  SpMat s = m.sparseView(1.0, 1e-15);
  return Operator(sp, s);
}

DMat dn(const Operator& x) {
  if (x.time_dependent()) throw Error(ErrorKind::unsupported, "adiabatic elimination requires time-independent operators");
  return x.dense();
}

double mabs(const DMat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

DMat kbar(const SLHTriple& G) {
  DMat K = cplx(0, -1) * dn(G.H);
  for (const auto& l : G.L) {
    DMat L = dn(l);
    K -= 0.5 * L.adjoint() * L;
  }
  return K;
}

DMat checked_projector(const LabeledSpace& sp, const Operator& P0) {
  if (P0.time_dependent()) throw Error(ErrorKind::validation, "P0 must be time-independent");
  for (const auto& f : P0.space().factors())
    if (!sp.has(f.label)) throw Error(ErrorKind::embedding, "P0 acts on factor '" + f.label + "' absent from the triple's space");
  DMat P = P0.embed(sp).dense();
  double herm = mabs(P - P.adjoint()), idem = mabs(P * P - P);
  if (herm > tol_op || idem > tol_op)
    throw Error(ErrorKind::validation, "P0 is not an orthogonal projector (|P0-P0^dag| = " + fmt12(herm) + ", |P0^2-P0| = " + fmt12(idem) + ")");
  return P;
}

std::string ket_label(const LabeledSpace& sp, long idx) {
  auto mi = multi_index(idx, sp);
  std::string s = "|";
  for (std::size_t k = 0; k < mi.size(); ++k) s += (k ? "," : "") + std::to_string(mi[k]);
  return s + ">";
}

std::string describe_vector(const LabeledSpace& sp, const DVec& v) {
  std::ostringstream os;
  bool first = true;
  for (long i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) < 1e-8) continue;
    if (!first) os << " + ";
    first = false;
    os << "(" << fmt12(v(i).real()) << (v(i).imag() < 0 ? "" : "+") << fmt12(v(i).imag()) << "i)" << ket_label(sp, i);
  }
  return first ? "0" : os.str();
}

}  // namespace

EliminationProblem decompose(const SLHTriple& Gb, const Operator& P0) {
  EliminationProblem p;
  p.space = Gb.space;
  p.n_ports = Gb.n_ports;
  p.port_names = Gb.port_names;
  DMat P = checked_projector(Gb.space, P0);
  DMat Q = DMat::Identity(P.rows(), P.cols()) - P;
  DMat K = kbar(Gb);
  p.P0 = op(p.space, P);
  p.P1 = op(p.space, Q);
  p.Y = op(p.space, Q * K * Q);
  p.A = op(p.space, Q * K * P + P * K * Q);
  p.B = op(p.space, P * K * P);
  for (const auto& l : Gb.L) {
    DMat L = dn(l);
    p.F.push_back(op(p.space, Q * L * Q + P * L * Q));
    p.G.push_back(op(p.space, Q * L * P + P * L * P));
  }
  p.W = Gb.S;
  return p;
}

EliminationProblem decompose_scaled(const std::function<SLHTriple(double)>& family, const Operator& P0) {
  SLHTriple G0 = family(0.0), G1 = family(1.0), G2 = family(2.0), G3 = family(3.0);
  for (const SLHTriple* g : {&G1, &G2, &G3}) {
    if (g->n_ports != G0.n_ports || !(g->space == G0.space))
      throw Error(ErrorKind::validation, "scaled family changes its space or port count with k");
    if (max_abs_diff(g->S, G0.S) > tol_op) throw Error(ErrorKind::validation, "scaled family: S must not depend on k");
  }
  EliminationProblem p;
  p.space = G0.space;
  p.n_ports = G0.n_ports;
  p.port_names = G0.port_names;
  DMat P = checked_projector(p.space, P0);
  p.P0 = op(p.space, P);
  p.P1 = op(p.space, DMat::Identity(P.rows(), P.cols()) - P);
  DMat K0 = kbar(G0), K1 = kbar(G1), K2 = kbar(G2), K3 = kbar(G3);
  DMat Y = 0.5 * (K2 - 2.0 * K1 + K0), A = K1 - K0 - Y;
  double scale = std::max(1.0, mabs(K3));
  if (mabs(K3 - (9.0 * Y + 3.0 * A + K0)) > 1e-9 * scale)
    throw Error(ErrorKind::validation, "scaled family: K(k) is not of the form k^2 Y + k A + B");
  p.Y = op(p.space, Y);
  p.A = op(p.space, A);
  p.B = op(p.space, K0);
  for (int i = 0; i < p.n_ports; ++i) {
    DMat L0 = dn(G0.L[static_cast<std::size_t>(i)]), L1 = dn(G1.L[static_cast<std::size_t>(i)]);
    DMat L3 = dn(G3.L[static_cast<std::size_t>(i)]);
    if (mabs(L3 - (3.0 * (L1 - L0) + L0)) > 1e-9 * std::max(1.0, mabs(L3)))
      throw Error(ErrorKind::validation, "scaled family: L" + std::to_string(i + 1) + "(k) is not of the form k F + G");
    p.F.push_back(op(p.space, L1 - L0));
    p.G.push_back(op(p.space, L0));
  }
  p.W = G0.S;
  return p;
}

std::string AssumptionReport::failures(double tol) const {
  std::string s;
  auto add = [&](const std::string& x) { s += (s.empty() ? "" : "; ") + x; };
  if (!ytilde_exists) add("assumption 1: Ytilde does not exist (" + ytilde_message + ")");
  else if (r1 > tol) add("assumption 1: Ytilde Y = Y Ytilde = P1 fails (residual " + fmt12(r1) + ")");
  if (r2 > tol) add("assumption 2: Y P0 = 0 fails (residual " + fmt12(r2) + ")");
  if (r3 > tol) add("assumption 3: F_i P0 = 0 fails (residual " + fmt12(r3) + ")");
  if (r4 > tol) add("assumption 4: P0 A P0 = 0 fails (residual " + fmt12(r4) + ")");
  return s;
}

json AssumptionReport::to_json() const {
  json j;
  j["ytilde_exists"] = ytilde_exists;
  j["ytilde_condition"] = round12(ytilde_condition);
  if (!ytilde_message.empty()) j["ytilde_message"] = ytilde_message;
  j["assumption_1"] = round12(r1);
  j["assumption_2"] = round12(r2);
  j["assumption_3"] = round12(r3);
  j["assumption_4"] = round12(r4);
  j["ok"] = ok();
  return j;
}

AssumptionReport check_assumptions(const EliminationProblem& p) {
  AssumptionReport r;
  DMat P = p.P0.dense(), Q = p.P1.dense(), Y = dn(p.Y), A = dn(p.A);
  long d = P.rows();
  Eigen::SelfAdjointEigenSolver<DMat> es(Q);
  std::vector<long> cols;
  for (long i = 0; i < d; ++i)
    if (es.eigenvalues()(i) > 0.5) cols.push_back(i);
  DMat V(d, static_cast<long>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) V.col(static_cast<long>(k)) = es.eigenvectors().col(cols[k]);
  r.Ytilde = DMat::Zero(d, d);
  if (V.cols() == 0) {
    r.ytilde_exists = true;
    r.ytilde_condition = 1.0;
  } else {
    DMat Yr = V.adjoint() * Y * V;
    Eigen::JacobiSVD<DMat> svd(Yr, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    double smax = sv(0), smin = sv(sv.size() - 1);
    r.ytilde_condition = smin > 0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (smin <= 0 || r.ytilde_condition > ytilde_max_condition) {
      DVec nv = V * svd.matrixV().col(sv.size() - 1);
      r.ytilde_message = "Y is singular on the fast subspace (condition " + fmt12(r.ytilde_condition) + "), null vector " +
                         describe_vector(p.space, nv);
    } else {
      r.ytilde_exists = true;
      r.Ytilde = V * Yr.inverse() * V.adjoint();
    }
  }
  if (r.ytilde_exists) r.r1 = std::max(mabs(r.Ytilde * Y - Q), mabs(Y * r.Ytilde - Q));
  r.r2 = mabs(Y * P);
  for (const auto& f : p.F) r.r3 = std::max(r.r3, mabs(dn(f) * P));
  r.r4 = mabs(P * A * P);
  return r;
}

namespace {

// Isometry V with P0 = V V^dag when P0 = |v><v| on some factors (x) identity on the rest.
bool product_isometry(const LabeledSpace& sp, const DMat& P, DMat& V, LabeledSpace& rest, std::vector<std::string>& gone) {
  Operator P0 = op(sp, P);
  std::set<std::string> all;
  for (const auto& f : sp.factors()) all.insert(f.label);
  std::set<std::string> keep_rest;
  for (const auto& f : sp.factors()) {
    std::set<std::string> others = all;
    others.erase(f.label);
    Operator red = partial_trace(P0, others);
    DMat guess = (red * cplx(1.0 / f.dim, 0.0)).embed(sp).dense();
    if (mabs(guess - P) <= tol_op) keep_rest.insert(f.label);
  }
  std::set<std::string> nontriv;
  for (const auto& f : sp.factors())
    if (!keep_rest.count(f.label)) nontriv.insert(f.label);
  rest = sp.restrict_to(keep_rest);
  LabeledSpace T = sp.restrict_to(nontriv);
  DMat PT = partial_trace(P0, nontriv).dense() / static_cast<double>(rest.total_dim());
  if (std::abs(PT.trace() - 1.0) > tol_op) return false;
  long best = 0;
  for (long c = 1; c < PT.cols(); ++c)
    if (PT.col(c).norm() > PT.col(best).norm()) best = c;
  DVec v = PT.col(best);
  if (v.norm() < 1e-12) return false;
  v /= v.norm();
  V = DMat::Zero(sp.total_dim(), rest.total_dim());
  for (long t = 0; t < T.total_dim(); ++t) {
    if (std::abs(v(t)) == 0.0) continue;
    auto ti = multi_index(t, T);
    for (long r = 0; r < rest.total_dim(); ++r) {
      auto ri = multi_index(r, rest);
      std::vector<int> full(sp.factors().size());
      std::size_t it = 0, ir = 0;
      for (std::size_t k = 0; k < full.size(); ++k)
        full[k] = keep_rest.count(sp.factors()[k].label) ? ri[ir++] : ti[it++];
      V(flat_index(full, sp), r) = v(t);
    }
  }
  if (mabs(V * V.adjoint() - P) > tol_op) return false;
  gone.assign(nontriv.begin(), nontriv.end());
  return true;
}

}  // namespace

EliminationResult eliminate(const EliminationProblem& p) {
  EliminationResult res;
  res.report = check_assumptions(p);
  if (!res.report.ok())
    throw Error(ErrorKind::validation, "adiabatic elimination refused: " + res.report.failures() + " " + res.report.to_json().dump());
  const DMat& Yt = res.report.Ytilde;
  DMat P = p.P0.dense(), A = dn(p.A), B = dn(p.B);
  int n = p.n_ports;
  std::vector<DMat> F, G, L;
  for (int i = 0; i < n; ++i) {
    F.push_back(dn(p.F[static_cast<std::size_t>(i)]));
    G.push_back(dn(p.G[static_cast<std::size_t>(i)]));
  }
  DMat K = P * (B - A * Yt * A) * P;
  DMat sum = DMat::Zero(P.rows(), P.cols());
  for (int i = 0; i < n; ++i) {
    L.push_back((G[static_cast<std::size_t>(i)] - F[static_cast<std::size_t>(i)] * Yt * A) * P);
    sum += L.back().adjoint() * L.back();
  }
  DMat H = cplx(0, 1) * (K + 0.5 * sum);
  OpMatrix S(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      DMat acc = DMat::Zero(P.rows(), P.cols());
      for (int l = 0; l < n; ++l) {
        DMat c = F[static_cast<std::size_t>(i)] * Yt * F[static_cast<std::size_t>(l)].adjoint();
        if (i == l) c += DMat::Identity(P.rows(), P.cols());
        acc += c * dn(p.W(l, j).embed(p.space));
      }
      S(i, j) = op(p.space, acc * P);
    }
  std::vector<Operator> Lo;
  for (const auto& x : L) Lo.push_back(op(p.space, x));
  Operator Ho = hermitize(op(p.space, H), "adiabatic elimination");
  res.full = make_triple(S, Lo, Ho, p.port_names);
  res.full = embed_triple(res.full, p.space);
  DMat V;
  LabeledSpace rest;
  res.product_form = product_isometry(p.space, P, V, rest, res.eliminated_factors);
  if (res.product_form) {
    auto restrict = [&](const DMat& X) { return op(rest, V.adjoint() * X * V); };
    OpMatrix Sr(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) Sr(i, j) = restrict(S(i, j).dense());
    std::vector<Operator> Lr;
    for (const auto& x : L) Lr.push_back(restrict(x));
    res.reduced = make_triple(Sr, Lr, hermitize(restrict(H), "adiabatic elimination"), p.port_names);
    res.reduced = embed_triple(res.reduced, rest);
  } else {
    res.reduced = res.full;
  }
  return res;
}

Operator ground_projector(const LabeledSpace& space, const std::vector<std::string>& labels) {
  Operator P = Operator::identity(space);
  for (const auto& l : labels) {
    int k = space.index_of(l);
    if (k < 0) throw Error(ErrorKind::embedding, "ground_projector: unknown factor '" + l + "'");
    const Factor& f = space.factors()[static_cast<std::size_t>(k)];
    P = P * make_elementary(ElemKind::projector, f.label, f.dim, 0, 0).embed(space);
  }
  return P;
}

Operator span_projector(const LabeledSpace& space, const std::vector<DVec>& kets) {
  long d = space.total_dim();
  DMat M(d, static_cast<long>(kets.size()));
  for (std::size_t k = 0; k < kets.size(); ++k) {
    if (kets[k].size() != d) throw Error(ErrorKind::validation, "span_projector: ket dimension mismatch");
    M.col(static_cast<long>(k)) = kets[k];
  }
  Eigen::ColPivHouseholderQR<DMat> cp(M);
  long r = cp.rank();
  DMat Q = cp.householderQ() * DMat::Identity(d, r);
  return op(space, Q * Q.adjoint());
}

}  // namespace qnet
