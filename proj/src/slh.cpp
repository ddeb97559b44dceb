#include "qnet/slh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

namespace qnet {

OpMatrix::OpMatrix(int r, int c) : rows(r), cols(c), e(static_cast<std::size_t>(r) * c, Operator::scalar(0.0)) {}

OpMatrix OpMatrix::identity(int n) {
  OpMatrix m(n, n);
  for (int k = 0; k < n; ++k) m(k, k) = Operator::scalar(1.0);
  return m;
}

OpMatrix OpMatrix::from_scalar(const Eigen::MatrixXcd& s) {
  OpMatrix m(static_cast<int>(s.rows()), static_cast<int>(s.cols()));
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) m(i, j) = Operator::scalar(s(i, j));
  return m;
}

OpMatrix OpMatrix::operator*(const OpMatrix& o) const {
  if (cols != o.rows) throw Error(ErrorKind::composition, "operator-matrix shape mismatch in product");
  OpMatrix out(rows, o.cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < o.cols; ++j) {
      Operator acc = Operator::scalar(0.0);
      for (int k = 0; k < cols; ++k) {
        const Operator& a = (*this)(i, k);
        const Operator& b = o(k, j);
        if (a.is_zero(0.0) || b.is_zero(0.0)) continue;
        acc = acc + a * b;
      }
      out(i, j) = acc;
    }
  return out;
}

OpMatrix OpMatrix::operator+(const OpMatrix& o) const {
  if (rows != o.rows || cols != o.cols) throw Error(ErrorKind::composition, "operator-matrix shape mismatch in sum");
  OpMatrix out(rows, cols);
  for (std::size_t k = 0; k < e.size(); ++k) out.e[k] = e[k] + o.e[k];
  return out;
}

OpMatrix OpMatrix::operator-(const OpMatrix& o) const {
  if (rows != o.rows || cols != o.cols) throw Error(ErrorKind::composition, "operator-matrix shape mismatch in difference");
  OpMatrix out(rows, cols);
  for (std::size_t k = 0; k < e.size(); ++k) out.e[k] = e[k] - o.e[k];
  return out;
}

OpMatrix OpMatrix::adjoint() const {
  OpMatrix out(cols, rows);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out(j, i) = (*this)(i, j).adjoint();
  return out;
}

OpMatrix OpMatrix::embed(const LabeledSpace& s) const {
  OpMatrix out = *this;
  for (auto& x : out.e) x = x.embed(s);
  return out;
}

LabeledSpace OpMatrix::joint_space() const {
  LabeledSpace s;
  for (const auto& x : e) s = LabeledSpace::unite(s, x.space());
  return s;
}

OpMatrix column(const std::vector<Operator>& v) {
  OpMatrix m(static_cast<int>(v.size()), 1);
  for (std::size_t k = 0; k < v.size(); ++k) m.e[k] = v[k];
  return m;
}

std::vector<Operator> as_vector(const OpMatrix& m) { return m.e; }

double max_abs_diff(const OpMatrix& a, const OpMatrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) return INFINITY;
  double v = 0.0;
  for (std::size_t k = 0; k < a.e.size(); ++k) v = std::max(v, max_abs_diff(a.e[k], b.e[k]));
  return v;
}

namespace {

double op_scale(const Operator& H) {
  double s = max_abs(H.matrix());
  for (const auto& t : H.terms()) s = std::max(s, max_abs(t.mat));
  return std::max(1.0, s);
}

std::vector<std::string> default_names(int n) {
  std::vector<std::string> v;
  for (int k = 1; k <= n; ++k) v.push_back("p" + std::to_string(k));
  return v;
}

}  // namespace

Operator hermitize(const Operator& H, const std::string& context) {
  double r = hermiticity_residual(H);
  if (r > tol_op * op_scale(H))
    throw Error(ErrorKind::composition, context + ": Hamiltonian anti-Hermitian residual " + fmt12(r) + " exceeds tolerance");
  return ((H + H.adjoint()) * cplx(0.5)).pruned();
}

SLHTriple make_triple(const OpMatrix& S, const std::vector<Operator>& L, const Operator& H,
                      std::vector<std::string> port_names) {
  int n = static_cast<int>(L.size());
  if (S.rows != n || S.cols != n) throw Error(ErrorKind::construction, "S must be n x n with n = len(L)");
  if (port_names.empty()) port_names = default_names(n);
  if (static_cast<int>(port_names.size()) != n) throw Error(ErrorKind::construction, "port_names length mismatch");
  LabeledSpace sp = S.joint_space();
  for (const auto& l : L) sp = LabeledSpace::unite(sp, l.space());
  sp = LabeledSpace::unite(sp, H.space());
  SLHTriple G;
  G.space = sp;
  G.n_ports = n;
  G.S = S.embed(sp);
  for (const auto& l : L) G.L.push_back(l.embed(sp));
  G.H = H.embed(sp);
  G.port_names = std::move(port_names);
  return G;
}

SLHTriple embed_triple(const SLHTriple& G, const LabeledSpace& target) {
  if (G.space == target) return G;
  SLHTriple out = G;
  out.space = target;
  out.S = G.S.embed(target);
  for (auto& l : out.L) l = l.embed(target);
  out.H = G.H.embed(target);
  return out;
}

SLHTriple trivial_channels(int n) {
  return make_triple(OpMatrix::identity(n), std::vector<Operator>(n, Operator::scalar(0.0)), Operator::scalar(0.0));
}

SLHTriple scattering_only(const Eigen::MatrixXcd& S) {
  int n = static_cast<int>(S.rows());
  return make_triple(OpMatrix::from_scalar(S), std::vector<Operator>(n, Operator::scalar(0.0)), Operator::scalar(0.0));
}

InvariantReport check_invariants(const SLHTriple& G) {
  InvariantReport r;
  OpMatrix I = OpMatrix::identity(G.n_ports).embed(G.space);
  OpMatrix SdS = G.S.adjoint() * G.S;
  OpMatrix SSd = G.S * G.S.adjoint();
  r.unitarity = std::max(max_abs_diff(SdS.embed(G.space), I), max_abs_diff(SSd.embed(G.space), I));
  r.hermiticity = hermiticity_residual(G.H);
  return r;
}

static void merge_states(SLHTriple& out, const SLHTriple& a, const SLHTriple& b) {
  out.local_states = a.local_states;
  for (const auto& [k, v] : b.local_states) {
    if (out.local_states.count(k)) throw Error(ErrorKind::composition, "conflicting local state for factor '" + k + "'");
    out.local_states[k] = v;
  }
}

SLHTriple series(const SLHTriple& G2, const SLHTriple& G1) {
  if (G1.n_ports != G2.n_ports)
    throw Error(ErrorKind::composition, "series product needs equal port counts (" + std::to_string(G2.n_ports) +
                                            " vs " + std::to_string(G1.n_ports) + ")");
  LabeledSpace sp = LabeledSpace::unite(G1.space, G2.space);
  SLHTriple a = embed_triple(G1, sp), b = embed_triple(G2, sp);
  OpMatrix L1 = column(a.L), L2 = column(b.L);
  OpMatrix S = b.S * a.S;
  OpMatrix L = L2 + b.S * L1;
  Operator cross = (L2.adjoint() * b.S * L1)(0, 0);
  Operator H = a.H + b.H + (cross - cross.adjoint()) * cplx(0.0, -0.5);
  SLHTriple out = embed_triple(make_triple(S, as_vector(L), hermitize(H.embed(sp), "series"), a.port_names), sp);
  merge_states(out, a, b);
  return out;
}

SLHTriple concat(const SLHTriple& G1, const SLHTriple& G2) {
  LabeledSpace sp = LabeledSpace::unite(G1.space, G2.space);
  int n = G1.n_ports + G2.n_ports;
  OpMatrix S(n, n);
  for (int i = 0; i < G1.n_ports; ++i)
    for (int j = 0; j < G1.n_ports; ++j) S(i, j) = G1.S(i, j);
  for (int i = 0; i < G2.n_ports; ++i)
    for (int j = 0; j < G2.n_ports; ++j) S(G1.n_ports + i, G1.n_ports + j) = G2.S(i, j);
  std::vector<Operator> L = G1.L;
  L.insert(L.end(), G2.L.begin(), G2.L.end());
  std::vector<std::string> names = G1.port_names;
  names.insert(names.end(), G2.port_names.begin(), G2.port_names.end());
  SLHTriple out = make_triple(S, L, G1.H + G2.H, names);
  out = embed_triple(out, LabeledSpace::unite(out.space, sp));
  merge_states(out, G1, G2);
  return out;
}

SLHTriple direct_couple(const SLHTriple& G1, const SLHTriple& G2, const Operator& H_int) {
  double r = hermiticity_residual(H_int);
  if (r > tol_op * op_scale(H_int))
    throw Error(ErrorKind::validation, "interaction Hamiltonian is not Hermitian (residual " + fmt12(r) + ")");
  SLHTriple out = concat(G1, G2);
  LabeledSpace sp = LabeledSpace::unite(out.space, H_int.space());
  out = embed_triple(out, sp);
  out.H = (out.H + H_int).embed(sp);
  out.meta["direct_coupling"] = {{"first", G1.port_names}, {"second", G2.port_names}, {"attributed_to", "first"}};
  return out;
}

namespace {

// Inverse of (I - M) for a square operator matrix; throws when singular.
OpMatrix loop_inverse(const OpMatrix& M, const LabeledSpace& sp) {
  int k = M.rows;
  bool all_scalar = true;
  Eigen::MatrixXcd sm(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const Operator& x = M(i, j);
      if (x.time_dependent()) {
        for (const auto& t : x.terms())
          if (max_abs(t.mat) > 0.0) throw Error(ErrorKind::unsupported, "time-dependent scattering entries inside a feedback loop");
      }
      cplx c;
      if (x.scalar_value(c, 1e-14)) {
        sm(i, j) = c;
      } else {
        all_scalar = false;
      }
    }
  if (all_scalar) {
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(k, k) - sm;
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(A);
    double smin = svd.singularValues()(k - 1);
    if (smin < 1e-8) throw Error(ErrorKind::singular, "ill-posed algebraic loop: smallest singular value of (I - S_xy) is " + fmt12(smin));
    return OpMatrix::from_scalar(A.inverse());
  }
  long D = sp.total_dim();
  long N = k * D;
  DMat A = DMat::Identity(N, N);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) A.block(i * D, j * D, D, D) -= DMat(M(i, j).embed(sp).matrix());
  Eigen::BDCSVD<DMat> svd(A);
  double smin = svd.singularValues()(N - 1);
  if (smin < 1e-8) throw Error(ErrorKind::singular, "ill-posed algebraic loop: smallest singular value of (I - S_xy) is " + fmt12(smin));
  DMat inv = A.partialPivLu().inverse();
  OpMatrix out(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      DMat blk = inv.block(i * D, j * D, D, D);
      std::vector<Eigen::Triplet<cplx>> t;
      for (long r = 0; r < D; ++r)
        for (long c = 0; c < D; ++c)
          if (std::abs(blk(r, c)) > 1e-15) t.emplace_back(r, c, blk(r, c));
      SpMat m(D, D);
      m.setFromTriplets(t.begin(), t.end());
      out(i, j) = Operator(sp, m);
    }
  return out;
}

}  // namespace

FeedbackResult feedback_multi(const SLHTriple& G, const PortMap& wiring) {
  int n = G.n_ports;
  std::set<int> outs, ins;
  std::vector<int> X, Y;
  for (const auto& [x, y] : wiring.pairs) {
    if (x < 1 || x > n || y < 1 || y > n)
      throw Error(ErrorKind::composition, "feedback port out of range: " + std::to_string(x) + "->" + std::to_string(y));
    if (!outs.insert(x).second) throw Error(ErrorKind::composition, "output " + std::to_string(x) + " wired twice");
    if (!ins.insert(y).second) throw Error(ErrorKind::composition, "input " + std::to_string(y) + " wired twice");
    X.push_back(x - 1);
    Y.push_back(y - 1);
  }
  std::vector<int> Xb, Yb;
  for (int i = 0; i < n; ++i) {
    if (!outs.count(i + 1)) Xb.push_back(i);
    if (!ins.count(i + 1)) Yb.push_back(i);
  }
  int m = static_cast<int>(Xb.size());
  // Loops that are decoupled from every surviving port and carry no coupling operator close onto
  // themselves and drop out; (I - S_xy) restricted to them may be singular (e.g. a bare trivial channel).
  {
    std::size_t np = X.size();
    std::vector<bool> iso(np, true);
    for (std::size_t p = 0; p < np; ++p) {
      if (!G.L[X[p]].is_zero(0.0)) iso[p] = false;
      for (int i : Xb)
        if (!G.S(i, Y[p]).is_zero(0.0)) iso[p] = false;
      for (int j : Yb)
        if (!G.S(X[p], j).is_zero(0.0)) iso[p] = false;
    }
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t p = 0; p < np; ++p) {
        if (!iso[p]) continue;
        for (std::size_t q = 0; q < np; ++q)
          if (!iso[q] && (!G.S(X[p], Y[q]).is_zero(0.0) || !G.S(X[q], Y[p]).is_zero(0.0))) {
            iso[p] = false;
            changed = true;
            break;
          }
      }
    }
    std::vector<int> X2, Y2;
    for (std::size_t p = 0; p < np; ++p)
      if (!iso[p]) {
        X2.push_back(X[p]);
        Y2.push_back(Y[p]);
      }
    X = X2;
    Y = Y2;
  }
  int k = static_cast<int>(X.size());
  auto sub = [&](const std::vector<int>& rs, const std::vector<int>& cs) {
    OpMatrix out(static_cast<int>(rs.size()), static_cast<int>(cs.size()));
    for (std::size_t i = 0; i < rs.size(); ++i)
      for (std::size_t j = 0; j < cs.size(); ++j) out(static_cast<int>(i), static_cast<int>(j)) = G.S(rs[i], cs[j]);
    return out;
  };
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  OpMatrix Lxb(m, 1);
  for (int i = 0; i < m; ++i) Lxb(i, 0) = G.L[Xb[i]];
  OpMatrix Sred = sub(Xb, Yb);
  OpMatrix Lred = Lxb;
  Operator H = G.H;
  if (k > 0) {
    OpMatrix inv = loop_inverse(sub(X, Y), G.space);
    OpMatrix Lx(k, 1);
    for (int i = 0; i < k; ++i) Lx(i, 0) = G.L[X[i]];
    OpMatrix Sxby = sub(Xb, Y);
    OpMatrix V = inv * Lx;
    Sred = Sred + Sxby * (inv * sub(X, Yb));
    Lred = Lred + Sxby * V;
    OpMatrix W = sub(all, Y) * V;
    Operator T = (column(G.L).adjoint() * W)(0, 0);
    H = H + (T - T.adjoint()) * cplx(0.0, -0.5);
  }
  std::vector<std::string> names;
  for (int i : Yb) names.push_back(G.port_names[i]);
  SLHTriple out = make_triple(Sred, as_vector(Lred), hermitize(H.embed(G.space), "feedback"), names);
  out = embed_triple(out, G.space);
  for (auto& x : out.S.e) x = x.pruned();
  for (auto& x : out.L) x = x.pruned();
  out.local_states = G.local_states;
  out.meta = G.meta;
  return {out, Xb, Yb};
}

FeedbackResult feedback(const SLHTriple& G, int x, int y) {
  if (G.n_ports < 2) throw Error(ErrorKind::composition, "feedback needs at least 2 ports");
  return feedback_multi(G, PortMap{{{x, y}}});
}

FeedbackResult feedback_sequential(const SLHTriple& G, const PortMap& wiring, const std::vector<int>& order) {
  FeedbackResult cur{G, {}, {}};
  cur.output_map.resize(G.n_ports);
  cur.input_map.resize(G.n_ports);
  std::iota(cur.output_map.begin(), cur.output_map.end(), 0);
  std::iota(cur.input_map.begin(), cur.input_map.end(), 0);
  for (int idx : order) {
    auto [x, y] = wiring.pairs.at(idx);
    auto xo = std::find(cur.output_map.begin(), cur.output_map.end(), x - 1);
    auto yi = std::find(cur.input_map.begin(), cur.input_map.end(), y - 1);
    if (xo == cur.output_map.end() || yi == cur.input_map.end())
      throw Error(ErrorKind::composition, "port already eliminated");
    FeedbackResult r = feedback(cur.G, static_cast<int>(xo - cur.output_map.begin()) + 1,
                                static_cast<int>(yi - cur.input_map.begin()) + 1);
    std::vector<int> om, im;
    for (int k : r.output_map) om.push_back(cur.output_map[k]);
    for (int k : r.input_map) im.push_back(cur.input_map[k]);
    cur = {r.G, om, im};
  }
  return cur;
}

Eigen::MatrixXd permutation_matrix(const std::vector<int>& sigma) {
  int n = static_cast<int>(sigma.size());
  std::vector<bool> seen(n, false);
  for (int s : sigma) {
    if (s < 1 || s > n || seen[s - 1]) throw Error(ErrorKind::composition, "invalid permutation");
    seen[s - 1] = true;
  }
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) P(sigma[k] - 1, k) = 1.0;
  return P;
}

SLHTriple permute_ports(const SLHTriple& G, const std::vector<int>& sigma, PortSide which) {
  if (static_cast<int>(sigma.size()) != G.n_ports) throw Error(ErrorKind::composition, "permutation length differs from port count");
  Eigen::MatrixXcd P = permutation_matrix(sigma).cast<cplx>();
  OpMatrix Pm = OpMatrix::from_scalar(P);
  SLHTriple out = G;
  if (which == PortSide::outputs || which == PortSide::both) {
    out.S = (Pm * out.S).embed(G.space);
    out.L = as_vector((Pm * column(out.L)).embed(G.space));
  }
  if (which == PortSide::inputs) out.S = (out.S * Pm).embed(G.space);
  if (which == PortSide::both) {
    out.S = (out.S * OpMatrix::from_scalar(P.transpose())).embed(G.space);
    std::vector<std::string> names(G.n_ports);
    for (int k = 0; k < G.n_ports; ++k) names[sigma[k] - 1] = G.port_names[k];
    out.port_names = names;
  }
  for (auto& x : out.S.e) x = x.pruned();
  for (auto& x : out.L) x = x.pruned();
  return out;
}

SLHTriple pad(const SLHTriple& G, int n_extra, PadSide position) {
  if (n_extra < 0) throw Error(ErrorKind::composition, "negative padding");
  if (n_extra == 0) return G;
  SLHTriple t = trivial_channels(n_extra);
  for (int k = 0; k < n_extra; ++k) t.port_names[k] = "pad" + std::to_string(k + 1);
  SLHTriple out = position == PadSide::after ? concat(G, t) : concat(t, G);
  return embed_triple(out, G.space);
}

double max_abs_diff(const SLHTriple& a, const SLHTriple& b) {
  if (a.n_ports != b.n_ports) return INFINITY;
  LabeledSpace sp = LabeledSpace::unite(a.space, b.space);
  double v = max_abs_diff(a.S.embed(sp), b.S.embed(sp));
  for (int k = 0; k < a.n_ports; ++k) v = std::max(v, max_abs_diff(a.L[k], b.L[k]));
  return std::max(v, max_abs_diff(a.H, b.H));
}

bool approx_equal(const SLHTriple& a, const SLHTriple& b, double tol) { return max_abs_diff(a, b) <= tol; }

namespace {

json op_body(const Operator& x) {
  json j = operator_to_json(x);
  j.erase("labels");
  j.erase("dims");
  j.erase("kinds");
  return j;
}

Operator op_from_body(const json& body, const LabeledSpace& sp) {
  json j = space_to_json(sp);
  j["entries"] = body.at("entries");
  if (body.contains("terms")) j["terms"] = body["terms"];
  return operator_from_json(j);
}

}  // namespace

json triple_to_json(const SLHTriple& G) {
  json j;
  j["schema_version"] = slh_schema_version;
  j["n_ports"] = G.n_ports;
  j["port_names"] = G.port_names;
  j["space"] = space_to_json(G.space);
  j["S"] = json::array();
  for (int i = 0; i < G.n_ports; ++i) {
    json row = json::array();
    for (int k = 0; k < G.n_ports; ++k) row.push_back(op_body(G.S(i, k)));
    j["S"].push_back(row);
  }
  j["L"] = json::array();
  for (const auto& l : G.L) j["L"].push_back(op_body(l));
  j["H"] = op_body(G.H);
  if (!G.local_states.empty()) {
    json ls = json::object();
    for (const auto& [k, m] : G.local_states) {
      SpMat sm = m.sparseView();
      ls[k] = op_body(Operator(LabeledSpace({Factor{k, static_cast<int>(m.rows()), FactorKind::other}}), sm));
    }
    j["local_states"] = ls;
  }
  return j;
}

SLHTriple triple_from_json(const json& j) {
  LabeledSpace sp = space_from_json(j.at("space"));
  int n = j.at("n_ports").get<int>();
  OpMatrix S(n, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) S(i, k) = op_from_body(j.at("S").at(i).at(k), sp);
  std::vector<Operator> L;
  for (int i = 0; i < n; ++i) L.push_back(op_from_body(j.at("L").at(i), sp));
  SLHTriple G = make_triple(S, L, op_from_body(j.at("H"), sp), j.at("port_names").get<std::vector<std::string>>());
  G = embed_triple(G, sp);
  if (j.contains("local_states")) {
    for (const auto& [k, body] : j["local_states"].items()) {
      int f = sp.index_of(k);
      if (f < 0) throw Error(ErrorKind::construction, "local state for unknown factor '" + k + "'");
      LabeledSpace one({sp.factors()[f]});
      G.local_states[k] = op_from_body(body, one).dense();
    }
  }
  return G;
}

std::string triple_hash(const SLHTriple& G) {
  std::string s = triple_to_json(G).dump();
  unsigned long long h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", h);
  return buf;
}

}  // namespace qnet
