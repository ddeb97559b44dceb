#include "qnet/linear.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qnet {

namespace {

using Mat = Eigen::MatrixXcd;

struct ModeSet {
  LabeledSpace space;
  std::vector<int> factor;  // factor index of each mode
  std::vector<std::string> labels;
  std::vector<int> dims;
};

ModeSet modes_of(const LabeledSpace& sp) {
  ModeSet ms;
  ms.space = sp;
  const auto& fs = sp.factors();
  for (std::size_t k = 0; k < fs.size(); ++k) {
    if (fs[k].kind == FactorKind::oscillator) {
      ms.factor.push_back(static_cast<int>(k));
      ms.labels.push_back(fs[k].label);
      ms.dims.push_back(fs[k].dim);
    } else if (fs[k].dim > 1) {
      throw Error(ErrorKind::unsupported, "not linear: factor '" + fs[k].label + "' is not an oscillator");
    }
  }
  return ms;
}

cplx element(const SpMat& X, const ModeSet& ms, const std::vector<std::pair<int, int>>& row,
             const std::vector<std::pair<int, int>>& col) {
  std::vector<int> r(ms.space.factors().size(), 0), c(ms.space.factors().size(), 0);
  for (auto [mode, lv] : row) {
    if (lv >= ms.dims[static_cast<std::size_t>(mode)]) return 0.0;
    r[static_cast<std::size_t>(ms.factor[static_cast<std::size_t>(mode)])] += lv;
  }
  for (auto [mode, lv] : col) {
    if (lv >= ms.dims[static_cast<std::size_t>(mode)]) return 0.0;
    c[static_cast<std::size_t>(ms.factor[static_cast<std::size_t>(mode)])] += lv;
  }
  return X.coeff(flat_index(r, ms.space), flat_index(c, ms.space));
}

// X ~ c0 + u.a + v.a^dag + a^dag N a + a P a + a^dag Q a^dag (P, Q symmetric).
struct Quadratic {
  cplx c0{0.0};
  Eigen::VectorXcd u, v;
  Mat N, P, Q;
};

Quadratic fit(const SpMat& X, const ModeSet& ms) {
  int m = static_cast<int>(ms.labels.size());
  Quadratic q;
  q.u = Eigen::VectorXcd::Zero(m);
  q.v = Eigen::VectorXcd::Zero(m);
  q.N = Mat::Zero(m, m);
  q.P = Mat::Zero(m, m);
  q.Q = Mat::Zero(m, m);
  q.c0 = element(X, ms, {}, {});
  for (int j = 0; j < m; ++j) {
    q.u(j) = element(X, ms, {}, {{j, 1}});
    q.v(j) = element(X, ms, {{j, 1}}, {});
    for (int k = 0; k < m; ++k) q.N(j, k) = element(X, ms, {{j, 1}}, {{k, 1}}) - (j == k ? q.c0 : cplx(0.0));
    q.P(j, j) = element(X, ms, {}, {{j, 2}}) / std::sqrt(2.0);
    q.Q(j, j) = element(X, ms, {{j, 2}}, {}) / std::sqrt(2.0);
    for (int k = j + 1; k < m; ++k) {
      q.P(j, k) = q.P(k, j) = 0.5 * element(X, ms, {}, {{j, 1}, {k, 1}});
      q.Q(j, k) = q.Q(k, j) = 0.5 * element(X, ms, {{j, 1}, {k, 1}}, {});
    }
  }
  return q;
}

std::vector<Operator> ladder(const ModeSet& ms) {
  std::vector<Operator> a;
  for (std::size_t k = 0; k < ms.labels.size(); ++k)
    a.push_back(make_elementary(ElemKind::annihilation, ms.labels[k], ms.dims[k]).embed(ms.space));
  return a;
}

SpMat rebuild(const Quadratic& q, const std::vector<Operator>& a, const LabeledSpace& sp) {
  int m = static_cast<int>(a.size());
  Operator Y = Operator::identity(sp) * q.c0;
  for (int j = 0; j < m; ++j) {
    Operator ad = a[static_cast<std::size_t>(j)].adjoint();
    Y = Y + q.u(j) * a[static_cast<std::size_t>(j)] + q.v(j) * ad;
    for (int k = 0; k < m; ++k) {
      Y = Y + q.N(j, k) * (ad * a[static_cast<std::size_t>(k)]);
      Y = Y + q.P(j, k) * (a[static_cast<std::size_t>(j)] * a[static_cast<std::size_t>(k)]);
      Y = Y + q.Q(j, k) * (ad * a[static_cast<std::size_t>(k)].adjoint());
    }
  }
  return Y.embed(sp).matrix();
}

std::string monomial_name(const ModeSet& ms, const std::vector<int>& up, const std::vector<int>& down) {
  std::string s;
  auto add = [&](const std::string& op, const std::string& l, int p) {
    if (p == 0) return;
    if (!s.empty()) s += " ";
    s += op + "[" + l + "]";
    if (p > 1) s += "^" + std::to_string(p);
  };
  for (std::size_t k = 0; k < ms.labels.size(); ++k) add("ad", ms.labels[k], up[k]);
  for (std::size_t k = 0; k < ms.labels.size(); ++k) add("a", ms.labels[k], down[k]);
  return s.empty() ? "1" : s;
}

double factorial(int n) {
  double f = 1;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

// Checks X - fit on levels below each top level; reports the lowest-order offending normal-ordered monomial.
void check_residual(const SpMat& X, const SpMat& Y, const ModeSet& ms, const std::string& what) {
  SpMat R = X - Y;
  double scale = std::max(1.0, max_abs(X));
  int best_order = 1 << 30;
  double best_val = 0.0;
  cplx best_c = 0.0;
  std::vector<int> best_up, best_down;
  for (int k = 0; k < R.outerSize(); ++k) {
    for (SpMat::InnerIterator it(R, k); it; ++it) {
      if (std::abs(it.value()) < tol_lin * scale) continue;
      auto ri = multi_index(it.row(), ms.space), ci = multi_index(it.col(), ms.space);
      bool interior = true;
      std::vector<int> up, down;
      int order = 0;
      double norm = 1.0;
      for (std::size_t j = 0; j < ms.factor.size(); ++j) {
        int f = ms.factor[j], d = ms.dims[j];
        int n = ri[static_cast<std::size_t>(f)], mm = ci[static_cast<std::size_t>(f)];
        if (n >= d - 1 || mm >= d - 1) interior = false;
        up.push_back(n);
        down.push_back(mm);
        order += n + mm;
        norm *= std::sqrt(factorial(n) * factorial(mm));
      }
      if (!interior) continue;
      double v = std::abs(it.value());
      if (order < best_order || (order == best_order && v > best_val)) {
        best_order = order;
        best_val = v;
        best_c = it.value() / norm;
        best_up = up;
        best_down = down;
      }
    }
  }
  if (best_order < (1 << 30))
    throw Error(ErrorKind::unsupported, "not linear: " + what + " contains monomial " + monomial_name(ms, best_up, best_down) +
                                            " with coefficient " + fmt12(best_c.real()) + (best_c.imag() < 0 ? "" : "+") +
                                            fmt12(best_c.imag()) + "i");
}

std::string mode_name(const ModeSet& ms, int j) { return ms.labels[static_cast<std::size_t>(j)]; }

Mat blk(const Mat& a, const Mat& b, const Mat& c, const Mat& d) {
  Mat out(a.rows() + c.rows(), a.cols() + b.cols());
  out << a, b, c, d;
  return out;
}

void fill_active(LinearModel& m, const Mat& S) {
  int n = m.n_ports, k = m.n_modes();
  Mat Pt = blk(m.Phi_minus, m.Phi_plus, m.Phi_plus.conjugate(), m.Phi_minus.conjugate());
  Mat Ot = blk(m.Omega_minus, m.Omega_plus, -m.Omega_plus.conjugate(), -m.Omega_minus.conjugate());
  Mat Dt = blk(S, Mat::Zero(n, n), Mat::Zero(n, n), S.conjugate());
  (void)k;
  m.form = LinearForm::active;
  m.A = -0.5 * flat(Pt) * Pt - cplx(0, 1) * Ot;
  m.B = -flat(Pt) * Dt;
  m.C = Pt;
  m.D = Dt;
}

double max_abs(const Mat& x) { return x.size() ? x.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

Eigen::MatrixXcd J(int k) {
  Mat j = Mat::Identity(2 * k, 2 * k);
  j.bottomRightCorner(k, k) *= -1.0;
  return j;
}

Eigen::MatrixXcd flat(const Eigen::MatrixXcd& X) {
  if (X.rows() % 2 || X.cols() % 2) throw Error(ErrorKind::validation, "flat requires even-sized doubled-up matrices");
  return J(static_cast<int>(X.cols() / 2)) * X.adjoint() * J(static_cast<int>(X.rows() / 2));
}

LinearModel extract_linear(const SLHTriple& G, bool force_active) {
  ModeSet ms = modes_of(G.space);
  int m = static_cast<int>(ms.labels.size()), n = G.n_ports;
  if (G.H.time_dependent()) throw Error(ErrorKind::unsupported, "not linear: H is time-dependent");
  Mat S(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      cplx c;
      if (!G.S(i, j).scalar_value(c, tol_lin))
        throw Error(ErrorKind::unsupported, "not linear: S(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ") is operator-valued");
      S(i, j) = c;
    }
  auto a = ladder(ms);
  LinearModel lm;
  lm.modes = ms.labels;
  lm.dims = ms.dims;
  lm.n_ports = n;
  lm.Phi_minus = Mat::Zero(n, m);
  lm.Phi_plus = Mat::Zero(n, m);
  for (int j = 0; j < n; ++j) {
    const Operator& L = G.L[static_cast<std::size_t>(j)];
    std::string what = "L" + std::to_string(j + 1);
    if (L.time_dependent()) throw Error(ErrorKind::unsupported, "not linear: " + what + " is time-dependent");
    SpMat X = L.embed(G.space).matrix();
    Quadratic q = fit(X, ms);
    if (std::abs(q.c0) > tol_lin) throw Error(ErrorKind::unsupported, "not linear: " + what + " has a constant (affine) term");
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) {
        if (std::abs(q.N(r, c)) > tol_lin)
          throw Error(ErrorKind::unsupported, "not linear: " + what + " contains monomial ad[" + mode_name(ms, r) + "] a[" + mode_name(ms, c) + "]");
        if (std::abs(q.P(r, c)) > tol_lin || std::abs(q.Q(r, c)) > tol_lin)
          throw Error(ErrorKind::unsupported, "not linear: " + what + " contains a quadratic monomial in modes " + mode_name(ms, r) + ", " + mode_name(ms, c));
      }
    check_residual(X, rebuild(q, a, G.space), ms, what);
    lm.Phi_minus.row(j) = q.u.transpose();
    lm.Phi_plus.row(j) = q.v.transpose();
  }
  SpMat Hm = G.H.embed(G.space).matrix();
  Quadratic h = fit(Hm, ms);
  for (int j = 0; j < m; ++j)
    if (std::abs(h.u(j)) > tol_lin || std::abs(h.v(j)) > tol_lin)
      throw Error(ErrorKind::unsupported, "not linear: H contains the affine drive term a[" + mode_name(ms, j) + "]");
  check_residual(Hm, rebuild(h, a, G.space), ms, "H");
  lm.Omega_minus = h.N;
  lm.Omega_plus = h.Q;
  bool active = force_active || max_abs(lm.Phi_plus) > tol_lin || max_abs(lm.Omega_plus) > tol_lin;
  if (active) {
    fill_active(lm, S);
  } else {
    lm.form = LinearForm::passive;
    const Mat& Phi = lm.Phi_minus;
    lm.A = -0.5 * Phi.adjoint() * Phi - cplx(0, 1) * lm.Omega_minus;
    lm.B = -Phi.adjoint() * S;
    lm.C = Phi;
    lm.D = S;
  }
  return lm;
}

LinearModel to_active(const LinearModel& m) {
  if (m.form == LinearForm::active) return m;
  if (m.basis != "ladder") throw Error(ErrorKind::unsupported, "to_active requires the ladder basis");
  LinearModel out = m;
  fill_active(out, m.D);
  return out;
}

Eigen::MatrixXcd transfer_function(const LinearModel& m, cplx s) {
  long k = m.A.rows();
  if (k == 0) return m.D;
  Eigen::ComplexEigenSolver<Mat> es(m.A);
  double scale = std::max(1.0, std::abs(s));
  for (long i = 0; i < k; ++i)
    if (std::abs(es.eigenvalues()(i) - s) < 1e-10 * scale)
      throw Error(ErrorKind::singular, "transfer function pole at s = " + fmt12(s.real()) + (s.imag() < 0 ? "" : "+") + fmt12(s.imag()) + "i");
  Mat M = s * Mat::Identity(k, k) - m.A;
  return m.D + m.C * M.partialPivLu().solve(m.B);
}

Eigen::MatrixXcd initial_condition_response(const LinearModel& m, cplx s) {
  long k = m.A.rows();
  Mat M = s * Mat::Identity(k, k) - m.A;
  return m.C * M.partialPivLu().inverse();
}

Eigen::MatrixXcd quadrature_transform(int k) {
  Mat I = Mat::Identity(k, k);
  return blk(I, I, cplx(0, -1) * I, cplx(0, 1) * I) / std::sqrt(2.0);
}

LinearModel to_quadrature(const LinearModel& m0) {
  LinearModel m = to_active(m0);
  if (m.basis == "quadrature") return m;
  Mat Tm = quadrature_transform(m.n_modes()), Tn = quadrature_transform(m.n_ports);
  Mat Tmi = Tm.inverse(), Tni = Tn.inverse();
  m.A = Tm * m.A * Tmi;
  m.B = Tm * m.B * Tni;
  m.C = Tn * m.C * Tmi;
  m.D = Tn * m.D * Tni;
  m.basis = "quadrature";
  return m;
}

json RealizabilityReport::to_json() const {
  return json{{"A+A^flat+C^flat C", round12(r1)}, {"B+C^flat D", round12(r2)}, {"D^flat D-I", round12(r3)}, {"ok", ok()}};
}

RealizabilityReport realizability_check(const LinearModel& m0) {
  LinearModel m = to_active(m0);
  if (m.basis != "ladder") throw Error(ErrorKind::unsupported, "realizability check requires the ladder basis");
  RealizabilityReport r;
  Mat Cf = flat(m.C);
  r.r1 = max_abs(Mat(m.A + flat(m.A) + Cf * m.C));
  r.r2 = max_abs(Mat(m.B + Cf * m.D));
  r.r3 = max_abs(Mat(flat(m.D) * m.D - Mat::Identity(m.D.rows(), m.D.cols())));
  return r;
}

SLHTriple abcd_to_slh(const LinearModel& m0, int default_dim) {
  LinearModel m = to_active(m0);
  RealizabilityReport r = realizability_check(m);
  const double tol = 1e-8;
  if (r.r1 > tol) throw Error(ErrorKind::validation, "not realizable: condition A + A^flat + C^flat C = 0 fails (residual " + fmt12(r.r1) + ")");
  if (r.r2 > tol) throw Error(ErrorKind::validation, "not realizable: condition B = -C^flat D fails (residual " + fmt12(r.r2) + ")");
  if (r.r3 > tol) throw Error(ErrorKind::validation, "not realizable: condition D^flat D = I fails (residual " + fmt12(r.r3) + ")");
  int k = m.n_modes(), n = m.n_ports;
  if (m.A.rows() != 2 * k || m.C.rows() != 2 * n) throw Error(ErrorKind::validation, "model dimensions inconsistent with modes/ports");
  Mat S = m.D.topLeftCorner(n, n);
  Mat Pm = m.C.topLeftCorner(n, k), Pp = m.C.topRightCorner(n, k);
  Mat Ot = cplx(0, 1) * (m.A + 0.5 * flat(m.C) * m.C);
  Mat Om = Ot.topLeftCorner(k, k), Op = Ot.topRightCorner(k, k);
  double sym = std::max({max_abs(Mat(m.C.bottomLeftCorner(n, k) - Pp.conjugate())), max_abs(Mat(m.C.bottomRightCorner(n, k) - Pm.conjugate())),
                         max_abs(Mat(m.D.topRightCorner(n, n))), max_abs(Mat(m.D.bottomLeftCorner(n, n))),
                         max_abs(Mat(Ot.bottomLeftCorner(k, k) + Op.conjugate())), max_abs(Mat(Ot.bottomRightCorner(k, k) + Om.conjugate()))});
  if (sym > tol) throw Error(ErrorKind::validation, "not realizable: doubled-up block structure violated (residual " + fmt12(sym) + ")");
  std::vector<Operator> a;
  for (int j = 0; j < k; ++j) {
    int d = j < static_cast<int>(m.dims.size()) ? m.dims[static_cast<std::size_t>(j)] : default_dim;
    a.push_back(make_elementary(ElemKind::annihilation, m.modes[static_cast<std::size_t>(j)], d));
  }
  LabeledSpace sp;
  for (const auto& x : a) sp = LabeledSpace::unite(sp, x.space());
  for (auto& x : a) x = x.embed(sp);
  std::vector<Operator> L;
  for (int i = 0; i < n; ++i) {
    Operator l = Operator::zero(sp);
    for (int j = 0; j < k; ++j) l = l + Pm(i, j) * a[static_cast<std::size_t>(j)] + Pp(i, j) * a[static_cast<std::size_t>(j)].adjoint();
    L.push_back(l.pruned());
  }
  Operator H = Operator::zero(sp);
  for (int i = 0; i < k; ++i) {
    Operator ai = a[static_cast<std::size_t>(i)], adi = ai.adjoint();
    for (int j = 0; j < k; ++j) {
      Operator aj = a[static_cast<std::size_t>(j)];
      H = H + Om(i, j) * (adi * aj) + Op(i, j) * (adi * aj.adjoint()) + std::conj(Op(i, j)) * (ai * aj);
    }
  }
  H = hermitize(H.pruned(), "abcd_to_slh");
  SLHTriple G = make_triple(OpMatrix::from_scalar(S), L, H);
  return embed_triple(G, LabeledSpace::unite(G.space, sp));
}

double max_real_eigenvalue(const LinearModel& m) {
  if (m.A.rows() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::ComplexEigenSolver<Mat> es(m.A);
  return es.eigenvalues().real().maxCoeff();
}

cplx tla_reflection(double gamma, double delta, double omega) {
  if (!(gamma > 0)) throw Error(ErrorKind::validation, "tla_reflection: constraint gamma > 0 violated (gamma = " + fmt12(gamma) + ")");
  cplx x(gamma / 2, -(delta - omega));
  return -x / std::conj(x);
}

json linear_model_to_json(const LinearModel& m) {
  auto mat = [](const Mat& x) {
    json rows = json::array();
    for (long i = 0; i < x.rows(); ++i) {
      json r = json::array();
      for (long j = 0; j < x.cols(); ++j) r.push_back(json::array({round12(x(i, j).real()), round12(x(i, j).imag())}));
      rows.push_back(r);
    }
    return rows;
  };
  json j;
  j["form"] = m.form == LinearForm::passive ? "passive" : "active";
  j["basis"] = m.basis;
  j["modes"] = m.modes;
  j["n_ports"] = m.n_ports;
  j["A"] = mat(m.A);
  j["B"] = mat(m.B);
  j["C"] = mat(m.C);
  j["D"] = mat(m.D);
  return j;
}

}  // namespace qnet
