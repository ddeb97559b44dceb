#include "qnet/catalog.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

namespace qnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double need(const Pulse& p, const std::string& k) {
  auto it = p.p.find(k);
  if (it == p.p.end()) throw Error(ErrorKind::validation, "pulse '" + p.shape + "' needs parameter '" + k + "'");
  return it->second;
}

}  // namespace

Pulse make_pulse(const std::string& shape, const std::map<std::string, double>& p) {
  Pulse out{shape, p};
  if (shape == "gaussian") {
    need(out, "tc");
    if (!(need(out, "sigma") > 0)) throw Error(ErrorKind::validation, "gaussian pulse needs sigma > 0");
  } else if (shape == "square") {
    need(out, "t0");
    if (!(need(out, "T") > 0)) throw Error(ErrorKind::validation, "square pulse needs T > 0");
  } else if (shape == "rising" || shape == "decaying") {
    need(out, "t0");
    if (!(need(out, "tau") > 0)) throw Error(ErrorKind::validation, shape + " pulse needs tau > 0");
  } else {
    throw Error(ErrorKind::validation, "unknown pulse shape '" + shape + "'");
  }
  double n = out.norm();
  if (std::abs(n - 1.0) > 1e-6) throw Error(ErrorKind::validation, "pulse not square-normalized (norm " + fmt12(n) + ")");
  return out;
}

cplx Pulse::xi(double t) const {
  if (shape == "gaussian") {
    double tc = p.at("tc"), s = p.at("sigma");
    return std::pow(2.0 * M_PI * s * s, -0.25) * std::exp(-(t - tc) * (t - tc) / (4.0 * s * s));
  }
  if (shape == "square") {
    double t0 = p.at("t0"), T = p.at("T");
    return (t >= t0 && t <= t0 + T) ? 1.0 / std::sqrt(T) : 0.0;
  }
  if (shape == "rising") {
    double t0 = p.at("t0"), tau = p.at("tau");
    return t <= t0 ? std::exp((t - t0) / (2.0 * tau)) / std::sqrt(tau) : 0.0;
  }
  if (shape == "decaying") {
    double t0 = p.at("t0"), tau = p.at("tau");
    return t >= t0 ? std::exp(-(t - t0) / (2.0 * tau)) / std::sqrt(tau) : 0.0;
  }
  return 0.0;
}

double Pulse::W(double t) const {
  if (shape == "gaussian") return 0.5 * std::erfc((t - p.at("tc")) / (std::sqrt(2.0) * p.at("sigma")));
  if (shape == "square") {
    double t0 = p.at("t0"), T = p.at("T");
    return std::clamp((t0 + T - t) / T, 0.0, 1.0);
  }
  if (shape == "rising") {
    double t0 = p.at("t0"), tau = p.at("tau");
    return t >= t0 ? 0.0 : 1.0 - std::exp((t - t0) / tau);
  }
  if (shape == "decaying") {
    double t0 = p.at("t0"), tau = p.at("tau");
    return t <= t0 ? 1.0 : std::exp(-(t - t0) / tau);
  }
  return 0.0;
}

cplx Pulse::lambda(double t) const { return xi(t) / std::sqrt(std::max(W(t), w_floor)); }

std::pair<double, double> Pulse::support() const {
  if (shape == "gaussian") return {p.at("tc") - 12 * p.at("sigma"), p.at("tc") + 12 * p.at("sigma")};
  if (shape == "square") return {p.at("t0"), p.at("t0") + p.at("T")};
  if (shape == "rising") return {p.at("t0") - 60 * p.at("tau"), p.at("t0")};
  return {p.at("t0"), p.at("t0") + 60 * p.at("tau")};
}

double Pulse::norm() const {
  auto [lo, hi] = support();
  auto f = [this](double t) { return std::norm(xi(t)); };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-12);
}

std::string Pulse::describe() const {
  std::ostringstream s;
  s << shape << "(";
  bool first = true;
  for (const auto& [k, v] : p) {
    s << (first ? "" : ",") << k << "=" << fmt12(v);
    first = false;
  }
  s << ")";
  return s.str();
}

Envelope xi_envelope(const Pulse& p, cplx amplitude) {
  std::string name = p.describe();
  if (amplitude != cplx(1.0)) name = "(" + fmt12(amplitude.real()) + "+" + fmt12(amplitude.imag()) + "i)*" + name;
  return Envelope(make_atom(name, [p, amplitude](double t) { return amplitude * p.xi(t); }));
}

Envelope lambda_envelope(const Pulse& p) {
  return Envelope(make_atom("lambda[" + p.describe() + "]", [p](double t) { return p.lambda(t); }));
}

std::string mode_label(const std::string& prefix, const std::string& mode) {
  return prefix.empty() ? mode : prefix + "." + mode;
}

DMat coherent_density(int dim, cplx alpha) {
  DVec v(dim);
  cplx c = 1.0;
  for (int n = 0; n < dim; ++n) {
    if (n > 0) c *= alpha / std::sqrt(double(n));
    v(n) = c;
  }
  v.normalize();
  return v * v.adjoint();
}

DMat fock_density(int dim, int n) {
  if (n < 0 || n >= dim) throw Error(ErrorKind::validation, "Fock level " + std::to_string(n) + " exceeds truncation");
  DMat m = DMat::Zero(dim, dim);
  m(n, n) = 1.0;
  return m;
}

namespace {

ParamSchema R(std::string n, double def, std::string c = "", std::string doc = "") {
  return {std::move(n), "real", std::isnan(def), def, std::move(c), std::move(doc)};
}
ParamSchema C(std::string n, double def, std::string doc = "") { return {std::move(n), "complex", std::isnan(def), def, "", std::move(doc)}; }
ParamSchema Iv(std::string n, double def, std::string c = "") { return {std::move(n), "int", std::isnan(def), def, std::move(c), ""}; }
ParamSchema P(std::string n, bool req = true) { return {std::move(n), "pulse", req, kNaN, "normalized", ""}; }
ParamSchema Opt(ParamSchema s) {
  s.required = false;
  return s;
}

std::vector<KindSchema> build_schema() {
  const double X = kNaN;
  return {
      {"phase_shifter", {R("phi", X)}, {}, "(e^{i phi}, 0, 0)"},
      {"beamsplitter",
       {Opt(R("eta", X, "|eta|<=1")), Opt(C("r11", X)), Opt(C("t12", X)), Opt(C("t21", X)), Opt(C("r22", X))},
       {},
       "S = [[sqrt(1-eta^2), -eta],[eta, sqrt(1-eta^2)]] or explicit [[r11,t12],[t21,r22]]; default 50/50"},
      {"one_sided_cavity", {R("gamma", X, ">=0"), R("delta", 0.0)}, {"a"}, "(I, sqrt(gamma) a, delta a+a)"},
      {"kerr_cavity", {R("gamma", X, ">=0"), R("delta", 0.0), R("chi", X)}, {"a"}, "adds chi a+a a+a"},
      {"fabry_perot", {R("gamma1", X, ">=0"), R("gamma2", X, ">=0"), R("delta", 0.0)}, {"a"}, "two-sided cavity"},
      {"cross_kerr_cavities",
       {R("gamma1", X, ">=0"), R("gamma2", X, ">=0"), R("delta1", 0.0), R("delta2", 0.0), R("chi", X)},
       {"a1", "a2"},
       "two cavities with chi n1 n2"},
      {"degenerate_opo", {R("kappa", X, ">=0"), C("E", X)}, {"a"}, "(I, sqrt(kappa) a, (i/2)(E a+^2 - E* a^2))"},
      {"squeezed_source", {R("kappa", X, ">=0"), C("E", X)}, {"a"}, "OPO cavity used as a squeezed-light source"},
      {"two_mode_squeezer", {R("kappa1", X, ">=0"), R("kappa2", X, ">=0"), C("eps", X)}, {"a1", "a2"}, ""},
      {"optomechanics",
       {R("kappa", X, ">=0"), R("Gamma", 0.0, ">=0"), R("nbar", 0.0, ">=0"), R("delta_c", 0.0), R("delta_m", X), R("g", X)},
       {"a", "b"},
       "radiation-pressure coupling -g a+a (b+ + b)"},
      {"optomechanics_linearized",
       {R("kappa", X, ">=0"), R("Gamma", 0.0, ">=0"), R("nbar", 0.0, ">=0"), R("delta_c", 0.0), R("delta_m", X), R("g", X)},
       {"a", "b"},
       "linearized coupling g (a+ + a)(b+ + b)"},
      {"tla_waveguide", {R("kappa_g", X, ">=0"), R("kappa_perp", 0.0, ">=0"), R("omega", 0.0)}, {"s"}, "two-level atom side-coupled to a waveguide"},
      {"trapped_tla",
       {R("kappa_r", X, ">=0"), R("kappa_l", X, ">=0"), R("kappa_perp", 0.0, ">=0"), R("omega", 0.0), R("mass", 1.0, ">0"),
        R("nu", X, ">0"), R("k0", X)},
       {"s", "x"},
       "two-level atom in a harmonic trap"},
      {"rabi", {R("kappa", X, ">=0"), R("delta_c", 0.0), R("omega", 0.0), R("g", X)}, {"a", "s"}, ""},
      {"jaynes_cummings", {R("kappa", X, ">=0"), R("delta_c", 0.0), R("omega", 0.0), R("g", X)}, {"a", "s"}, ""},
      {"tavis_cummings",
       {R("kappa", X, ">=0"), R("delta_c", 0.0), R("omega", 0.0), R("g", X), Iv("n_atoms", 2, ">=1")},
       {"a", "s1", "s2", "..."},
       "N atoms, Jz = sum sigma_z, J- = sum sigma_-"},
      {"circulator_ideal", {}, {}, "3-port ideal circulator"},
      {"circulator_nonideal", {C("r", X), C("b", X), C("t", X)}, {}, "[[r,b,t],[t,r,b],[b,t,r]]"},
      {"circulator_finite_bw",
       {R("gamma", X, ">=0"), R("delta_cav", 0.0), R("t", X), R("phi", X), Iv("ring", 0, "0|1")},
       {"b1", "b2", "b3"},
       "three coupled cavities; ring=1 replaces b3+ b1 by b3+ b2"},
      {"coherent_source", {C("alpha", X), Opt(P("pulse", false))}, {}, "(1, alpha(t), 0); alpha(t) = alpha xi(t) with a pulse"},
      {"coherent_source_cavity", {C("alpha", X), P("pulse")}, {"a"}, "(I, lambda(t) a, 0) with initial coherent state"},
      {"fock_source", {Iv("n", X, ">=0"), P("pulse")}, {"a"}, "(I, lambda(t) a, 0) with initial Fock state"},
      {"loss_beamsplitter", {R("eta", X, "0<=eta<=1")}, {}, "2-port beamsplitter with power loss eta into port 2"},
      {"mode_loss", {R("rate", X, ">=0"), {"target", "text", true, kNaN, "", "mode label"}}, {}, "(1, sqrt(rate) a_target, 0)"},
      {"dispersion_cavity",
       {R("phi", 0.0), R("omega_c", 0.0), Opt(R("delta_d", X, ">0")), Opt(R("vg", X)), Opt(R("alpha", X)), Opt(R("tau_p", X))},
       {"a"},
       "(e^{i phi}, sqrt(gamma_d) a, omega_d a+a), gamma_d = sqrt(12) delta_d, omega_d = omega_c - delta_d"},
      {"cavity_chain", {Iv("n", X, ">=1"), R("beta", X, ">=0"), R("xi", 0.0)}, {"a1", "a2", "..."}, "N cascaded cavities with equal beta and detuning xi"},
      {"counterprop_pair",
       {R("gamma1", X, ">=0"), R("gamma2", X, ">=0"), R("delta1", 0.0), R("delta2", 0.0), R("phi", 0.0)},
       {"s1", "s2"},
       "two atoms on a bidirectional waveguide"},
      {"coprop_pair",
       {R("gamma1", X, ">=0"), R("gamma2", X, ">=0"), R("delta1", 0.0), R("delta2", 0.0), R("phi", 0.0)},
       {"s1", "s2"},
       "two atoms coupled to two co-propagating modes"},
  };
}

// Parameter access with schema defaults and constraint checks.
class Args {
 public:
  Args(const ComponentSpec& spec, const KindSchema& ks) : spec_(spec), ks_(ks) {
    for (const auto& [k, v] : spec.params) {
      const ParamSchema* s = find(k);
      if (!s) throw Error(ErrorKind::validation, spec.kind + ": unknown parameter '" + k + "'");
      bool ok = (s->type == "pulse") == (v.type == ParamValue::Type::pulse) && (s->type == "text") == (v.type == ParamValue::Type::text);
      if (!ok) throw Error(ErrorKind::validation, spec.kind + ": parameter '" + k + "' expects a " + s->type + " value");
      if (s->type == "real" || s->type == "int") {
        if (std::abs(v.num.imag()) > 0) throw Error(ErrorKind::validation, spec.kind + ": parameter '" + k + "' must be real");
        check(*s, v.num.real());
      }
      if (s->type == "int" && v.num.real() != std::floor(v.num.real()))
        throw Error(ErrorKind::validation, spec.kind + ": parameter '" + k + "' must be an integer");
    }
    for (const auto& s : ks.params)
      if (s.required && !spec.params.count(s.name))
        throw Error(ErrorKind::validation, spec.kind + ": missing required parameter '" + s.name + "'");
  }

  bool has(const std::string& k) const { return spec_.params.count(k) > 0; }
  double r(const std::string& k) const {
    auto it = spec_.params.find(k);
    if (it != spec_.params.end()) return it->second.num.real();
    const ParamSchema* s = find(k);
    if (!s || std::isnan(s->default_value)) throw Error(ErrorKind::validation, spec_.kind + ": missing parameter '" + k + "'");
    return s->default_value;
  }
  cplx c(const std::string& k) const {
    auto it = spec_.params.find(k);
    if (it != spec_.params.end()) return it->second.num;
    return r(k);
  }
  int i(const std::string& k) const { return static_cast<int>(std::lround(r(k))); }
  const Pulse& pulse(const std::string& k) const { return spec_.params.at(k).pulse; }
  const std::string& text(const std::string& k) const { return spec_.params.at(k).text; }

 private:
  const ParamSchema* find(const std::string& k) const {
    for (const auto& s : ks_.params)
      if (s.name == k) return &s;
    return nullptr;
  }
  void check(const ParamSchema& s, double v) const {
    auto fail = [&](const std::string& ineq) {
      throw Error(ErrorKind::validation, spec_.kind + ": constraint " + s.name + " " + ineq + " violated (" + s.name + " = " + fmt12(v) + ")");
    };
    if (s.constraint == ">=0" && v < 0) fail(">= 0");
    if (s.constraint == ">0" && !(v > 0)) fail("> 0");
    if (s.constraint == ">=1" && v < 1) fail(">= 1");
    if (s.constraint == "|eta|<=1" && std::abs(v) > 1) fail("|eta| <= 1");
    if (s.constraint == "0<=eta<=1" && (v < 0 || v > 1)) fail("0 <= eta <= 1");
  }
  const ComponentSpec& spec_;
  const KindSchema& ks_;
};

struct Modes {
  std::string prefix;
  int trunc;
  Operator a(const std::string& m) const { return make_elementary(ElemKind::annihilation, mode_label(prefix, m), trunc); }
  Operator n(const std::string& m) const { return make_elementary(ElemKind::number, mode_label(prefix, m), trunc); }
  Operator sm(const std::string& m) const { return make_elementary(ElemKind::sigma_minus, mode_label(prefix, m), 2); }
  Operator sz(const std::string& m) const { return make_elementary(ElemKind::pauli_z, mode_label(prefix, m), 2); }
  Operator sx(const std::string& m) const { return make_elementary(ElemKind::pauli_x, mode_label(prefix, m), 2); }
};

Operator Z() { return Operator::scalar(0.0); }

SLHTriple diag_triple(const std::vector<Operator>& L, const Operator& H, const std::string& prefix) {
  std::vector<std::string> names;
  for (std::size_t k = 1; k <= L.size(); ++k) names.push_back(prefix.empty() ? "p" + std::to_string(k) : prefix + ":" + std::to_string(k));
  return make_triple(OpMatrix::identity(static_cast<int>(L.size())), L, H, names);
}

SLHTriple scatter_triple(const Eigen::MatrixXcd& S, const std::string& prefix) {
  SLHTriple G = scattering_only(S);
  for (int k = 0; k < G.n_ports; ++k) G.port_names[k] = prefix.empty() ? "p" + std::to_string(k + 1) : prefix + ":" + std::to_string(k + 1);
  return G;
}

void check_unitary(const Eigen::MatrixXcd& S, const std::string& kind) {
  double r = (S.adjoint() * S - Eigen::MatrixXcd::Identity(S.rows(), S.cols())).cwiseAbs().maxCoeff();
  if (r > tol_op) throw Error(ErrorKind::validation, kind + ": scattering matrix not unitary (residual " + fmt12(r) + ")");
}

}  // namespace

const std::vector<KindSchema>& catalog_schema() {
  static const std::vector<KindSchema> s = build_schema();
  return s;
}

const KindSchema* find_kind(const std::string& kind) {
  for (const auto& k : catalog_schema())
    if (k.kind == kind) return &k;
  return nullptr;
}

json catalog_schema_json() {
  json out = json::object();
  for (const auto& k : catalog_schema()) {
    json ps = json::array();
    for (const auto& p : k.params) {
      json pj = {{"name", p.name}, {"type", p.type}, {"required", p.required}};
      if (!p.required && !std::isnan(p.default_value)) pj["default"] = p.default_value;
      if (!p.constraint.empty()) pj["constraint"] = p.constraint;
      ps.push_back(pj);
    }
    out[k.kind] = {{"params", ps}, {"modes", k.modes}, {"doc", k.doc}};
  }
  return out;
}

SLHTriple build_cavity_chain(int N, const std::vector<double>& beta, const std::vector<double>& xi, int trunc,
                             const std::string& prefix) {
  if (N < 1 || static_cast<int>(beta.size()) != N || static_cast<int>(xi.size()) != N)
    throw Error(ErrorKind::validation, "cavity chain needs N >= 1 and N rates/detunings");
  Modes m{prefix, trunc};
  std::vector<Operator> as;
  for (int k = 0; k < N; ++k) {
    if (beta[k] < 0) throw Error(ErrorKind::validation, "cavity chain: constraint beta >= 0 violated");
    as.push_back(m.a("a" + std::to_string(k + 1)));
  }
  Operator L = Z(), H = Z();
  for (int k = 0; k < N; ++k) {
    L = L + std::sqrt(beta[k]) * as[k];
    H = H + xi[k] * as[k].adjoint() * as[k];
    for (int j = k + 1; j < N; ++j)
      H = H + cplx(0, -0.5) * std::sqrt(beta[j] * beta[k]) * (as[j].adjoint() * as[k] - as[k].adjoint() * as[j]);
  }
  return diag_triple({L}, H, prefix);
}

SLHTriple build_counterpropagating_pair(double g1, double g2, double d1, double d2, double phi, const std::string& prefix) {
  if (g1 < 0 || g2 < 0) throw Error(ErrorKind::validation, "counter-propagating pair: rates must be >= 0");
  Modes m{prefix, 2};
  Operator s1 = m.sm("s1"), s2 = m.sm("s2");
  cplx e = std::exp(cplx(0, phi));
  Operator L1 = std::sqrt(g2 / 2) * s2 + e * std::sqrt(g1 / 2) * s1;
  Operator L2 = std::sqrt(g1 / 2) * s1 + e * std::sqrt(g2 / 2) * s2;
  Operator H = -d2 / 2 * m.sz("s2") - d1 / 2 * m.sz("s1") +
               std::sqrt(g1 * g2) / 2 * std::sin(phi) * (s1 * s2.adjoint() + s1.adjoint() * s2);
  SLHTriple G = diag_triple({L1, L2}, H, prefix);
  G.S = (OpMatrix::identity(2) * OpMatrix::from_scalar(e * Eigen::MatrixXcd::Identity(2, 2))).embed(G.space);
  return G;
}

SLHTriple build_copropagating_pair(double g1, double g2, double d1, double d2, double phi, const std::string& prefix) {
  if (g1 < 0 || g2 < 0) throw Error(ErrorKind::validation, "co-propagating pair: rates must be >= 0");
  Modes m{prefix, 2};
  Operator s1 = m.sm("s1"), s2 = m.sm("s2");
  cplx e = std::exp(cplx(0, phi));
  Operator L = std::sqrt(g2 / 2) * s2 + e * std::sqrt(g1 / 2) * s1;
  Operator H = -d2 / 2 * m.sz("s2") - d1 / 2 * m.sz("s1") +
               std::sqrt(g1 * g2) / 2 * std::sin(phi) * (s1 * s2.adjoint() + s1.adjoint() * s2) +
               cplx(0, -0.5) * std::sqrt(g1 * g2) * std::cos(phi) * (s1 * s2.adjoint() - s1.adjoint() * s2);
  SLHTriple G = diag_triple({L, L}, H, prefix);
  G.S = OpMatrix::from_scalar(e * Eigen::MatrixXcd::Identity(2, 2)).embed(G.space);
  return G;
}

namespace {

SLHTriple half_atom(const Modes& m, const std::string& s, double g, double d) {
  return make_triple(OpMatrix::identity(1), {std::sqrt(g / 2) * m.sm(s)}, -d / 2 * m.sz(s));
}

SLHTriple phase(double phi) {
  Eigen::MatrixXcd p(1, 1);
  p << std::exp(cplx(0, phi));
  return scattering_only(p);
}

}  // namespace

SLHTriple derive_counterpropagating_pair(double g1, double g2, double d1, double d2, double phi, const std::string& prefix) {
  Modes m{prefix, 2};
  SLHTriple GR = series(half_atom(m, "s2", g2, d2), series(phase(phi), half_atom(m, "s1", g1, d1)));
  SLHTriple GL = series(half_atom(m, "s1", g1, 0.0), series(phase(phi), half_atom(m, "s2", g2, 0.0)));
  return concat(GR, GL);
}

SLHTriple derive_copropagating_pair(double g1, double g2, double d1, double d2, double phi, const std::string& prefix) {
  Modes m{prefix, 2};
  SLHTriple first = concat(half_atom(m, "s1", g1, d1), half_atom(m, "s1", g1, 0.0));
  SLHTriple second = concat(half_atom(m, "s2", g2, d2), half_atom(m, "s2", g2, 0.0));
  return series(second, series(concat(phase(phi), phase(phi)), first));
}

SLHTriple instantiate(const ComponentSpec& spec) {
  const KindSchema* ks = find_kind(spec.kind);
  if (!ks) throw Error(ErrorKind::validation, "unknown kind '" + spec.kind + "'");
  if (spec.truncation < 2) throw Error(ErrorKind::validation, spec.kind + ": truncation must be >= 2");
  Args A(spec, *ks);
  const std::string& k = spec.kind;
  const std::string& pre = spec.mode_label_prefix;
  Modes m{pre, spec.truncation};
  const cplx i(0, 1);

  if (k == "phase_shifter") {
    Eigen::MatrixXcd S(1, 1);
    S << std::exp(i * A.r("phi"));
    return scatter_triple(S, pre);
  }
  if (k == "beamsplitter") {
    Eigen::MatrixXcd S(2, 2);
    bool explicit_form = A.has("r11") || A.has("t12") || A.has("t21") || A.has("r22");
    if (explicit_form) {
      if (A.has("eta")) throw Error(ErrorKind::validation, "beamsplitter: give either eta or r11,t12,t21,r22");
      S << A.c("r11"), A.c("t12"), A.c("t21"), A.c("r22");
      check_unitary(S, k);
    } else {
      double eta = A.has("eta") ? A.r("eta") : std::sqrt(0.5);
      double c = std::sqrt(1 - eta * eta);
      S << c, -eta, eta, c;
    }
    return scatter_triple(S, pre);
  }
  if (k == "one_sided_cavity" || k == "kerr_cavity") {
    Operator a = m.a("a"), n = m.n("a");
    Operator H = A.r("delta") * n;
    if (k == "kerr_cavity") H = H + A.r("chi") * n * n;
    return diag_triple({std::sqrt(A.r("gamma")) * a}, H, pre);
  }
  if (k == "fabry_perot") {
    Operator a = m.a("a");
    return diag_triple({std::sqrt(A.r("gamma1")) * a, std::sqrt(A.r("gamma2")) * a}, A.r("delta") * m.n("a"), pre);
  }
  if (k == "cross_kerr_cavities") {
    Operator H = A.r("delta1") * m.n("a1") + A.r("delta2") * m.n("a2") + A.r("chi") * m.n("a1") * m.n("a2");
    return diag_triple({std::sqrt(A.r("gamma1")) * m.a("a1"), std::sqrt(A.r("gamma2")) * m.a("a2")}, H, pre);
  }
  if (k == "degenerate_opo" || k == "squeezed_source") {
    Operator a = m.a("a"), ad = a.adjoint();
    cplx E = A.c("E");
    Operator H = 0.5 * i * (E * ad * ad - std::conj(E) * a * a);
    return diag_triple({std::sqrt(A.r("kappa")) * a}, H, pre);
  }
  if (k == "two_mode_squeezer") {
    Operator a1 = m.a("a1"), a2 = m.a("a2");
    cplx e = A.c("eps");
    Operator H = 0.5 * i * (e * a1.adjoint() * a2.adjoint() - std::conj(e) * a1 * a2);
    return diag_triple({std::sqrt(A.r("kappa1")) * a1, std::sqrt(A.r("kappa2")) * a2}, H, pre);
  }
  if (k == "optomechanics" || k == "optomechanics_linearized") {
    Operator a = m.a("a"), b = m.a("b");
    double G = A.r("Gamma"), nb = A.r("nbar");
    Operator H = A.r("delta_c") * m.n("a") + A.r("delta_m") * m.n("b");
    if (k == "optomechanics")
      H = H - A.r("g") * m.n("a") * (b.adjoint() + b);
    else
      H = H + A.r("g") * (a.adjoint() + a) * (b.adjoint() + b);
    return diag_triple({std::sqrt(A.r("kappa")) * a, std::sqrt(G * (nb + 1)) * b, std::sqrt(G * nb) * b.adjoint()}, H, pre);
  }
  if (k == "tla_waveguide") {
    Operator s = m.sm("s");
    return diag_triple({std::sqrt(A.r("kappa_g")) * s, std::sqrt(A.r("kappa_perp")) * s}, 0.5 * A.r("omega") * m.sz("s"), pre);
  }
  if (k == "trapped_tla") {
    Operator b = m.a("x");
    double mass = A.r("mass"), nu = A.r("nu"), k0 = A.r("k0");
    Operator x = std::sqrt(1.0 / (2 * mass * nu)) * (b + b.adjoint());
    Operator p = i * std::sqrt(mass * nu / 2) * (b.adjoint() - b);
    DMat kx = (i * k0 * x).dense();
    DMat ep = kx.exp(), em = (-kx).exp();
    Operator Ep(x.space(), ep.sparseView()), Em(x.space(), em.sparseView());
    Operator s = m.sm("s");
    Operator H = 0.5 * A.r("omega") * m.sz("s") + (1.0 / (2 * mass)) * p * p + 0.5 * mass * nu * nu * x * x;
    return diag_triple({std::sqrt(A.r("kappa_r")) * s * Ep, std::sqrt(A.r("kappa_l")) * s * Em, std::sqrt(A.r("kappa_perp")) * s}, H, pre);
  }
  if (k == "rabi" || k == "jaynes_cummings") {
    Operator a = m.a("a"), s = m.sm("s");
    Operator H = A.r("delta_c") * m.n("a") + 0.5 * A.r("omega") * m.sz("s");
    if (k == "rabi")
      H = H + A.r("g") * m.sx("s") * (a.adjoint() + a);
    else
      H = H + A.r("g") * (s * a.adjoint() + s.adjoint() * a);
    return diag_triple({std::sqrt(A.r("kappa")) * a}, H, pre);
  }
  if (k == "tavis_cummings") {
    Operator a = m.a("a");
    Operator Jm = Z(), Jz = Z();
    for (int q = 1; q <= A.i("n_atoms"); ++q) {
      Jm = Jm + m.sm("s" + std::to_string(q));
      Jz = Jz + m.sz("s" + std::to_string(q));
    }
    Operator H = A.r("delta_c") * m.n("a") + 0.5 * A.r("omega") * Jz + A.r("g") * (Jm * a.adjoint() + Jm.adjoint() * a);
    return diag_triple({std::sqrt(A.r("kappa")) * a}, H, pre);
  }
  if (k == "circulator_ideal") {
    Eigen::MatrixXcd S(3, 3);
    S << 0, 0, 1, 1, 0, 0, 0, 1, 0;
    return scatter_triple(S, pre);
  }
  if (k == "circulator_nonideal") {
    cplx r = A.c("r"), b = A.c("b"), t = A.c("t");
    double n = std::norm(t) + std::norm(r) + std::norm(b);
    if (std::abs(n - 1) > tol_op)
      throw Error(ErrorKind::validation, "circulator_nonideal: constraint |t|^2+|r|^2+|b|^2 = 1 violated (value " + fmt12(n) + ")");
    cplx o = r * std::conj(t) + t * std::conj(b) + b * std::conj(r);
    if (std::abs(o) > tol_op)
      throw Error(ErrorKind::validation, "circulator_nonideal: constraint r t* + t b* + b r* = 0 violated (|value| " + fmt12(std::abs(o)) + ")");
    Eigen::MatrixXcd S(3, 3);
    S << r, b, t, t, r, b, b, t, r;
    return scatter_triple(S, pre);
  }
  if (k == "circulator_finite_bw") {
    Operator b1 = m.a("b1"), b2 = m.a("b2"), b3 = m.a("b3");
    double g = A.r("gamma"), dc = A.r("delta_cav"), t = A.r("t");
    cplx e = std::exp(i * A.r("phi"));
    Operator last = A.i("ring") == 1 ? b3.adjoint() * b2 : b3.adjoint() * b1;
    Operator hop = b1.adjoint() * b3 + e * b2.adjoint() * b1 + last;
    Operator H = dc * (m.n("b1") + m.n("b2") + m.n("b3")) + t * (hop + hop.adjoint());
    return diag_triple({std::sqrt(g) * b1, std::sqrt(g) * b2, std::sqrt(g) * b3}, H, pre);
  }
  if (k == "coherent_source") {
    cplx alpha = A.c("alpha");
    Operator L = A.has("pulse") ? Operator::timed(xi_envelope(A.pulse("pulse"), alpha), Operator::scalar(1.0))
                                : Operator::scalar(alpha);
    return diag_triple({L}, Z(), pre);
  }
  if (k == "coherent_source_cavity" || k == "fock_source") {
    Operator a = m.a("a");
    SLHTriple G = diag_triple({Operator::timed(lambda_envelope(A.pulse("pulse")), a)}, Z(), pre);
    std::string lab = mode_label(pre, "a");
    G.local_states[lab] = k == "fock_source" ? fock_density(spec.truncation, A.i("n")) : coherent_density(spec.truncation, A.c("alpha"));
    return G;
  }
  if (k == "loss_beamsplitter") {
    double eta = A.r("eta");
    Eigen::MatrixXcd S(2, 2);
    S << std::sqrt(1 - eta), -std::sqrt(eta), std::sqrt(eta), std::sqrt(1 - eta);
    return scatter_triple(S, pre);
  }
  if (k == "mode_loss") {
    Operator a = make_elementary(ElemKind::annihilation, A.text("target"), spec.truncation);
    return diag_triple({std::sqrt(A.r("rate")) * a}, Z(), pre);
  }
  if (k == "dispersion_cavity") {
    double dd;
    if (A.has("delta_d")) {
      dd = A.r("delta_d");
    } else if (A.has("vg") && A.has("alpha") && A.has("tau_p")) {
      double vg = A.r("vg"), al = A.r("alpha"), tp = A.r("tau_p");
      double arg = std::sqrt(3.0) * vg * vg / (8 * al * tp);
      if (!(arg > 0)) throw Error(ErrorKind::validation, "dispersion_cavity: constraint sqrt(3) vg^2 / (8 alpha tau_p) > 0 violated");
      dd = std::sqrt(arg);
    } else {
      throw Error(ErrorKind::validation, "dispersion_cavity: give delta_d or (vg, alpha, tau_p)");
    }
    double gd = std::sqrt(12.0) * dd, wd = A.r("omega_c") - dd;
    SLHTriple G = diag_triple({std::sqrt(gd) * m.a("a")}, wd * m.n("a"), pre);
    G.S(0, 0) = Operator::identity(G.space) * std::exp(i * A.r("phi"));
    return G;
  }
  if (k == "cavity_chain") {
    int N = A.i("n");
    return build_cavity_chain(N, std::vector<double>(N, A.r("beta")), std::vector<double>(N, A.r("xi")), spec.truncation, pre);
  }
  if (k == "counterprop_pair")
    return build_counterpropagating_pair(A.r("gamma1"), A.r("gamma2"), A.r("delta1"), A.r("delta2"), A.r("phi"), pre);
  if (k == "coprop_pair")
    return build_copropagating_pair(A.r("gamma1"), A.r("gamma2"), A.r("delta1"), A.r("delta2"), A.r("phi"), pre);
  throw Error(ErrorKind::validation, "kind '" + k + "' has no factory");
}

}  // namespace qnet
