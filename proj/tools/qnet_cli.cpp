#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "qnet/catalog.hpp"
#include "qnet/dynamics.hpp"
#include "qnet/linear.hpp"
#include "qnet/netlang.hpp"
#include "qnet/reduction.hpp"
#include "qnet/version.hpp"

using namespace qnet;
using namespace qnet::netlang;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_parse = 2;
constexpr int exit_elaboration = 3;

// Carries a diagnostic already formatted for stderr plus its exit code.
struct Abort {
  int code;
};

std::string current_file;

[[noreturn]] void fail(int code, const std::string& msg) {
  std::cerr << (current_file.empty() ? std::string("qnet") : current_file) << ": error: " << msg << "\n";
  throw Abort{code};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(exit_failure, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

NetworkDescription load_ast(const std::string& path) {
  current_file = path;
  return parse(read_file(path));
}

Elaborated load_network(const std::string& path) { return elaborate(load_ast(path)); }

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path, std::ios::binary);
      if (!file_) fail(exit_failure, "cannot write '" + path + "'");
    }
  }
  std::ostream& os() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

int port_index(const Elaborated& net, const std::string& name) {
  for (std::size_t k = 0; k < net.port_labels.size(); ++k)
    if (net.port_labels[k] == name) return static_cast<int>(k) + 1;
  int v = 0;
  auto r = std::from_chars(name.data(), name.data() + name.size(), v);
  if (r.ec == std::errc() && r.ptr == name.data() + name.size() && v >= 1 && v <= static_cast<int>(net.port_labels.size())) return v;
  std::string known;
  for (const auto& l : net.port_labels) known += (known.empty() ? "" : ", ") + l;
  fail(exit_failure, "unknown port '" + name + "' (ports: " + known + ")");
}

std::pair<std::string, std::string> split_eq(const std::string& s, const std::string& what) {
  auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) fail(exit_failure, what + " '" + s + "' must look like <name>=<value>");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

double eval_real_text(const std::string& text, const std::string& what) {
  cplx v = eval_number(parse_expression(text));
  if (std::abs(v.imag()) > 1e-12) fail(exit_failure, what + " must be real");
  return v.real();
}

Pulse pulse_from(const Expr& e) {
  if (e.kind != Expr::Kind::named_call) fail(exit_failure, "expected a pulse such as gaussian(tc=5, sigma=1), found '" + print(e) + "'");
  std::map<std::string, double> p;
  for (std::size_t k = 0; k < e.args.size(); ++k) p[e.arg_names[k]] = eval_number(e.args[k]).real();
  return make_pulse(e.name, p);
}

// ---------------------------------------------------------------- drives

struct Drive {
  enum class Kind { vacuum, coherent, fock, gaussian } kind = Kind::vacuum;
  int port = 1;
  cplx alpha = 0.0;
  std::optional<Pulse> pulse;
  int n = 0;
  GaussianEnv gauss;
};

Drive parse_drive(const std::vector<std::string>& specs, const Elaborated& net) {
  Drive d;
  for (const auto& s : specs) {
    auto [port, text] = split_eq(s, "drive");
    Expr e = parse_expression(text);
    int p = port_index(net, port);
    if (e.kind == Expr::Kind::ident && e.name == "vacuum") continue;
    if (d.kind != Drive::Kind::vacuum) fail(exit_failure, "only one non-vacuum drive is supported per run");
    d.port = p;
    if (e.kind == Expr::Kind::call && e.name == "coherent" && (e.args.size() == 1 || e.args.size() == 2)) {
      d.kind = Drive::Kind::coherent;
      d.alpha = eval_number(e.args[0]);
      if (e.args.size() == 2) d.pulse = pulse_from(e.args[1]);
    } else if (e.kind == Expr::Kind::call && e.name == "fock" && e.args.size() == 2) {
      d.kind = Drive::Kind::fock;
      double n = eval_number(e.args[0]).real();
      if (n != std::round(n) || n < 0) fail(exit_failure, "fock drive photon number must be a non-negative integer");
      d.n = static_cast<int>(n);
      d.pulse = pulse_from(e.args[1]);
    } else if (e.kind == Expr::Kind::named_call && e.name == "gaussian") {
      d.kind = Drive::Kind::gaussian;
      for (std::size_t k = 0; k < e.args.size(); ++k) {
        const std::string& a = e.arg_names[k];
        cplx v = eval_number(e.args[k]);
        if (a == "N") {
          d.gauss.N = v.real();
        } else if (a == "M") {
          d.gauss.M = v;
        } else if (a == "alpha") {
          d.gauss.alpha = v;
        } else {
          fail(exit_failure, "gaussian drive accepts N, M and alpha, not '" + a + "'");
        }
      }
      d.gauss.validate();
    } else if (e.kind == Expr::Kind::named_call && e.name == "squeezed") {
      d.kind = Drive::Kind::gaussian;
      double r = 0.0, phi = 0.0, nth = 0.0;
      for (std::size_t k = 0; k < e.args.size(); ++k) {
        const std::string& a = e.arg_names[k];
        double v = eval_number(e.args[k]).real();
        if (a == "r") {
          r = v;
        } else if (a == "phi") {
          phi = v;
        } else if (a == "nth") {
          nth = v;
        } else {
          fail(exit_failure, "squeezed drive accepts r, phi and nth, not '" + a + "'");
        }
      }
      d.gauss = GaussianEnv::from_squeezing(r, phi, nth);
    } else {
      fail(exit_failure, "unknown drive '" + text +
                             "' (use vacuum, coherent(alpha[, pulse]), fock(n, pulse), gaussian(N=, M=, alpha=), squeezed(r=, phi=, nth=))");
    }
  }
  return d;
}

Superoperator master_generator(const SLHTriple& G, const Drive& d) {
  switch (d.kind) {
    case Drive::Kind::coherent:
      if (d.pulse) return liouvillian_coherent(G, xi_envelope(*d.pulse, d.alpha), d.port);
      return liouvillian_coherent(G, d.alpha, d.port);
    case Drive::Kind::gaussian: return liouvillian_gaussian(G, d.gauss, d.port);
    default: return liouvillian(G);
  }
}

// ---------------------------------------------------------------- simulate

struct SimConfig {
  std::string file;
  double t_start = 0.0;
  double t_end = 0.0;
  int samples = 101;
  std::vector<std::string> obs;
  std::vector<std::string> drives;
  std::vector<std::string> flux;
  double atol = 1e-10;
  double rtol = 1e-8;
  double fixed_step = 0.0;
  double guard = trunc_guard;
  std::string format = "csv";
  std::string output;
  std::string sweep;
};

std::vector<double> sample_times(const SimConfig& c) {
  if (!(c.t_start < c.t_end)) fail(exit_failure, "t-start must be smaller than t-end");
  if (c.samples < 2) fail(exit_failure, "samples must be at least 2");
  std::vector<double> t;
  for (int k = 0; k < c.samples; ++k) t.push_back(c.t_start + (c.t_end - c.t_start) * k / (c.samples - 1));
  return t;
}

std::vector<Observable> observables(const std::vector<std::string>& texts, const Elaborated& net) {
  std::vector<Observable> out;
  if (texts.empty())
    for (const auto& f : net.G.space.factors()) out.push_back({f.label + ".n", observable(f.label + ".n", net)});
  for (const auto& t : texts) out.push_back({t, observable(t, net)});
  return out;
}

TrajectoryTable run_simulation(const Elaborated& net, const SimConfig& c) {
  const SLHTriple& G = net.G;
  std::vector<double> times = sample_times(c);
  Drive d = parse_drive(c.drives, net);
  std::vector<Observable> obs = observables(c.obs, net);
  std::vector<int> flux_ports;
  for (const auto& f : c.flux) flux_ports.push_back(port_index(net, f));
  MasterOptions mo;
  mo.ode.atol = c.atol;
  mo.ode.rtol = c.rtol;
  mo.truncation_guard = c.guard;
  if (c.fixed_step > 0) {
    mo.ode.fixed_step = true;
    mo.ode.h = c.fixed_step;
  }
  DMat rho0 = initial_density(G);
  TrajectoryTable tab;
  if (d.kind == Drive::Kind::fock) {
    FockHierarchy F(G, xi_envelope(*d.pulse), d.port);
    int out_port = flux_ports.empty() ? d.port : flux_ports.front();
    FockRun run = evolve_fock(F, fock_number_state(rho0, d.n), times, out_port, mo);
    std::vector<DMat> phys;
    for (const auto& s : run.states) phys.push_back(s.physical());
    tab = tabulate(G.space, run.t, phys, obs);
    for (int p : flux_ports) {
      tab.names.push_back("flux[" + net.port_labels[static_cast<std::size_t>(p - 1)] + "]");
      tab.hermitian.push_back(true);
      for (std::size_t k = 0; k < run.t.size(); ++k) tab.values[k].push_back(F.flux(run.t[k], run.states[k], p));
    }
    if (!flux_ports.empty()) {
      tab.names.push_back("emitted[" + net.port_labels[static_cast<std::size_t>(out_port - 1)] + "]");
      tab.hermitian.push_back(true);
      for (std::size_t k = 0; k < run.t.size(); ++k) tab.values[k].push_back(run.emitted[k]);
    }
    return tab;
  }
  if (d.kind == Drive::Kind::gaussian && !flux_ports.empty()) fail(exit_failure, "flux columns are not available with a gaussian drive");
  MasterRun run = evolve(master_generator(G, d), rho0, times, mo);
  tab = tabulate(G.space, run.t, run.rho, obs);
  for (int p : flux_ports) {
    tab.names.push_back("flux[" + net.port_labels[static_cast<std::size_t>(p - 1)] + "]");
    tab.hermitian.push_back(true);
    for (std::size_t k = 0; k < run.t.size(); ++k) {
      cplx alpha = 0.0;
      if (d.kind == Drive::Kind::coherent) alpha = d.pulse ? d.alpha * d.pulse->xi(run.t[k]) : d.alpha;
      tab.values[k].push_back(output_flux(G, run.rho[k], p, run.t[k], alpha, d.port));
    }
  }
  return tab;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

json run_meta(const Elaborated& net, const SimConfig& c) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(triple_to_json(net.G).dump())));
  json m;
  m["file"] = c.file;
  m["triple_hash"] = hash;
  m["atol"] = c.atol;
  m["rtol"] = c.rtol;
  m["fixed_step"] = c.fixed_step;
  m["drives"] = c.drives;
  m["determinism"] = "no random numbers are used; fixed-step runs are byte-reproducible";
  m["version"] = version_string;
  return m;
}

struct SweepSpec {
  std::string instance, param;
  std::vector<double> values;
};

SweepSpec parse_sweep(const std::string& s, const NetworkDescription& ast) {
  auto [target, range] = split_eq(s, "sweep");
  auto dot = target.find('.');
  if (dot == std::string::npos) fail(exit_failure, "sweep target must be <instance>.<param>");
  SweepSpec sw{target.substr(0, dot), target.substr(dot + 1), {}};
  auto it = std::find_if(ast.instances.begin(), ast.instances.end(), [&](const ComponentDecl& d) { return d.name == sw.instance; });
  if (it == ast.instances.end()) fail(exit_failure, "sweep: unknown instance '" + sw.instance + "'");
  std::vector<std::string> parts;
  std::stringstream ss(range);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() != 3) fail(exit_failure, "sweep range must be lo:hi:n");
  double lo = eval_real_text(parts[0], "sweep bound"), hi = eval_real_text(parts[1], "sweep bound");
  double n = eval_real_text(parts[2], "sweep count");
  if (n < 1 || n != std::round(n)) fail(exit_failure, "sweep count must be a positive integer");
  for (int k = 0; k < static_cast<int>(n); ++k) sw.values.push_back(n == 1 ? lo : lo + (hi - lo) * k / (n - 1));
  return sw;
}

NetworkDescription with_param(NetworkDescription ast, const std::string& inst, const std::string& param, double v) {
  for (auto& d : ast.instances) {
    if (d.name != inst) continue;
    Expr e;
    e.kind = Expr::Kind::number;
    e.value = v;
    auto it = std::find_if(d.args.begin(), d.args.end(), [&](const Arg& a) { return a.name == param; });
    if (it != d.args.end()) {
      it->value = e;
    } else {
      d.args.push_back({param, e, d.pos});
    }
  }
  return ast;
}

void emit_table(std::ostream& os, const TrajectoryTable& tab, const std::string& format, const json& meta) {
  if (format == "json") {
    os << trajectory_json(tab, meta).dump(2) << "\n";
  } else {
    write_csv(os, tab);
  }
}

int cmd_simulate(const SimConfig& c) {
  NetworkDescription ast = load_ast(c.file);
  if (c.sweep.empty()) {
    Elaborated net = elaborate(ast);
    TrajectoryTable tab = run_simulation(net, c);
    Output out(c.output);
    emit_table(out.os(), tab, c.format, run_meta(net, c));
    return exit_ok;
  }
  SweepSpec sw = parse_sweep(c.sweep, ast);
  std::size_t n = sw.values.size();
  std::vector<std::string> text(n);
  std::vector<std::string> errors(n);
  std::vector<int> codes(n, exit_ok);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        Elaborated net = elaborate(with_param(ast, sw.instance, sw.param, sw.values[k]));
        TrajectoryTable tab = run_simulation(net, c);
        std::ostringstream os;
        json meta = run_meta(net, c);
        meta["sweep"] = {{"param", sw.instance + "." + sw.param}, {"value", sw.values[k]}};
        emit_table(os, tab, c.format, meta);
        text[k] = os.str();
      } catch (const NetError& e) {
        errors[k] = std::to_string(e.pos().line) + ":" + std::to_string(e.pos().col) + ": error: " + e.message();
        codes[k] = e.kind() == ErrorKind::parse ? exit_parse : exit_elaboration;
      } catch (const std::exception& e) {
        errors[k] = std::string("error: ") + e.what();
        codes[k] = exit_failure;
      } catch (const Abort& a) {
        codes[k] = a.code;
      }
    }
  };
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < std::min<std::size_t>(hw, n); ++k) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t k = 0; k < n; ++k)
    if (codes[k] != exit_ok) {
      if (!errors[k].empty()) std::cerr << c.file << ": sweep value " << fmt12(sw.values[k]) << ": " << errors[k] << "\n";
      return codes[k];
    }
  Output out(c.output);
  std::ostream& os = out.os();
  if (c.format == "json") {
    os << "[\n";
    for (std::size_t k = 0; k < n; ++k) {
      std::string s = text[k];
      if (!s.empty() && s.back() == '\n') s.pop_back();
      os << s << (k + 1 < n ? ",\n" : "\n");
    }
    os << "]\n";
    return exit_ok;
  }
  std::string col = sw.instance + "." + sw.param;
  for (std::size_t k = 0; k < n; ++k) {
    std::istringstream in(text[k]);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        if (k == 0) os << col << "," << line << "\n";
        header = false;
        continue;
      }
      os << fmt12(sw.values[k]) << "," << line << "\n";
    }
  }
  return exit_ok;
}

// ---------------------------------------------------------------- other commands

int cmd_compose(const std::string& file, const std::string& emit, const std::string& output) {
  if (emit == "ast") {
    json j = ast_to_json(load_ast(file));
    Output out(output);
    out.os() << j.dump(2) << "\n";
    return exit_ok;
  }
  Elaborated net = load_network(file);
  Output out(output);
  out.os() << triple_to_json(net.G).dump(2) << "\n";
  return exit_ok;
}

int cmd_steady(const std::string& file, const std::vector<std::string>& obs_text, const std::vector<std::string>& drives,
               const std::vector<std::string>& flux, const std::string& output) {
  Elaborated net = load_network(file);
  Drive d = parse_drive(drives, net);
  if (d.kind == Drive::Kind::fock) fail(exit_failure, "steady-state does not accept a fock drive");
  if (d.pulse) fail(exit_failure, "steady-state requires a time-independent drive");
  DensityState ss = steady_state(master_generator(net.G, d));
  DMat rho = ss.rho.dense();
  Output out(output);
  std::ostream& os = out.os();
  os << "observable,re,im\n";
  for (const auto& o : observables(obs_text, net)) {
    cplx v = expect(rho, o.op, net.G.space);
    os << o.name << "," << fmt12(v.real()) << "," << fmt12(v.imag()) << "\n";
  }
  for (const auto& f : flux) {
    int p = port_index(net, f);
    if (d.kind == Drive::Kind::gaussian) fail(exit_failure, "flux is not available with a gaussian drive");
    double v = output_flux(net.G, rho, p, 0.0, d.kind == Drive::Kind::coherent ? d.alpha : cplx(0.0), d.port);
    os << "flux[" << net.port_labels[static_cast<std::size_t>(p - 1)] << "]," << fmt12(v) << "," << fmt12(0.0) << "\n";
  }
  return exit_ok;
}

int cmd_transfer(const std::string& file, const std::string& grid, bool active, bool quadrature, const std::string& emit,
                 const std::string& output) {
  Elaborated net = load_network(file);
  LinearModel m = extract_linear(net.G, active || quadrature);
  if (quadrature) m = to_quadrature(m);
  Output out(output);
  std::ostream& os = out.os();
  if (emit == "abcd") {
    json j = linear_model_to_json(m);
    j["realizability"] = realizability_check(m).to_json();
    j["max_real_eigenvalue"] = round12(max_real_eigenvalue(m));
    os << j.dump(2) << "\n";
    return exit_ok;
  }
  std::vector<std::string> parts;
  std::stringstream ss(grid);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() != 3) fail(exit_failure, "omega grid must be lo:hi:n");
  double lo = eval_real_text(parts[0], "omega bound"), hi = eval_real_text(parts[1], "omega bound");
  double n = eval_real_text(parts[2], "omega count");
  if (n < 1 || n != std::round(n)) fail(exit_failure, "omega count must be a positive integer");
  long rows = m.D.rows(), cols = m.D.cols();
  os << "omega";
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) os << ",re_xi_" << i + 1 << "_" << j + 1 << ",im_xi_" << i + 1 << "_" << j + 1;
  os << "\n";
  for (int k = 0; k < static_cast<int>(n); ++k) {
    double w = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
    Eigen::MatrixXcd X = transfer_function(m, cplx(0.0, w));
    os << fmt12(w);
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) os << "," << fmt12(X(i, j).real()) << "," << fmt12(X(i, j).imag());
    os << "\n";
  }
  return exit_ok;
}

int cmd_eliminate(const std::string& file, const std::string& p0, const std::vector<std::string>& scale, bool report,
                  const std::string& output) {
  NetworkDescription ast = load_ast(file);
  Elaborated net = elaborate(ast);
  Operator P0 = projector_spec(p0, net);
  EliminationProblem prob;
  if (scale.empty()) {
    prob = decompose(net.G, P0);
  } else {
    std::vector<std::tuple<std::string, std::string, double>> sc;
    for (const auto& s : scale) {
      auto [target, pw] = split_eq(s, "scale");
      auto dot = target.find('.');
      if (dot == std::string::npos) fail(exit_failure, "scale target must be <instance>.<param>");
      sc.emplace_back(target.substr(0, dot), target.substr(dot + 1), eval_real_text(pw, "scale power"));
    }
    for (const auto& [inst, param, pw] : sc) {
      auto it = std::find_if(ast.instances.begin(), ast.instances.end(), [&](const ComponentDecl& d) { return d.name == inst; });
      if (it == ast.instances.end()) fail(exit_failure, "scale: unknown instance '" + inst + "'");
      auto at = std::find_if(it->args.begin(), it->args.end(), [&](const Arg& a) { return a.name == param; });
      if (at == it->args.end()) fail(exit_failure, "scale: '" + inst + "' has no explicit parameter '" + param + "'");
    }
    auto family = [&](double k) {
      NetworkDescription a = ast;
      for (const auto& [inst, param, pw] : sc)
        for (auto& d : a.instances)
          if (d.name == inst)
            for (auto& arg : d.args)
              if (arg.name == param) {
                Expr f;
                f.kind = Expr::Kind::number;
                f.value = std::pow(k, pw);
                Expr prod;
                prod.kind = Expr::Kind::binary;
                prod.op = '*';
                prod.args = {f, arg.value};
                arg.value = prod;
              }
      return elaborate(a).G;
    };
    prob = decompose_scaled(family, P0);
  }
  EliminationResult r = eliminate(prob);
  json j = triple_to_json(r.reduced);
  Output out(output);
  if (report) {
    json full;
    full["reduced"] = j;
    full["product_form"] = r.product_form;
    full["eliminated_factors"] = r.eliminated_factors;
    full["assumptions"] = r.report.to_json();
    out.os() << full.dump(2) << "\n";
  } else {
    out.os() << j.dump(2) << "\n";
  }
  return exit_ok;
}

int cmd_check(const std::string& file, const std::string& output) {
  SLHTriple G;
  std::vector<std::string> labels;
  if (file.size() >= 5 && file.substr(file.size() - 5) == ".json") {
    current_file = file;
    json j;
    try {
      j = json::parse(read_file(file));
    } catch (const json::exception& e) {
      fail(exit_parse, std::string("invalid JSON: ") + e.what());
    }
    G = triple_from_json(j);
  } else {
    G = load_network(file).G;
  }
  InvariantReport inv = check_invariants(G);
  json rep;
  rep["n_ports"] = G.n_ports;
  json fs = json::array();
  for (const auto& f : G.space.factors()) fs.push_back({{"label", f.label}, {"dim", f.dim}});
  rep["factors"] = fs;
  rep["unitarity_residual"] = round12(inv.unitarity);
  rep["hermiticity_residual"] = round12(inv.hermiticity);
  rep["ok"] = inv.ok();
  try {
    LinearModel m = extract_linear(G);
    RealizabilityReport rr = realizability_check(m);
    rep["linear"] = {{"form", m.form == LinearForm::passive ? "passive" : "active"},
                     {"realizability", rr.to_json()},
                     {"realizable", rr.ok()},
                     {"max_real_eigenvalue", round12(max_real_eigenvalue(m))}};
  } catch (const Error& e) {
    rep["linear"] = {{"form", "nonlinear"}, {"reason", e.what()}};
  }
  Output out(output);
  out.os() << rep.dump(2) << "\n";
  return inv.ok() ? exit_ok : exit_failure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantum input-output network composer and simulator"};
  app.set_version_flag("--version", std::string("qnet ") + version_string + " (triple schema " + std::to_string(slh_schema_version) + ")");
  app.set_config("--config", "", "key=value configuration file; command-line flags take precedence");
  app.require_subcommand(1);

  std::string file, output, emit = "slh";
  auto* compose = app.add_subcommand("compose", "Parse and elaborate a network, print its SLH triple as JSON");
  compose->add_option("file", file, ".qnet network file")->required();
  compose->add_option("--emit", emit, "Output stage")->check(CLI::IsMember({"ast", "slh"}));
  compose->add_option("-o,--output", output, "Output path (default stdout)");

  SimConfig sim;
  auto* simulate = app.add_subcommand("simulate", "Integrate the master equation and tabulate observables");
  simulate->add_option("file", sim.file, ".qnet network file")->required();
  simulate->add_option("--t-start", sim.t_start, "Start time");
  simulate->add_option("--t-end", sim.t_end, "End time")->required();
  simulate->add_option("--samples", sim.samples, "Number of equally spaced output samples");
  simulate->add_option("--obs", sim.obs, "Observable, e.g. cav.n or 'dag(c.a) * c.a' (repeatable)");
  simulate->add_option("--drive", sim.drives, "Input field on a port: <port>=vacuum|coherent(a[, pulse])|fock(n, pulse)|gaussian(N=, M=, alpha=)|squeezed(r=, phi=, nth=)");
  simulate->add_option("--flux", sim.flux, "Add the mean photon flux of an output port (repeatable)");
  simulate->add_option("--atol", sim.atol, "Absolute tolerance");
  simulate->add_option("--rtol", sim.rtol, "Relative tolerance");
  simulate->add_option("--fixed-step", sim.fixed_step, "Use a fixed step of this size");
  simulate->add_option("--truncation-guard", sim.guard, "Abort when a mode's top Fock level exceeds this population (negative disables)");
  simulate->add_option("--format", sim.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  simulate->add_option("--sweep", sim.sweep, "Parameter sweep <instance>.<param>=lo:hi:n run in parallel");
  simulate->add_option("-o,--output", sim.output, "Output path (default stdout)");

  std::vector<std::string> ss_obs, ss_drive, ss_flux;
  auto* steady = app.add_subcommand("steady-state", "Steady state of the master equation");
  steady->add_option("file", file, ".qnet network file")->required();
  steady->add_option("--obs", ss_obs, "Observable (repeatable)");
  steady->add_option("--drive", ss_drive, "Time-independent input field on a port");
  steady->add_option("--flux", ss_flux, "Mean photon flux of an output port (repeatable)");
  steady->add_option("-o,--output", output, "Output path (default stdout)");

  std::string grid = "-10:10:201", tf_emit = "csv";
  bool active = false, quadrature = false;
  auto* transfer = app.add_subcommand("transfer-function", "Linear-model transfer function on an omega grid");
  transfer->add_option("file", file, ".qnet network file")->required();
  transfer->add_option("--omega", grid, "Frequency grid lo:hi:n");
  transfer->add_flag("--active", active, "Use the doubled-up (a, a^dag) form");
  transfer->add_flag("--quadrature", quadrature, "Use quadrature (x, y) coordinates");
  transfer->add_option("--emit", tf_emit, "csv table or abcd model JSON")->check(CLI::IsMember({"csv", "abcd"}));
  transfer->add_option("-o,--output", output, "Output path (default stdout)");

  std::string p0;
  std::vector<std::string> scale;
  bool report = false;
  auto* elim = app.add_subcommand("eliminate", "Adiabatically eliminate fast degrees of freedom");
  elim->add_option("file", file, ".qnet network file")->required();
  elim->add_option("--p0", p0, "Slow-subspace projector, e.g. cav=0 or cav=0,atom=0")->required();
  elim->add_option("--scale", scale, "Scaled parameter <instance>.<param>=<power of k> (repeatable)");
  elim->add_flag("--report", report, "Include the assumption report");
  elim->add_option("-o,--output", output, "Output path (default stdout)");

  auto* check = app.add_subcommand("check", "Audit unitarity, Hermiticity and linear realizability of a triple");
  check->add_option("file", file, ".qnet network or triple .json file")->required();
  check->add_option("-o,--output", output, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*compose) return cmd_compose(file, emit, output);
    if (*simulate) return cmd_simulate(sim);
    if (*steady) return cmd_steady(file, ss_obs, ss_drive, ss_flux, output);
    if (*transfer) return cmd_transfer(file, grid, active, quadrature, tf_emit, output);
    if (*elim) return cmd_eliminate(file, p0, scale, report, output);
    if (*check) return cmd_check(file, output);
  } catch (const Abort& a) {
    return a.code;
  } catch (const NetError& e) {
    std::cerr << current_file << ":" << e.pos().line << ":" << e.pos().col << ": error: " << e.message() << "\n";
    return e.kind() == ErrorKind::parse ? exit_parse : exit_elaboration;
  } catch (const Error& e) {
    std::cerr << (current_file.empty() ? std::string("qnet") : current_file) << ": error: " << e.what() << "\n";
    if (e.kind() == ErrorKind::parse) return exit_parse;
    if (e.kind() == ErrorKind::elaboration) return exit_elaboration;
    return exit_failure;
  } catch (const std::exception& e) {
    std::cerr << "qnet: error: " << e.what() << "\n";
    return exit_failure;
  }
  return exit_failure;
}
