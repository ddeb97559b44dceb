#include "qnet/netlang.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

namespace qnet::netlang {

NetError::NetError(ErrorKind k, Pos p, const std::string& msg)
    : Error(k, std::to_string(p.line) + ":" + std::to_string(p.col) + ": " + msg), pos_(p), msg_(msg) {}

namespace {

// ---------------------------------------------------------------- lexer

enum class T { ident, number, imag, string, punct, end };

struct Tok {
  T t = T::end;
  std::string s;
  double v = 0.0;
  Pos pos;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return c >= '0' && c <= '9'; }

std::vector<Tok> lex(const std::string& src) {
  std::vector<Tok> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  auto adv = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  while (i < src.size()) {
    char c = src[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      adv(1);
      continue;
    }
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') adv(1);
      continue;
    }
    Pos p{line, col};
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < src.size() && ident_char(src[j])) ++j;
      out.push_back({T::ident, src.substr(i, j - i), 0.0, p});
      adv(j - i);
      continue;
    }
    if (digit(c) || (c == '.' && i + 1 < src.size() && digit(src[i + 1]))) {
      std::size_t j = i;
      while (j < src.size() && digit(src[j])) ++j;
      if (j < src.size() && src[j] == '.') {
        ++j;
        while (j < src.size() && digit(src[j])) ++j;
      }
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && digit(src[k])) {
          j = k;
          while (j < src.size() && digit(src[j])) ++j;
        }
      }
      double v = 0.0;
      auto res = std::from_chars(src.data() + i, src.data() + j, v);
      if (res.ec != std::errc()) throw NetError(ErrorKind::parse, p, "malformed number '" + src.substr(i, j - i) + "'");
      T t = T::number;
      if (j < src.size() && src[j] == 'i' && !(j + 1 < src.size() && ident_char(src[j + 1]))) {
        t = T::imag;
        ++j;
      } else if (j < src.size() && ident_char(src[j])) {
        throw NetError(ErrorKind::parse, p, "malformed number '" + src.substr(i, j + 1 - i) + "'");
      }
      out.push_back({t, src.substr(i, j - i), v, p});
      adv(j - i);
      continue;
    }
    if (c == '"') {
      std::string s;
      std::size_t j = i + 1;
      bool closed = false;
      while (j < src.size()) {
        if (src[j] == '\\' && j + 1 < src.size()) {
          s += src[j + 1];
          j += 2;
          continue;
        }
        if (src[j] == '"') {
          closed = true;
          break;
        }
        if (src[j] == '\n') break;
        s += src[j++];
      }
      if (!closed) throw NetError(ErrorKind::parse, p, "unterminated string literal");
      out.push_back({T::string, s, 0.0, p});
      adv(j + 1 - i);
      continue;
    }
    if (c == '-' && i + 1 < src.size() && src[i + 1] == '>') {
      out.push_back({T::punct, "->", 0.0, p});
      adv(2);
      continue;
    }
    if (std::string("=(),;.[]*+-/^").find(c) != std::string::npos) {
      out.push_back({T::punct, std::string(1, c), 0.0, p});
      adv(1);
      continue;
    }
    std::string shown = (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) >= 0x7f)
                            ? "byte 0x" + [&] {
                                char b[8];
                                std::snprintf(b, sizeof b, "%02x", static_cast<unsigned char>(c));
                                return std::string(b);
                              }()
                            : "'" + std::string(1, c) + "'";
    throw NetError(ErrorKind::parse, p, "unexpected character " + shown);
  }
  out.push_back({T::end, "", 0.0, Pos{line, col}});
  return out;
}

std::string describe(const Tok& t) {
  switch (t.t) {
    case T::end: return "end of input";
    case T::string: return "string \"" + t.s + "\"";
    default: return "'" + t.s + "'";
  }
}

// ---------------------------------------------------------------- parser

class Parser {
 public:
  explicit Parser(const std::string& text) : toks_(lex(text)) {}

  NetworkDescription program() {
    NetworkDescription net;
    std::set<std::string> names;
    while (peek().t != T::end) {
      const Tok& k = peek();
      if (k.t == T::ident && k.s == "component") {
        ComponentDecl d = component();
        if (!names.insert(d.name).second) throw NetError(ErrorKind::parse, name_pos_, "duplicate instance name '" + d.name + "'");
        net.instances.push_back(std::move(d));
      } else if (k.t == T::ident && k.s == "wire") {
        net.wires.push_back(wire());
      } else if (k.t == T::ident && k.s == "expose") {
        net.exposed.push_back(expose());
      } else if (k.t == T::ident && k.s == "state") {
        net.states.push_back(state());
      } else {
        throw NetError(ErrorKind::parse, k.pos, "expected 'component', 'wire', 'expose' or 'state', found " + describe(k));
      }
    }
    return net;
  }

  Expr lone_expression() {
    Expr e = expr();
    if (peek().t != T::end) throw NetError(ErrorKind::parse, peek().pos, "unexpected " + describe(peek()) + " after expression");
    return e;
  }

 private:
  const Tok& peek(std::size_t k = 0) const { return toks_[std::min(i_ + k, toks_.size() - 1)]; }
  const Tok& next() { return toks_[std::min(i_++, toks_.size() - 1)]; }
  bool is(const std::string& p, std::size_t k = 0) const { return peek(k).t == T::punct && peek(k).s == p; }

  const Tok& expect_punct(const std::string& p, const std::string& ctx) {
    if (!is(p)) throw NetError(ErrorKind::parse, peek().pos, "expected '" + p + "' " + ctx + ", found " + describe(peek()));
    return next();
  }
  const Tok& expect_ident(const std::string& what) {
    if (peek().t != T::ident) throw NetError(ErrorKind::parse, peek().pos, "expected " + what + ", found " + describe(peek()));
    return next();
  }
  void expect_keyword(const std::string& kw) {
    if (peek().t != T::ident || peek().s != kw)
      throw NetError(ErrorKind::parse, peek().pos, "expected '" + kw + "', found " + describe(peek()));
    next();
  }

  ComponentDecl component() {
    ComponentDecl d;
    d.pos = next().pos;
    const Tok& n = expect_ident("instance name");
    d.name = n.s;
    name_pos_ = n.pos;
    expect_punct("=", "after instance name");
    const Tok& k = expect_ident("component kind");
    d.kind = k.s;
    const KindSchema* ks = find_kind(d.kind);
    if (!ks) throw NetError(ErrorKind::parse, k.pos, "unknown kind '" + d.kind + "'");
    expect_punct("(", "after component kind");
    std::set<std::string> seen;
    if (!is(")")) {
      while (true) {
        Arg a;
        const Tok& an = expect_ident("parameter name");
        a.name = an.s;
        a.pos = an.pos;
        bool known = a.name == "trunc" ||
                     std::any_of(ks->params.begin(), ks->params.end(), [&](const ParamSchema& p) { return p.name == a.name; });
        if (!known) throw NetError(ErrorKind::parse, an.pos, "unknown parameter '" + a.name + "' for kind '" + d.kind + "'");
        if (!seen.insert(a.name).second) throw NetError(ErrorKind::parse, an.pos, "duplicate parameter '" + a.name + "'");
        expect_punct("=", "after parameter name");
        a.value = expr();
        d.args.push_back(std::move(a));
        if (is(",")) {
          next();
          continue;
        }
        break;
      }
    }
    expect_punct(")", "to close the parameter list");
    expect_punct(";", "after component declaration");
    return d;
  }

  PortRef port() {
    PortRef r;
    const Tok& n = expect_ident("instance name");
    r.instance = n.s;
    r.pos = n.pos;
    expect_punct(".", "after instance name in port reference");
    const Tok& dir = expect_ident("'in' or 'out'");
    if (dir.s != "in" && dir.s != "out") throw NetError(ErrorKind::parse, dir.pos, "expected 'in' or 'out', found '" + dir.s + "'");
    r.output = dir.s == "out";
    expect_punct("[", "before port index");
    const Tok& ix = peek();
    if (ix.t != T::number || ix.v != std::floor(ix.v) || ix.s.find_first_of(".eE") != std::string::npos)
      throw NetError(ErrorKind::parse, ix.pos, "expected integer port index, found " + describe(ix));
    if (ix.v < 1) throw NetError(ErrorKind::parse, ix.pos, "port indices are 1-based");
    r.index = static_cast<int>(ix.v);
    next();
    expect_punct("]", "after port index");
    return r;
  }

  WireDecl wire() {
    WireDecl w;
    w.pos = next().pos;
    w.src = port();
    if (!w.src.output) throw NetError(ErrorKind::parse, w.src.pos, "wire source must be an output port (.out[...])");
    expect_punct("->", "between wire endpoints");
    w.dst = port();
    if (w.dst.output) throw NetError(ErrorKind::parse, w.dst.pos, "wire destination must be an input port (.in[...])");
    expect_punct(";", "after wire");
    return w;
  }

  ExposeDecl expose() {
    ExposeDecl e;
    e.pos = next().pos;
    e.port = port();
    expect_keyword("as");
    e.label = expect_ident("port label").s;
    expect_punct(";", "after expose");
    return e;
  }

  StateDecl state() {
    StateDecl s;
    s.pos = next().pos;
    s.instance = expect_ident("instance name").s;
    expect_punct("=", "after instance name");
    s.spec = expr();
    expect_punct(";", "after state");
    return s;
  }

  Expr bin(char op, Expr l, Expr r, Pos p) {
    Expr e;
    e.kind = Expr::Kind::binary;
    e.op = op;
    e.pos = p;
    e.args.push_back(std::move(l));
    e.args.push_back(std::move(r));
    return e;
  }

  Expr expr() {
    Expr l = term();
    while (is("+") || is("-")) {
      const Tok& o = next();
      l = bin(o.s[0], std::move(l), term(), o.pos);
    }
    return l;
  }
  Expr term() {
    Expr l = unary();
    while (is("*") || is("/")) {
      const Tok& o = next();
      l = bin(o.s[0], std::move(l), unary(), o.pos);
    }
    return l;
  }
  Expr unary() {
    if (is("-")) {
      Expr e;
      e.kind = Expr::Kind::neg;
      e.pos = next().pos;
      e.args.push_back(unary());
      return e;
    }
    return power();
  }
  Expr power() {
    Expr b = primary();
    if (is("^")) {
      const Tok& o = next();
      return bin('^', std::move(b), unary(), o.pos);
    }
    return b;
  }
  Expr primary() {
    const Tok& t = peek();
    Expr e;
    e.pos = t.pos;
    if (t.t == T::number || t.t == T::imag) {
      e.kind = t.t == T::number ? Expr::Kind::number : Expr::Kind::imag;
      e.value = t.v;
      next();
      return e;
    }
    if (t.t == T::string) {
      e.kind = Expr::Kind::string;
      e.name = t.s;
      next();
      return e;
    }
    if (is("(")) {
      next();
      Expr in = expr();
      expect_punct(")", "to close parenthesis");
      return in;
    }
    if (t.t == T::ident) {
      e.kind = Expr::Kind::ident;
      e.name = next().s;
      while (is(".") && peek(1).t == T::ident) {
        next();
        e.name += "." + next().s;
      }
      if (is("(")) {
        next();
        bool named = peek().t == T::ident && is("=", 1);
        e.kind = named ? Expr::Kind::named_call : Expr::Kind::call;
        if (!is(")")) {
          while (true) {
            if (named) {
              const Tok& an = expect_ident("argument name");
              if (std::find(e.arg_names.begin(), e.arg_names.end(), an.s) != e.arg_names.end())
                throw NetError(ErrorKind::parse, an.pos, "duplicate argument '" + an.s + "'");
              e.arg_names.push_back(an.s);
              expect_punct("=", "after argument name");
            }
            e.args.push_back(expr());
            if (is(",")) {
              next();
              continue;
            }
            break;
          }
        }
        expect_punct(")", "to close argument list");
      }
      return e;
    }
    throw NetError(ErrorKind::parse, t.pos, "expected an expression, found " + describe(t));
  }

  std::vector<Tok> toks_;
  std::size_t i_ = 0;
  Pos name_pos_;
};

// ---------------------------------------------------------------- printer

int prec(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::binary:
      return e.op == '+' || e.op == '-' ? 1 : e.op == '^' ? 4 : 2;
    case Expr::Kind::neg:
      return 3;
    default:
      return 5;
  }
}

std::string num_text(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string quote(const std::string& s) {
  std::string o = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') o += '\\';
    o += c;
  }
  return o + "\"";
}

std::string pr(const Expr& e, int need) {
  std::string s;
  switch (e.kind) {
    case Expr::Kind::number: s = num_text(e.value); break;
    case Expr::Kind::imag: s = num_text(e.value) + "i"; break;
    case Expr::Kind::ident: s = e.name; break;
    case Expr::Kind::string: s = quote(e.name); break;
    case Expr::Kind::neg: s = "-" + pr(e.args[0], 3); break;
    case Expr::Kind::binary: {
      int p = prec(e);
      bool right_assoc = e.op == '^';
      s = pr(e.args[0], right_assoc ? p + 1 : p) + " " + std::string(1, e.op) + " " + pr(e.args[1], right_assoc ? p : p + 1);
      if (e.op == '^') s = pr(e.args[0], p + 1) + "^" + pr(e.args[1], p);
      break;
    }
    case Expr::Kind::call:
    case Expr::Kind::named_call: {
      s = e.name + "(";
      for (std::size_t k = 0; k < e.args.size(); ++k) {
        if (k) s += ", ";
        if (e.kind == Expr::Kind::named_call) s += e.arg_names[k] + "=";
        s += pr(e.args[k], 0);
      }
      s += ")";
      break;
    }
  }
  return prec(e) < need ? "(" + s + ")" : s;
}

std::string port_text(const PortRef& p) {
  return p.instance + (p.output ? ".out[" : ".in[") + std::to_string(p.index) + "]";
}

}  // namespace

NetworkDescription parse(const std::string& text) { return Parser(text).program(); }

Expr parse_expression(const std::string& text) { return Parser(text).lone_expression(); }

std::string print(const Expr& e) { return pr(e, 0); }

std::string print(const NetworkDescription& net) {
  std::ostringstream os;
  for (const auto& c : net.instances) {
    os << "component " << c.name << " = " << c.kind << "(";
    for (std::size_t k = 0; k < c.args.size(); ++k) os << (k ? ", " : "") << c.args[k].name << "=" << print(c.args[k].value);
    os << ");\n";
  }
  for (const auto& w : net.wires) os << "wire " << port_text(w.src) << " -> " << port_text(w.dst) << ";\n";
  for (const auto& e : net.exposed) os << "expose " << port_text(e.port) << " as " << e.label << ";\n";
  for (const auto& s : net.states) os << "state " << s.instance << " = " << print(s.spec) << ";\n";
  return os.str();
}

bool same(const Expr& a, const Expr& b) {
  if (a.kind != b.kind || a.name != b.name || a.op != b.op || a.arg_names != b.arg_names || a.args.size() != b.args.size())
    return false;
  if ((a.kind == Expr::Kind::number || a.kind == Expr::Kind::imag) && a.value != b.value) return false;
  for (std::size_t k = 0; k < a.args.size(); ++k)
    if (!same(a.args[k], b.args[k])) return false;
  return true;
}

namespace {
bool same_port(const PortRef& a, const PortRef& b) { return a.instance == b.instance && a.output == b.output && a.index == b.index; }
}  // namespace

bool same(const NetworkDescription& a, const NetworkDescription& b) {
  if (a.instances.size() != b.instances.size() || a.wires.size() != b.wires.size() || a.exposed.size() != b.exposed.size() ||
      a.states.size() != b.states.size())
    return false;
  for (std::size_t i = 0; i < a.instances.size(); ++i) {
    const auto &x = a.instances[i], &y = b.instances[i];
    if (x.name != y.name || x.kind != y.kind || x.args.size() != y.args.size()) return false;
    for (std::size_t k = 0; k < x.args.size(); ++k)
      if (x.args[k].name != y.args[k].name || !same(x.args[k].value, y.args[k].value)) return false;
  }
  for (std::size_t i = 0; i < a.wires.size(); ++i)
    if (!same_port(a.wires[i].src, b.wires[i].src) || !same_port(a.wires[i].dst, b.wires[i].dst)) return false;
  for (std::size_t i = 0; i < a.exposed.size(); ++i)
    if (!same_port(a.exposed[i].port, b.exposed[i].port) || a.exposed[i].label != b.exposed[i].label) return false;
  for (std::size_t i = 0; i < a.states.size(); ++i)
    if (a.states[i].instance != b.states[i].instance || !same(a.states[i].spec, b.states[i].spec)) return false;
  return true;
}

json ast_to_json(const NetworkDescription& net) {
  auto pos = [](Pos p) { return std::to_string(p.line) + ":" + std::to_string(p.col); };
  json j;
  j["instances"] = json::array();
  for (const auto& c : net.instances) {
    json args = json::object();
    for (const auto& a : c.args) args[a.name] = print(a.value);
    j["instances"].push_back({{"name", c.name}, {"kind", c.kind}, {"params", args}, {"pos", pos(c.pos)}});
  }
  j["wires"] = json::array();
  for (const auto& w : net.wires) j["wires"].push_back({{"from", port_text(w.src)}, {"to", port_text(w.dst)}, {"pos", pos(w.pos)}});
  j["exposed"] = json::array();
  for (const auto& e : net.exposed) j["exposed"].push_back({{"port", port_text(e.port)}, {"label", e.label}, {"pos", pos(e.pos)}});
  j["states"] = json::array();
  for (const auto& s : net.states) j["states"].push_back({{"instance", s.instance}, {"spec", print(s.spec)}, {"pos", pos(s.pos)}});
  return j;
}

// ---------------------------------------------------------------- evaluation

cplx eval_number(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::number: return e.value;
    case Expr::Kind::imag: return cplx(0.0, e.value);
    case Expr::Kind::ident:
      if (e.name == "pi") return M_PI;
      if (e.name == "i") return cplx(0.0, 1.0);
      throw NetError(ErrorKind::elaboration, e.pos, "unknown identifier '" + e.name + "' in numeric expression");
    case Expr::Kind::string: throw NetError(ErrorKind::elaboration, e.pos, "expected a number, found a string");
    case Expr::Kind::neg: return -eval_number(e.args[0]);
    case Expr::Kind::binary: {
      cplx a = eval_number(e.args[0]), b = eval_number(e.args[1]);
      switch (e.op) {
        case '+': return a + b;
        case '-': return a - b;
        case '*': return a * b;
        case '/':
          if (b == cplx(0.0)) throw NetError(ErrorKind::elaboration, e.pos, "division by zero");
          return a / b;
        default:
          if (b.imag() == 0.0 && b.real() == std::round(b.real()) && a.imag() == 0.0) return std::pow(a.real(), b.real());
          return std::pow(a, b);
      }
    }
    case Expr::Kind::call: {
      if (e.args.size() != 1) throw NetError(ErrorKind::elaboration, e.pos, "function '" + e.name + "' takes one argument");
      cplx x = eval_number(e.args[0]);
      if (e.name == "sqrt") return x.imag() == 0.0 && x.real() >= 0 ? cplx(std::sqrt(x.real())) : std::sqrt(x);
      if (e.name == "exp") return std::exp(x);
      if (e.name == "log") return std::log(x);
      if (e.name == "sin") return std::sin(x);
      if (e.name == "cos") return std::cos(x);
      if (e.name == "tan") return std::tan(x);
      if (e.name == "conj") return std::conj(x);
      if (e.name == "abs") return std::abs(x);
      if (e.name == "real") return x.real();
      if (e.name == "imag") return x.imag();
      throw NetError(ErrorKind::elaboration, e.pos, "unknown function '" + e.name + "'");
    }
    case Expr::Kind::named_call: throw NetError(ErrorKind::elaboration, e.pos, "'" + e.name + "(...)' is not a number");
  }
  return 0.0;
}

namespace {

double eval_real(const Expr& e, const std::string& what) {
  cplx v = eval_number(e);
  if (std::abs(v.imag()) > 1e-12) throw NetError(ErrorKind::elaboration, e.pos, what + " must be real");
  return v.real();
}

ParamValue param_value(const Expr& e, const ParamSchema& ps) {
  if (ps.type == "pulse") {
    if (e.kind != Expr::Kind::named_call)
      throw NetError(ErrorKind::elaboration, e.pos, "parameter '" + ps.name + "' expects a pulse like gaussian(tc=5, sigma=1)");
    std::map<std::string, double> p;
    for (std::size_t k = 0; k < e.args.size(); ++k) p[e.arg_names[k]] = eval_real(e.args[k], "pulse argument '" + e.arg_names[k] + "'");
    try {
      return ParamValue(make_pulse(e.name, p));
    } catch (const Error& err) {
      throw NetError(ErrorKind::elaboration, e.pos, err.what());
    }
  }
  if (ps.type == "text") {
    if (e.kind == Expr::Kind::string || e.kind == Expr::Kind::ident) return ParamValue(e.name);
    throw NetError(ErrorKind::elaboration, e.pos, "parameter '" + ps.name + "' expects text");
  }
  if (ps.type == "complex") return ParamValue(eval_number(e));
  double v = eval_real(e, "parameter '" + ps.name + "'");
  if (ps.type == "int" && v != std::round(v)) throw NetError(ErrorKind::elaboration, e.pos, "parameter '" + ps.name + "' must be an integer");
  return ParamValue(v);
}

struct Resolved {
  int offset = 0;
  int n_ports = 0;
};

int resolve(const PortRef& p, const std::map<std::string, Resolved>& inst) {
  auto it = inst.find(p.instance);
  if (it == inst.end()) throw NetError(ErrorKind::elaboration, p.pos, "unknown instance '" + p.instance + "'");
  if (p.index > it->second.n_ports)
    throw NetError(ErrorKind::elaboration, p.pos,
                   "port index " + std::to_string(p.index) + " out of range for '" + p.instance + "' (" + std::to_string(it->second.n_ports) +
                       " port" + (it->second.n_ports == 1 ? "" : "s") + ")");
  return it->second.offset + p.index;
}

}  // namespace

Elaborated elaborate(const NetworkDescription& net) {
  if (net.instances.empty()) throw NetError(ErrorKind::elaboration, Pos{1, 1}, "network declares no components");
  Elaborated out;
  std::map<std::string, Resolved> inst;
  std::map<std::string, Pos> inst_pos;
  SLHTriple G;
  bool first = true;
  int offset = 0;
  for (const auto& c : net.instances) {
    const KindSchema* ks = find_kind(c.kind);
    ComponentSpec spec;
    spec.kind = c.kind;
    spec.mode_label_prefix = c.name;
    for (const auto& a : c.args) {
      if (a.name == "trunc") {
        double t = eval_real(a.value, "trunc");
        if (t != std::round(t) || t < 2) throw NetError(ErrorKind::elaboration, a.value.pos, "trunc must be an integer >= 2");
        spec.truncation = static_cast<int>(t);
        continue;
      }
      const ParamSchema* ps = nullptr;
      for (const auto& p : ks->params)
        if (p.name == a.name) ps = &p;
      spec.params[a.name] = param_value(a.value, *ps);
    }
    SLHTriple Gi;
    try {
      Gi = instantiate(spec);
    } catch (const NetError&) {
      throw;
    } catch (const Error& e) {
      throw NetError(ErrorKind::elaboration, c.pos, "component '" + c.name + "': " + e.what());
    }
    inst[c.name] = {offset, Gi.n_ports};
    inst_pos[c.name] = c.pos;
    offset += Gi.n_ports;
    out.instance_modes[c.name] = Gi.space.labels();
    G = first ? Gi : concat(G, Gi);
    first = false;
  }
  int total = offset;

  std::map<int, const WireDecl*> src_used, dst_used;
  PortMap wiring;
  for (const auto& w : net.wires) {
    int o = resolve(w.src, inst), i = resolve(w.dst, inst);
    if (src_used.count(o)) throw NetError(ErrorKind::elaboration, w.src.pos, "output " + port_text(w.src) + " is already wired");
    if (dst_used.count(i)) throw NetError(ErrorKind::elaboration, w.dst.pos, "input " + port_text(w.dst) + " is already wired");
    src_used[o] = &w;
    dst_used[i] = &w;
    wiring.pairs.emplace_back(o, i);
  }

  std::vector<int> out_ports, in_ports;  // surviving global ports (1-based) in reduced order
  SLHTriple R = G;
  if (!wiring.pairs.empty()) {
    try {
      FeedbackResult fr = feedback_multi(G, wiring);
      R = fr.G;
      for (int k : fr.output_map) out_ports.push_back(k + 1);
      for (int k : fr.input_map) in_ports.push_back(k + 1);
    } catch (const Error& e) {
      std::string names;
      for (const auto& w : net.wires) names += (names.empty() ? "" : ", ") + port_text(w.src) + " -> " + port_text(w.dst);
      throw NetError(ErrorKind::elaboration, net.wires.front().pos, std::string("feedback reduction failed (") + e.what() + ") for wires " + names);
    }
  } else {
    for (int k = 1; k <= total; ++k) {
      out_ports.push_back(k);
      in_ports.push_back(k);
    }
  }

  std::vector<std::string> labels;
  std::map<std::string, int> label_out, label_in;
  for (const auto& e : net.exposed) {
    int g = resolve(e.port, inst);
    bool wired = e.port.output ? src_used.count(g) > 0 : dst_used.count(g) > 0;
    if (wired) throw NetError(ErrorKind::elaboration, e.port.pos, "cannot expose " + port_text(e.port) + ": it is wired internally");
    auto& m = e.port.output ? label_out : label_in;
    if (m.count(e.label))
      throw NetError(ErrorKind::elaboration, e.pos, "label '" + e.label + "' already names an " + (e.port.output ? "output" : "input"));
    for (const auto& [l, gp] : m)
      if (gp == g) throw NetError(ErrorKind::elaboration, e.port.pos, port_text(e.port) + " is already exposed as '" + l + "'");
    m[e.label] = g;
    if (std::find(labels.begin(), labels.end(), e.label) == labels.end()) labels.push_back(e.label);
  }
  std::vector<int> ch_out, ch_in;
  std::set<int> used_out, used_in;
  for (const auto& [l, g] : label_out) used_out.insert(g);
  for (const auto& [l, g] : label_in) used_in.insert(g);
  auto take = [](const std::vector<int>& avail, std::set<int>& used) {
    for (int g : avail)
      if (!used.count(g)) {
        used.insert(g);
        return g;
      }
    return -1;
  };
  for (const auto& l : labels) {
    ch_out.push_back(label_out.count(l) ? label_out[l] : take(out_ports, used_out));
    ch_in.push_back(label_in.count(l) ? label_in[l] : take(in_ports, used_in));
  }
  while (ch_out.size() < out_ports.size()) {
    ch_out.push_back(take(out_ports, used_out));
    ch_in.push_back(take(in_ports, used_in));
    labels.push_back("p" + std::to_string(ch_out.size()));
    while (std::count(labels.begin(), labels.end() - 1, labels.back()))
      labels.back() += "_";
  }
  auto pos_of = [](const std::vector<int>& v, int g) { return static_cast<int>(std::find(v.begin(), v.end(), g) - v.begin()); };
  int n = static_cast<int>(out_ports.size());
  OpMatrix S(n, n);
  std::vector<Operator> L;
  for (int i = 0; i < n; ++i) {
    int ro = pos_of(out_ports, ch_out[static_cast<std::size_t>(i)]);
    L.push_back(R.L[static_cast<std::size_t>(ro)]);
    for (int j = 0; j < n; ++j) S(i, j) = R.S(ro, pos_of(in_ports, ch_in[static_cast<std::size_t>(j)]));
  }
  SLHTriple F = make_triple(S, L, R.H, labels);
  F = embed_triple(F, R.space);
  F.local_states = R.local_states;

  std::set<std::string> declared;
  for (const auto& s : net.states) {
    if (!inst.count(s.instance)) throw NetError(ErrorKind::elaboration, s.pos, "unknown instance '" + s.instance + "'");
    std::map<std::string, DMat> st;
    try {
      st = state_from_spec(s.spec, F.space, out.instance_modes[s.instance]);
    } catch (const NetError&) {
      throw;
    } catch (const Error& e) {
      throw NetError(ErrorKind::elaboration, s.pos, e.what());
    }
    for (auto& [k, v] : st) {
      if (!declared.insert(k).second) throw NetError(ErrorKind::elaboration, s.pos, "initial state of '" + k + "' given twice");
      F.local_states[k] = v;
    }
  }
  out.G = F;
  out.port_labels = labels;
  return out;
}

std::map<std::string, DMat> state_from_spec(const Expr& spec, const LabeledSpace& space, const std::vector<std::string>& factors) {
  std::vector<const Expr*> terms;
  std::function<void(const Expr&)> flatten = [&](const Expr& e) {
    if (e.kind == Expr::Kind::binary && e.op == '*') {
      flatten(e.args[0]);
      flatten(e.args[1]);
    } else {
      terms.push_back(&e);
    }
  };
  flatten(spec);
  std::map<std::string, DMat> out;
  bool all_vacuum = terms.size() == 1 && terms[0]->kind == Expr::Kind::ident && terms[0]->name == "vacuum";
  if (!all_vacuum && terms.size() != factors.size())
    throw NetError(ErrorKind::elaboration, spec.pos,
                   "state has " + std::to_string(terms.size()) + " factor(s) but the instance has " + std::to_string(factors.size()) + " mode(s)");
  for (std::size_t k = 0; k < factors.size(); ++k) {
    const Expr& t = all_vacuum ? *terms[0] : *terms[k];
    int fi = space.index_of(factors[k]);
    const Factor& f = space.factors()[static_cast<std::size_t>(fi)];
    DMat rho = DMat::Zero(f.dim, f.dim);
    if (t.kind == Expr::Kind::ident && t.name == "vacuum") {
      rho(0, 0) = 1.0;
    } else if (t.kind == Expr::Kind::call && t.name == "fock" && t.args.size() == 1) {
      double nn = eval_real(t.args[0], "Fock level");
      if (nn != std::round(nn) || nn < 0 || nn >= f.dim)
        throw NetError(ErrorKind::elaboration, t.pos, "fock level must be an integer in [0, " + std::to_string(f.dim - 1) + "] for '" + f.label + "'");
      rho(static_cast<long>(nn), static_cast<long>(nn)) = 1.0;
    } else if (t.kind == Expr::Kind::call && t.name == "coherent" && t.args.size() == 1) {
      if (f.kind != FactorKind::oscillator) throw NetError(ErrorKind::elaboration, t.pos, "coherent state on non-oscillator '" + f.label + "'");
      rho = coherent_density(f.dim, eval_number(t.args[0]));
    } else if (t.kind == Expr::Kind::call && t.name == "qubit" && t.args.size() == 1 && t.args[0].kind == Expr::Kind::ident &&
               (t.args[0].name == "excited" || t.args[0].name == "ground")) {
      if (f.dim != 2) throw NetError(ErrorKind::elaboration, t.pos, "qubit state on '" + f.label + "' of dimension " + std::to_string(f.dim));
      long l = t.args[0].name == "excited" ? 1 : 0;
      rho(l, l) = 1.0;
    } else {
      throw NetError(ErrorKind::elaboration, t.pos, "unknown state '" + print(t) + "' (use vacuum, fock(n), coherent(alpha), qubit(excited|ground))");
    }
    out[f.label] = rho;
  }
  return out;
}

DMat initial_density(const SLHTriple& G) {
  DMat rho = DMat::Identity(1, 1);
  for (const auto& f : G.space.factors()) {
    DMat r;
    auto it = G.local_states.find(f.label);
    if (it != G.local_states.end()) {
      r = it->second;
    } else {
      r = DMat::Zero(f.dim, f.dim);
      r(0, 0) = 1.0;
    }
    DMat next(rho.rows() * r.rows(), rho.cols() * r.cols());
    for (long i = 0; i < rho.rows(); ++i)
      for (long j = 0; j < rho.cols(); ++j) next.block(i * r.rows(), j * r.cols(), r.rows(), r.cols()) = rho(i, j) * r;
    rho = next;
  }
  return rho;
}

namespace {

std::string resolve_factor(const std::string& path, const Elaborated& net, Pos pos, std::string& op) {
  auto dot = path.rfind('.');
  if (dot == std::string::npos) throw NetError(ErrorKind::elaboration, pos, "expected <instance>.<op> or <instance>.<mode>.<op>, found '" + path + "'");
  std::string head = path.substr(0, dot);
  op = path.substr(dot + 1);
  if (net.G.space.has(head)) return head;
  auto it = net.instance_modes.find(head);
  if (it != net.instance_modes.end()) {
    if (it->second.size() == 1) return it->second[0];
    throw NetError(ErrorKind::elaboration, pos, "instance '" + head + "' has several modes; use <instance>.<mode>." + op);
  }
  throw NetError(ErrorKind::elaboration, pos, "unknown mode or instance '" + head + "'");
}

Operator obs(const Expr& e, const Elaborated& net) {
  const LabeledSpace& sp = net.G.space;
  switch (e.kind) {
    case Expr::Kind::ident: {
      if (e.name == "pi" || e.name == "i") return Operator::identity(sp) * eval_number(e);
      std::string op;
      std::string lab = resolve_factor(e.name, net, e.pos, op);
      const Factor& f = sp.factors()[static_cast<std::size_t>(sp.index_of(lab))];
      auto el = [&](ElemKind k) { return make_elementary(k, lab, f.dim).embed(sp); };
      bool spin = f.dim == 2 && f.kind != FactorKind::oscillator;
      if (op == "a") return el(ElemKind::annihilation);
      if (op == "ad") return el(ElemKind::creation);
      if (op == "n") return el(ElemKind::number);
      if (op == "id") return Operator::identity(sp);
      if (spin && op == "sm") return el(ElemKind::sigma_minus);
      if (spin && op == "sp") return el(ElemKind::sigma_plus);
      if (spin && op == "sx") return el(ElemKind::pauli_x);
      if (spin && op == "sy") return el(ElemKind::pauli_y);
      if (spin && op == "sz") return el(ElemKind::pauli_z);
      throw NetError(ErrorKind::elaboration, e.pos, "unknown operator '" + op + "' for mode '" + lab + "'");
    }
    case Expr::Kind::number:
    case Expr::Kind::imag: return Operator::identity(sp) * eval_number(e);
    case Expr::Kind::neg: return -obs(e.args[0], net);
    case Expr::Kind::binary: {
      if (e.op == '+') return obs(e.args[0], net) + obs(e.args[1], net);
      if (e.op == '-') return obs(e.args[0], net) - obs(e.args[1], net);
      if (e.op == '*') return obs(e.args[0], net) * obs(e.args[1], net);
      if (e.op == '/') return obs(e.args[0], net) * (1.0 / eval_number(e.args[1]));
      double p = eval_real(e.args[1], "operator power");
      if (p != std::round(p) || p < 0) throw NetError(ErrorKind::elaboration, e.pos, "operator powers must be non-negative integers");
      Operator base = obs(e.args[0], net), r = Operator::identity(sp);
      for (int k = 0; k < static_cast<int>(p); ++k) r = r * base;
      return r;
    }
    case Expr::Kind::call:
      if (e.name == "dag" && e.args.size() == 1) return obs(e.args[0], net).adjoint();
      return Operator::identity(sp) * eval_number(e);
    default: throw NetError(ErrorKind::elaboration, e.pos, "invalid observable expression");
  }
}

}  // namespace

Operator observable(const std::string& text, const Elaborated& net) { return obs(parse_expression(text), net); }

Operator projector_spec(const std::string& text, const Elaborated& net) {
  const LabeledSpace& sp = net.G.space;
  Operator P = Operator::identity(sp);
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::validation, "projector spec item '" + item + "' must look like <mode>=<level>");
    std::string name = item.substr(0, eq);
    name.erase(0, name.find_first_not_of(' '));
    name.erase(name.find_last_not_of(' ') + 1);
    int level = std::stoi(item.substr(eq + 1));
    std::string lab;
    if (sp.has(name)) {
      lab = name;
    } else if (net.instance_modes.count(name) && net.instance_modes.at(name).size() == 1) {
      lab = net.instance_modes.at(name)[0];
    } else {
      throw Error(ErrorKind::validation, "projector spec: unknown mode '" + name + "'");
    }
    const Factor& f = sp.factors()[static_cast<std::size_t>(sp.index_of(lab))];
    if (level < 0 || level >= f.dim) throw Error(ErrorKind::validation, "projector spec: level out of range for '" + lab + "'");
    P = P * make_elementary(ElemKind::projector, lab, f.dim, level, level).embed(sp);
  }
  return P;
}

}  // namespace qnet::netlang
