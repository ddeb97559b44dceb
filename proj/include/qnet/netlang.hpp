#pragma once

#include <map>
#include <string>
#include <vector>

#include "qnet/catalog.hpp"
#include "qnet/slh.hpp"

namespace qnet::netlang {

struct Pos {
  int line = 0;
  int col = 0;
};

// Diagnostic carrying a source position; what() is "line:col: message".
class NetError : public Error {
 public:
  NetError(ErrorKind k, Pos p, const std::string& msg);
  Pos pos() const { return pos_; }
  const std::string& message() const { return msg_; }

 private:
  Pos pos_;
  std::string msg_;
};

struct Expr {
  enum class Kind { number, imag, ident, string, neg, binary, call, named_call };
  Kind kind = Kind::number;
  double value = 0.0;
  std::string name;  // identifier, string contents, function or shape name
  char op = 0;       // + - * / ^
  std::vector<Expr> args;
  std::vector<std::string> arg_names;  // named_call only
  Pos pos;
};

struct Arg {
  std::string name;
  Expr value;
  Pos pos;
};

struct ComponentDecl {
  std::string name;
  std::string kind;
  std::vector<Arg> args;
  Pos pos;
};

struct PortRef {
  std::string instance;
  bool output = false;
  int index = 0;  // 1-based
  Pos pos;
};

struct WireDecl {
  PortRef src, dst;
  Pos pos;
};

struct ExposeDecl {
  PortRef port;
  std::string label;
  Pos pos;
};

struct StateDecl {
  std::string instance;
  Expr spec;
  Pos pos;
};

struct NetworkDescription {
  std::vector<ComponentDecl> instances;
  std::vector<WireDecl> wires;
  std::vector<ExposeDecl> exposed;
  std::vector<StateDecl> states;
};

NetworkDescription parse(const std::string& text);
Expr parse_expression(const std::string& text);
std::string print(const NetworkDescription& net);
std::string print(const Expr& e);
bool same(const Expr& a, const Expr& b);
bool same(const NetworkDescription& a, const NetworkDescription& b);
json ast_to_json(const NetworkDescription& net);

cplx eval_number(const Expr& e);

struct Elaborated {
  SLHTriple G;
  std::vector<std::string> port_labels;
  std::map<std::string, std::vector<std::string>> instance_modes;  // instance -> factor labels
};
Elaborated elaborate(const NetworkDescription& net);

// Density matrix for a state spec (vacuum, fock(n), coherent(alpha), qubit(excited|ground), joined by *)
// over the listed factors of the space.
std::map<std::string, DMat> state_from_spec(const Expr& spec, const LabeledSpace& space, const std::vector<std::string>& factors);
// Tensor product of local states; unspecified factors start in level 0.
DMat initial_density(const SLHTriple& G);

// Observable over instance-qualified names: <instance>.<op> or <instance>.<mode>.<op>, with
// op in {a, ad, n, sm, sp, sx, sy, sz, id}; sums, products, scalars and dag(...) allowed.
Operator observable(const std::string& text, const Elaborated& net);
// Projector |level><level| on named factors, identity elsewhere, from "<inst>[.<mode>]=<level>,...".
Operator projector_spec(const std::string& text, const Elaborated& net);

}  // namespace qnet::netlang
