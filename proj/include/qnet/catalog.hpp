#pragma once

#include <map>
#include <string>
#include <vector>

#include "qnet/slh.hpp"

namespace qnet {

// Normalized single-mode wavepacket xi(t) with W(t) = int_t^inf |xi|^2.
struct Pulse {
  std::string shape;  // gaussian | square | rising | decaying
  std::map<std::string, double> p;

  cplx xi(double t) const;
  double W(double t) const;
  cplx lambda(double t) const;  // xi / sqrt(W), W clamped below at w_floor
  std::pair<double, double> support() const;
  double norm() const;          // int |xi|^2 by quadrature
  std::string describe() const;
  static constexpr double w_floor = 1e-12;
};

Pulse make_pulse(const std::string& shape, const std::map<std::string, double>& p);
Envelope xi_envelope(const Pulse& p, cplx amplitude = 1.0);
Envelope lambda_envelope(const Pulse& p);

struct ParamValue {
  enum class Type { number, pulse, text } type = Type::number;
  cplx num{0.0};
  Pulse pulse;
  std::string text;

  ParamValue() = default;
  ParamValue(double x) : num(x) {}
  ParamValue(cplx x) : num(x) {}
  ParamValue(Pulse p) : type(Type::pulse), pulse(std::move(p)) {}
  ParamValue(const char* s) : type(Type::text), text(s) {}
  ParamValue(std::string s) : type(Type::text), text(std::move(s)) {}
};

struct ComponentSpec {
  std::string kind;
  std::map<std::string, ParamValue> params;
  int truncation = 8;
  std::string mode_label_prefix;
};

struct ParamSchema {
  std::string name;
  std::string type;  // real | complex | int | pulse | text
  bool required = false;
  double default_value = 0.0;
  std::string constraint;
  std::string doc;
};

struct KindSchema {
  std::string kind;
  std::vector<ParamSchema> params;
  std::vector<std::string> modes;  // mode names, prefixed by the instance name
  std::string doc;
};

const std::vector<KindSchema>& catalog_schema();
const KindSchema* find_kind(const std::string& kind);
json catalog_schema_json();

SLHTriple instantiate(const ComponentSpec& spec);

// Label of a component mode: "<prefix>.<mode>", or just "<mode>" with an empty prefix.
std::string mode_label(const std::string& prefix, const std::string& mode);

SLHTriple build_cavity_chain(int N, const std::vector<double>& beta, const std::vector<double>& detunings, int trunc = 8,
                             const std::string& prefix = "");
SLHTriple build_counterpropagating_pair(double g1, double g2, double d1, double d2, double phi,
                                        const std::string& prefix = "");
SLHTriple build_copropagating_pair(double g1, double g2, double d1, double d2, double phi,
                                   const std::string& prefix = "");
// Same pairs assembled from single-atom pieces through the network algebra.
SLHTriple derive_counterpropagating_pair(double g1, double g2, double d1, double d2, double phi,
                                         const std::string& prefix = "");
SLHTriple derive_copropagating_pair(double g1, double g2, double d1, double d2, double phi,
                                    const std::string& prefix = "");

DMat coherent_density(int dim, cplx alpha);
DMat fock_density(int dim, int n);

}  // namespace qnet
