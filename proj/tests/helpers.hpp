#pragma once

#include <random>

#include "qnet/hilbert.hpp"
#include "qnet/slh.hpp"

namespace th {

using namespace qnet;

inline Operator a(const std::string& l, int d = 6) { return make_elementary(ElemKind::annihilation, l, d); }
inline Operator ad(const std::string& l, int d = 6) { return make_elementary(ElemKind::creation, l, d); }
inline Operator num(const std::string& l, int d = 6) { return make_elementary(ElemKind::number, l, d); }
inline Operator sm(const std::string& l) { return make_elementary(ElemKind::sigma_minus, l, 2); }
inline Operator sp(const std::string& l) { return make_elementary(ElemKind::sigma_plus, l, 2); }
inline Operator sz(const std::string& l) { return make_elementary(ElemKind::pauli_z, l, 2); }
inline Operator sc(cplx c) { return Operator::scalar(c); }

inline SLHTriple cavity(const std::string& l, double g, double d, int dim = 6) {
  return make_triple(OpMatrix::identity(1), {std::sqrt(g) * a(l, dim)}, d * num(l, dim));
}

inline Operator random_op(const LabeledSpace& s, std::mt19937& rng, double scale = 1.0) {
  std::normal_distribution<double> nd;
  DMat m(s.total_dim(), s.total_dim());
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) m(i, j) = scale * cplx(nd(rng), nd(rng));
  return Operator(s, m.sparseView());
}

inline Operator random_herm(const LabeledSpace& s, std::mt19937& rng, double scale = 1.0) {
  Operator x = random_op(s, rng, scale);
  return (x + x.adjoint()) * cplx(0.5);
}

inline Eigen::MatrixXcd random_unitary(int n, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXcd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = cplx(nd(rng), nd(rng));
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(m);
  return qr.householderQ() * Eigen::MatrixXcd::Identity(n, n);
}

inline DMat random_density(long d, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  DMat m(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) m(i, j) = cplx(nd(rng), nd(rng));
  DMat r = m * m.adjoint();
  return r / r.trace();
}

}  // namespace th
