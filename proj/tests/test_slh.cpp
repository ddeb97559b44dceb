#include <algorithm>

#include "doctest.h"
#include "helpers.hpp"

using namespace qnet;
using namespace th;

TEST_CASE("series of two cavities") {
  double g1 = 1.3, g2 = 0.7, d1 = 0.4, d2 = -0.9;
  SLHTriple c1 = cavity("a1", g1, d1), c2 = cavity("a2", g2, d2);
  SLHTriple G = series(c2, c1);
  Operator a1 = a("a1"), a2 = a("a2");
  Operator Lw = std::sqrt(g1) * a1 + std::sqrt(g2) * a2;
  Operator Hw = d1 * num("a1") + d2 * num("a2") +
                cplx(0, -0.5) * std::sqrt(g1 * g2) * (a2.adjoint() * a1 - a1.adjoint() * a2);
  CHECK(max_abs_diff(G.L[0], Lw) < 1e-10);
  CHECK(max_abs_diff(G.H, Hw) < 1e-10);
  CHECK(max_abs_diff(G.S(0, 0), Operator::identity(G.space)) < 1e-10);
  SLHTriple R = series(c1, c2);
  CHECK(max_abs_diff(R.H, G.H) > 1e-3);
  CHECK(approx_equal(series(G, trivial_channels(1)), G));
  CHECK(check_invariants(G).ok(1e-10));
  CHECK_THROWS_AS(series(trivial_channels(2), c1), Error);
}

TEST_CASE("series associativity and concat-then-feedback") {
  std::mt19937 rng(5);
  std::vector<SLHTriple> Gs;
  for (int k = 0; k < 3; ++k) {
    LabeledSpace s({{"q" + std::to_string(k), 2}});
    Gs.push_back(make_triple(OpMatrix::from_scalar(random_unitary(2, rng)), {random_op(s, rng), random_op(s, rng)},
                             random_herm(s, rng)));
  }
  CHECK(approx_equal(series(Gs[2], series(Gs[1], Gs[0])), series(series(Gs[2], Gs[1]), Gs[0]), 1e-10));
  SLHTriple C = concat(Gs[0], Gs[1]);
  FeedbackResult r = feedback_multi(C, PortMap{{{1, 3}, {2, 4}}});
  CHECK(approx_equal(r.G, series(Gs[1], Gs[0]), 1e-10));
}

TEST_CASE("concatenation and padding") {
  SLHTriple c1 = cavity("a1", 1.0, 0.2), c2 = cavity("a2", 2.0, 0.3);
  SLHTriple G = concat(c1, c2);
  CHECK(G.n_ports == 2);
  CHECK(G.S(0, 1).is_zero());
  CHECK(max_abs_diff(G.H, 0.2 * num("a1") + 0.3 * num("a2")) < 1e-12);
  SLHTriple left = pad(c1, 1, PadSide::before), right = pad(c1, 1, PadSide::after);
  CHECK(approx_equal(permute_ports(left, {2, 1}, PortSide::both), right));
  CHECK(approx_equal(pad(c1, 0, PadSide::after), c1));
  SLHTriple back = feedback(right, 2, 2).G;
  CHECK(approx_equal(back, c1));
}

TEST_CASE("direct coupling") {
  SLHTriple c1 = cavity("a1", 1.0, 0.5), c2 = cavity("a2", 1.5, -0.5);
  double chi = 0.25;
  SLHTriple G = direct_couple(c1, c2, chi * num("a1") * num("a2"));
  CHECK(max_abs_diff(G.H, 0.5 * num("a1") - 0.5 * num("a2") + chi * num("a1") * num("a2")) < 1e-12);
  CHECK(approx_equal(direct_couple(c1, c2, Operator::scalar(0.0)), concat(c1, c2)));
  CHECK_THROWS_AS(direct_couple(c1, c2, a("a1")), Error);
  Operator bs = 0.3 * (ad("a1") * a("a2") + ad("a2") * a("a1"));
  SLHTriple B = direct_couple(c1, c2, bs);
  SLHTriple P = concat(c1, c2);
  CHECK(max_abs_diff(B.S, P.S) < 1e-14);
  CHECK(max_abs_diff(B.H - P.H, bs) < 1e-12);
}

TEST_CASE("feedback golden cases") {
  double g1 = 0.8, g2 = 1.7, d = 0.3;
  SLHTriple two = make_triple(OpMatrix::identity(2), {std::sqrt(g1) * a("a"), cplx(0, 1) * std::sqrt(g2) * a("a")}, d * num("a"));
  SLHTriple r = feedback(two, 1, 2).G;
  CHECK(r.n_ports == 1);
  CHECK(max_abs_diff(r.L[0], cplx(std::sqrt(g1), std::sqrt(g2)) * a("a")) < 1e-10);
  CHECK(max_abs_diff(r.H, (d - std::sqrt(g1 * g2)) * num("a")) < 1e-10);

  Eigen::MatrixXcd swap(2, 2);
  swap << 0, 1, 1, 0;
  SLHTriple s = feedback(scattering_only(swap), 1, 1).G;
  CHECK(approx_equal(s, trivial_channels(1)));

  SLHTriple loop = make_triple(OpMatrix::identity(2), {a("a"), Operator::scalar(0.0)}, Operator::scalar(0.0));
  CHECK_THROWS_AS(feedback(loop, 1, 1), Error);
  SLHTriple padded = pad(pad(two, 1, PadSide::before), 1, PadSide::before);
  CHECK(approx_equal(feedback_multi(padded, PortMap{{{1, 1}, {2, 2}}}).G, two));
  CHECK_THROWS_AS(feedback(two, 3, 1), Error);
}

TEST_CASE("generic two-port feedback 2->2") {
  std::mt19937 rng(17);
  LabeledSpace s({{"q", 2}});
  Eigen::MatrixXcd U = random_unitary(2, rng);
  Operator L1 = random_op(s, rng), L2 = random_op(s, rng), H = random_herm(s, rng);
  SLHTriple G = make_triple(OpMatrix::from_scalar(U), {L1, L2}, H);
  SLHTriple r = feedback(G, 2, 2).G;
  cplx inv = 1.0 / (1.0 - U(1, 1));
  cplx Sred = U(0, 0) + U(0, 1) * inv * U(1, 0);
  Operator Lred = L1 + U(0, 1) * inv * L2;
  Operator T = (L1.adjoint() * U(0, 1) + L2.adjoint() * U(1, 1)) * inv * L2;
  Operator Hred = H + cplx(0, -0.5) * (T - T.adjoint());
  CHECK(std::abs(r.S(0, 0).matrix().coeff(0, 0) - Sred) < 1e-10);
  CHECK(max_abs_diff(r.L[0], Lred) < 1e-10);
  CHECK(max_abs_diff(r.H, Hred) < 1e-10);
}

TEST_CASE("beamsplitter-interrupted cascade") {
  double eta = 0.6, c = std::sqrt(1 - eta * eta), g1 = 1.1, g2 = 0.9, d1 = 0.2, d2 = 0.7;
  Eigen::MatrixXcd B(2, 2);
  B << c, -eta, eta, c;
  SLHTriple C1 = pad(cavity("a1", g1, d1), 1, PadSide::after);
  SLHTriple C2 = pad(cavity("a2", g2, d2), 1, PadSide::after);
  SLHTriple G = series(C2, series(scattering_only(B), C1));
  Operator a1 = a("a1"), a2 = a("a2");
  CHECK(max_abs_diff(G.S, OpMatrix::from_scalar(B).embed(G.space)) < 1e-10);
  CHECK(max_abs_diff(G.L[0], std::sqrt(g2) * a2 + c * std::sqrt(g1) * a1) < 1e-10);
  CHECK(max_abs_diff(G.L[1], eta * std::sqrt(g1) * a1) < 1e-10);
  Operator Hw = d1 * num("a1") + d2 * num("a2") + cplx(0, -0.5) * c * std::sqrt(g1 * g2) * (a2.adjoint() * a1 - a2 * a1.adjoint());
  CHECK(max_abs_diff(G.H, Hw) < 1e-10);
}

namespace {

struct NetEg {
  SLHTriple full;
  Operator L1, L2, L5, L6, H1, H2;
  double phi;
};

NetEg network_example() {
  NetEg n;
  n.phi = 0.77;
  n.L1 = 0.9 * sm("q");
  n.L2 = cplx(0.3, 0.4) * sm("q");
  n.H1 = 0.35 * sz("q");
  n.L5 = 1.2 * a("c", 4);
  n.L6 = 0.5 * a("c", 4) + 0.2 * num("c", 4);
  n.H2 = -0.6 * num("c", 4);
  SLHTriple G1 = make_triple(OpMatrix::identity(2), {n.L1, n.L2}, n.H1);
  Eigen::MatrixXcd ph(1, 1);
  ph << std::exp(cplx(0, n.phi));
  SLHTriple G2 = scattering_only(ph), G3 = scattering_only(ph);
  SLHTriple G4 = make_triple(OpMatrix::identity(2), {n.L5, n.L6}, n.H2);
  n.full = concat(concat(concat(G1, G2), G3), G4);
  return n;
}

}  // namespace

TEST_CASE("multi-port network reduction") {
  NetEg n = network_example();
  PortMap w{{{1, 3}, {3, 5}, {6, 4}, {4, 2}}};
  FeedbackResult r = feedback_multi(n.full, w);
  CHECK(r.output_map == std::vector<int>{1, 4});
  CHECK(r.input_map == std::vector<int>{0, 5});
  SLHTriple G = permute_ports(r.G, {2, 1}, PortSide::outputs);
  cplx e = std::exp(cplx(0, n.phi));
  CHECK(std::abs(G.S(0, 0).matrix().coeff(0, 0) - e) < 1e-10);
  CHECK(G.S(0, 1).is_zero());
  CHECK(max_abs_diff(G.L[0], n.L5 + e * n.L1) < 1e-10);
  CHECK(max_abs_diff(G.L[1], n.L2 + e * n.L6) < 1e-10);
  Operator Hw = n.H1 + n.H2 + cplx(0, -0.5) * (e * n.L1 * n.L5.adjoint() - std::conj(e) * n.L1.adjoint() * n.L5 +
                                               e * n.L2.adjoint() * n.L6 - std::conj(e) * n.L2 * n.L6.adjoint());
  CHECK(max_abs_diff(G.H, Hw) < 1e-10);
  std::vector<int> order{0, 1, 2, 3};
  do {
    FeedbackResult s = feedback_sequential(n.full, w, order);
    CHECK(s.output_map == r.output_map);
    CHECK(approx_equal(s.G, r.G, 1e-10));
  } while (std::next_permutation(order.begin(), order.end()));
}

TEST_CASE("operator-valued scattering feedback") {
  std::mt19937 rng(23);
  LabeledSpace s({{"q", 2}});
  int n = 3;
  Eigen::MatrixXcd U = random_unitary(n * 2, rng);
  OpMatrix S(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) S(i, j) = Operator(s, DMat(U.block(2 * i, 2 * j, 2, 2)).sparseView());
  std::vector<Operator> L;
  for (int k = 0; k < n; ++k) L.push_back(random_op(s, rng));
  SLHTriple G = make_triple(S, L, random_herm(s, rng));
  PortMap w{{{1, 2}, {2, 3}}};
  FeedbackResult r = feedback_multi(G, w);
  CHECK(check_invariants(r.G).ok(1e-9));
  CHECK(approx_equal(feedback_sequential(G, w, {0, 1}).G, r.G, 1e-9));
  CHECK(approx_equal(feedback_sequential(G, w, {1, 0}).G, r.G, 1e-9));
}

TEST_CASE("port permutations") {
  std::mt19937 rng(29);
  LabeledSpace s({{"q", 2}});
  SLHTriple G = make_triple(OpMatrix::from_scalar(random_unitary(3, rng)), {random_op(s, rng), random_op(s, rng), random_op(s, rng)},
                            random_herm(s, rng));
  SLHTriple P = permute_ports(G, {3, 1, 2}, PortSide::outputs);
  // output k of G becomes logical output sigma(k)
  CHECK(max_abs_diff(P.L[2], G.L[0]) < 1e-14);
  CHECK(max_abs_diff(P.L[0], G.L[1]) < 1e-14);
  CHECK(approx_equal(permute_ports(G, {1, 2, 3}, PortSide::both), G));
  std::vector<int> s1{2, 3, 1}, s2{3, 1, 2}, s12(3);
  for (int k = 0; k < 3; ++k) s12[k] = s1[s2[k] - 1];
  CHECK(approx_equal(permute_ports(permute_ports(G, s2, PortSide::outputs), s1, PortSide::outputs),
                     permute_ports(G, s12, PortSide::outputs), 1e-14));
  Eigen::MatrixXcd Pm = permutation_matrix({3, 1, 2}).cast<cplx>();
  CHECK(approx_equal(P, series(scattering_only(Pm), G), 1e-12));
  CHECK_THROWS_AS(permute_ports(G, {1, 1, 2}, PortSide::outputs), Error);
}

TEST_CASE("triple json round trip") {
  SLHTriple G = series(cavity("a2", 0.5, 0.1), cavity("a1", 1.0, 0.2));
  SLHTriple R = triple_from_json(triple_to_json(G));
  CHECK(approx_equal(G, R, 1e-11));
  CHECK(triple_hash(G) == triple_hash(R));
}
