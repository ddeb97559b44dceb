#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "qnet/catalog.hpp"
#include "qnet/dynamics.hpp"

using namespace qnet;
using namespace th;

namespace {

DMat ket_density(const LabeledSpace& sp, const std::vector<std::pair<std::string, int>>& lv) {
  DVec k = basis_ket(sp, lv);
  return k * k.adjoint();
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v;
  for (int k = 0; k < n; ++k) v.push_back(a + (b - a) * k / (n - 1));
  return v;
}

// Matrix with rows and columns touching an oscillator's top level removed (truncation artifacts live there).
DMat low(const Operator& x, const LabeledSpace& sp) {
  DMat m = x.embed(sp).dense();
  for (long k = 0; k < m.rows(); ++k) {
    auto idx = multi_index(k, sp);
    for (std::size_t f = 0; f < idx.size(); ++f)
      if (sp.factors()[f].kind == FactorKind::oscillator && idx[f] == sp.factors()[f].dim - 1) {
        m.row(k).setZero();
        m.col(k).setZero();
      }
  }
  return m;
}

double low_diff(const Operator& x, const Operator& y, const LabeledSpace& sp) {
  return (low(x, sp) - low(y, sp)).cwiseAbs().maxCoeff();
}

SLHTriple tla(const std::string& l, double g) {
  return make_triple(OpMatrix::identity(1), {std::sqrt(g) * sm(l)}, Operator::scalar(0.0));
}

}  // namespace

TEST_CASE("cavity decay matches exp(-gamma t)") {
  double g = 1.3;
  SLHTriple G = cavity("c", g, 0.4, 4);
  Superoperator L = liouvillian(G);
  auto ts = linspace(0, 5 / g, 41);
  MasterRun run = evolve(L, ket_density(G.space, {{"c", 1}}), ts);
  double worst = 0;
  for (std::size_t k = 0; k < ts.size(); ++k)
    worst = std::max(worst, std::abs(expect(run.rho[k], num("c", 4), G.space).real() - std::exp(-g * ts[k])));
  CHECK(worst < 1e-7);
}

TEST_CASE("halving tolerances reduces the decay error") {
  SLHTriple G = cavity("c", 1.0, 0.0, 3);
  Superoperator L = liouvillian(G);
  double prev = 1.0;
  for (double tol : {1e-4, 5e-5, 2.5e-5, 1.25e-5}) {
    MasterOptions o;
    o.ode.atol = tol;
    o.ode.rtol = tol;
    o.ode.h = 0.1;
    MasterRun run = evolve(L, ket_density(G.space, {{"c", 1}}), {0.0, 5.0}, o);
    double err = std::abs(expect(run.rho[1], num("c", 3), G.space).real() - std::exp(-5.0));
    CHECK(err <= prev);
    prev = err;
  }
}

TEST_CASE("trivial Liouvillians and integrator") {
  LabeledSpace sp({Factor{"q", 2, FactorKind::spin}});
  SLHTriple G = make_triple(OpMatrix::identity(1), {Operator::zero(sp)}, Operator::zero(sp));
  CHECK(max_abs(liouvillian(G).matrix()) == 0.0);
  RhsFn zero = [](double, const DVec& y, DVec& dy) { dy = DVec::Zero(y.size()); };
  DVec y0(3);
  y0 << 1.0, cplx(2, 1), -3.0;
  Trajectory tr = integrate(zero, y0, 0.0, {0.5, 1.0, 7.0});
  CHECK((tr.y.back() - y0).norm() == 0.0);
  IntegrateOptions fixed;
  fixed.fixed_step = true;
  fixed.h = 0.01;
  RhsFn decay = [](double, const DVec& y, DVec& dy) { dy = -y; };
  DVec one = DVec::Ones(1);
  Trajectory tf = integrate(decay, one, 0.0, {1.0}, fixed);
  CHECK(std::abs(tf.y[0][0] - std::exp(-1.0)) < 1e-12);
}

TEST_CASE("trace derivative vanishes for every builder") {
  std::mt19937 rng(7);
  LabeledSpace sp({Factor{"c", 4, FactorKind::oscillator}, Factor{"q", 2, FactorKind::spin}});
  Operator H = random_herm(sp, rng);
  Operator L1 = random_op(sp, rng), L2 = random_op(sp, rng);
  Eigen::MatrixXcd U = random_unitary(2, rng);
  OpMatrix S = OpMatrix::from_scalar(U);
  S(0, 0) = S(0, 0) * Operator(sp, (0.5 * (random_unitary(8, rng) + random_unitary(8, rng))).sparseView());
  SLHTriple G = make_triple(OpMatrix::from_scalar(U), {L1, L2}, H);
  SLHTriple Gs = make_triple(OpMatrix::from_scalar(Eigen::MatrixXcd::Identity(2, 2) * std::exp(cplx(0, 0.7))), {L1, L2}, H);
  GaussianEnv env;
  env.N = 0.3;
  env.M = cplx(0.2, 0.1);
  env.alpha = cplx(0.4, -0.2);
  std::vector<Superoperator> Ls{liouvillian(G), liouvillian_coherent(G, cplx(0.7, 0.3), 2), liouvillian_gaussian(Gs, env, 1)};
  for (int k = 0; k < 5; ++k) {
    DMat rho = random_density(sp.total_dim(), rng);
    for (const auto& L : Ls) CHECK(std::abs(L.apply(0.3, rho).trace()) < 1e-12);
  }
}

TEST_CASE("superoperator matrix agrees with apply") {
  std::mt19937 rng(3);
  LabeledSpace sp({Factor{"c", 3, FactorKind::oscillator}});
  SLHTriple G = make_triple(OpMatrix::identity(1), {random_op(sp, rng)}, random_herm(sp, rng));
  Superoperator L = liouvillian_coherent(G, cplx(0.3, 0.4));
  DMat rho = random_density(3, rng);
  CHECK((L.matrix() * vec(rho) - vec(L.apply(0.0, rho))).norm() < 1e-12);
}

TEST_CASE("coherently driven cavity steady state") {
  SLHTriple G = cavity("c", 2.0, 0.0, 24);
  DensityState ss = steady_state(liouvillian_coherent(G, 1.0));
  DMat rho(ss.rho.matrix());
  CHECK(std::abs(expect(rho, a("c", 24), G.space) - cplx(-std::sqrt(2.0))) < 1e-8);
  double gam = 1.5, del = 0.6;
  cplx al(0.5, 0.2);
  SLHTriple G2 = cavity("c", gam, del, 14);
  cplx want = -std::sqrt(gam) * al / (gam / 2 + cplx(0, del));
  DMat r1(steady_state(liouvillian_coherent(G2, al)).rho.matrix());
  SLHTriple src = instantiate(ComponentSpec{"coherent_source", {{"alpha", al}}, 8, "src"});
  SLHTriple cas = series(G2, src);
  DMat r2(steady_state(liouvillian(cas)).rho.matrix());
  CHECK(std::abs(expect(r1, a("c", 14), G2.space) - want) < 1e-8);
  CHECK(std::abs(expect(r2, a("c", 14), G2.space) - want) < 1e-8);
  CHECK((r1 - r2).cwiseAbs().maxCoeff() < 1e-8);
  DMat vac(steady_state(liouvillian(G2)).rho.matrix());
  CHECK(std::abs(vac(0, 0) - 1.0) < 1e-10);
}

TEST_CASE("coherent builder equals the cascaded source route") {
  std::mt19937 rng(11);
  SLHTriple K = instantiate(ComponentSpec{"kerr_cavity", {{"gamma", 1.2}, {"delta", 0.3}, {"chi", 0.15}}, 5, "k"});
  Pulse p = make_pulse("gaussian", {{"tc", 2.0}, {"sigma", 0.7}});
  cplx amp(0.8, -0.3);
  Superoperator A = liouvillian_coherent(K, xi_envelope(p, amp));
  SLHTriple src = instantiate(ComponentSpec{"coherent_source", {{"alpha", amp}, {"pulse", p}}, 8, "src"});
  Superoperator B = liouvillian(series(K, src));
  CHECK(A.time_dependent());
  for (double t : probe_times()) {
    DMat rho = random_density(5, rng);
    CHECK((A.apply(t, rho) - B.apply(t, rho)).cwiseAbs().maxCoeff() < 1e-8);
  }
  Superoperator Z = liouvillian_coherent(K, 0.0);
  DMat rho = random_density(5, rng);
  CHECK((Z.apply(0, rho) - liouvillian(K).apply(0, rho)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("coherent drive with non-trivial scattering matches the cascade") {
  std::mt19937 rng(5);
  LabeledSpace sp({Factor{"c", 3, FactorKind::oscillator}, Factor{"q", 2, FactorKind::spin}});
  Eigen::MatrixXcd U = random_unitary(2, rng);
  SLHTriple G = make_triple(OpMatrix::from_scalar(U), {random_op(sp, rng), random_op(sp, rng)}, random_herm(sp, rng));
  cplx al(0.4, 0.9);
  SLHTriple drive = concat(trivial_channels(1), instantiate(ComponentSpec{"coherent_source", {{"alpha", al}}, 8, "s"}));
  Superoperator A = liouvillian_coherent(G, al, 2);
  Superoperator B = liouvillian(series(G, drive));
  DMat rho = random_density(6, rng);
  CHECK((A.apply(0, rho) - B.apply(0, rho)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("gaussian field master equation") {
  SLHTriple G = cavity("c", 1.0, 0.0, 25);
  GaussianEnv th;
  th.N = 0.5;
  DMat r(steady_state(liouvillian_gaussian(G, th)).rho.matrix());
  CHECK(std::abs(expect(r, num("c", 25), G.space).real() - 0.5) < 1e-8);

  GaussianEnv none;
  std::mt19937 rng(2);
  DMat rho = random_density(25, rng);
  CHECK((liouvillian_gaussian(G, none).apply(0, rho) - liouvillian(G).apply(0, rho)).cwiseAbs().maxCoeff() < 1e-12);

  GaussianEnv sq = GaussianEnv::from_squeezing(0.3, 0.2, 0.0);
  CHECK(std::abs(sq.N * (sq.N + 1) - std::norm(sq.M)) < 1e-12);
  CHECK(std::abs(sq.squeeze_r() - 0.3) < 1e-12);
  CHECK(std::abs(sq.squeeze_phi() - 0.2) < 1e-12);
  CHECK(std::abs(sq.n_th()) < 1e-9);
  SLHTriple Gs = cavity("c", 1.0, 0.0, 30);
  DMat rs(steady_state(liouvillian_gaussian(Gs, sq)).rho.matrix());
  CHECK(std::abs(expect(rs, num("c", 30), Gs.space).real() - sq.N) < 1e-8);
  CHECK(std::abs(expect(rs, a("c", 30) * a("c", 30), Gs.space) - sq.M) < 1e-8);
  CHECK(std::abs((rs * rs).trace().real() - 1.0) < 1e-6);

  GaussianEnv bad = sq;
  bad.M *= 1.0 + 1e-6;
  CHECK_THROWS_AS(liouvillian_gaussian(Gs, bad), Error);
  SLHTriple mix = series(make_triple(OpMatrix::identity(2), {std::sqrt(1.0) * a("c", 4), Operator::scalar(0)}, Operator::scalar(0)),
                         instantiate(ComponentSpec{"beamsplitter", {{"eta", 0.3}}, 8, "bs"}));
  try {
    liouvillian_gaussian(mix, th);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unsupported);
  }
  SLHTriple ph = series(cavity("c", 1.0, 0.0, 20), instantiate(ComponentSpec{"phase_shifter", {{"phi", 0.8}}, 8, "p"}));
  GaussianEnv coh;
  coh.alpha = cplx(0.3, 0.1);
  DMat rg(steady_state(liouvillian_gaussian(ph, coh)).rho.matrix());
  DMat rc(steady_state(liouvillian_coherent(ph, coh.alpha)).rho.matrix());
  CHECK((rg - rc).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("steady state uniqueness") {
  LabeledSpace sp({Factor{"q", 2, FactorKind::spin}});
  SLHTriple G = make_triple(OpMatrix::identity(1), {Operator::zero(sp)}, Operator::zero(sp));
  CHECK_THROWS_AS(steady_state(liouvillian(G)), Error);
  Pulse p = make_pulse("gaussian", {{"tc", 2.0}, {"sigma", 0.7}});
  CHECK_THROWS_AS(steady_state(liouvillian_coherent(cavity("c", 1, 0, 3), xi_envelope(p))), Error);
}

TEST_CASE("heisenberg coefficients") {
  double g = 1.7, d = 0.4;
  SLHTriple C = cavity("c", g, d, 6);
  HeisenbergCoefficients h = heisenberg_coefficients(C, a("c"));
  CHECK(max_abs_diff(h.drift, -cplx(g / 2, d) * a("c")) < 1e-12);
  CHECK(low_diff(h.dB[0], Operator::identity(C.space) * (-std::sqrt(g)), C.space) < 1e-12);
  CHECK(h.dBdag[0].is_zero(1e-12));
  CHECK(h.dLambda(0, 0).is_zero(1e-12));

  HeisenbergCoefficients hi = heisenberg_coefficients(C, Operator::identity(C.space));
  CHECK(hi.drift.is_zero(1e-12));
  CHECK(hi.dB[0].is_zero(1e-12));
  CHECK(hi.dLambda(0, 0).is_zero(1e-12));

  double g1 = 1.1, g2 = 0.6, d1 = 0.2, d2 = -0.3, eta = 0.35, c = std::sqrt(1 - eta * eta);
  SLHTriple C1 = concat(cavity("a1", g1, d1, 4), trivial_channels(1));
  SLHTriple C2 = concat(cavity("a2", g2, d2, 4), trivial_channels(1));
  SLHTriple B = instantiate(ComponentSpec{"beamsplitter", {{"eta", eta}}, 8, "bs"});
  SLHTriple N = series(C2, series(B, C1));
  HeisenbergCoefficients h2 = heisenberg_coefficients(N, a("a2", 4));
  Operator want = -cplx(g2 / 2, d2) * a("a2", 4) - c * std::sqrt(g1 * g2) * a("a1", 4);
  CHECK(low_diff(h2.drift, want, N.space) < 1e-12);
  Operator id = Operator::identity(N.space);
  CHECK(low_diff(h2.dB[0], id * (-std::sqrt(g2) * c), N.space) < 1e-12);
  CHECK(low_diff(h2.dB[1], id * (std::sqrt(g2) * eta), N.space) < 1e-12);
  CHECK(h2.dBdag[0].is_zero(1e-12));
  HeisenbergCoefficients h1 = heisenberg_coefficients(N, a("a1", 4));
  CHECK(low_diff(h1.dB[0], id * (-std::sqrt(g1)), N.space) < 1e-12);
  CHECK(h1.dB[1].is_zero(1e-12));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(h2.dLambda(i, j).is_zero(1e-12));
}

TEST_CASE("Ehrenfest consistency") {
  std::mt19937 rng(19);
  LabeledSpace sp({Factor{"x", 3, FactorKind::other}, Factor{"q", 2, FactorKind::spin}});
  Eigen::MatrixXcd U = random_unitary(2, rng);
  SLHTriple G = make_triple(OpMatrix::from_scalar(U), {random_op(sp, rng, 0.5), random_op(sp, rng, 0.5)}, random_herm(sp, rng));
  Superoperator L = liouvillian(G);
  for (int k = 0; k < 3; ++k) {
    Operator X = random_herm(sp, rng);
    DMat rho = random_density(6, rng);
    cplx lhs = expect(L.apply(0, rho), X, sp);
    cplx rhs = expect(rho, heisenberg_coefficients(G, X).drift, sp);
    CHECK(std::abs(lhs - rhs) < 1e-10);
    double h = 2e-4;
    MasterOptions o;
    o.ode.atol = 1e-14;
    o.ode.rtol = 1e-13;
    MasterRun run = evolve(L, rho, {0.0, h, 2 * h}, o);
    cplx fd = (expect(run.rho[2], X, sp) - expect(run.rho[0], X, sp)) / (2 * h);
    cplx mid = expect(run.rho[1], heisenberg_coefficients(G, X).drift, sp);
    CHECK(std::abs(fd - mid) < 1e-5);
  }
}

TEST_CASE("output relations") {
  OutputRelations r = output_relations(cavity("c", 2.0, 0.0, 4));
  CHECK(max_abs_diff(r.L[0], std::sqrt(2.0) * a("c", 4)) < 1e-14);
  OutputRelations bs = output_relations(instantiate(ComponentSpec{"beamsplitter", {{"eta", 0.4}}, 8, "b"}));
  CHECK(bs.L[0].is_zero(0));
  CHECK(bs.L[1].is_zero(0));
  OutputRelations cas = output_relations(series(cavity("a2", 0.7, 0, 3), cavity("a1", 1.3, 0, 3)));
  CHECK(max_abs_diff(cas.L[0], std::sqrt(1.3) * a("a1", 3) + std::sqrt(0.7) * a("a2", 3)) < 1e-14);
  CHECK(max_abs_diff(cas.LdagL(0, 0), cas.L[0].adjoint() * cas.L[0]) < 1e-14);
  CHECK(cas.describe()["n_ports"] == 1);
}

TEST_CASE("output flux of a decaying cavity integrates to one photon") {
  SLHTriple G = cavity("c", 1.0, 0.0, 3);
  FockHierarchy F(G, Envelope(), 1);
  FockHierarchyState s0 = fock_number_state(ket_density(G.space, {{"c", 1}}), 0);
  FockRun run = evolve_fock(F, s0, {0.0, 20.0});
  CHECK(std::abs(run.emitted.back() - 1.0) < 1e-4);
  LabeledSpace sp({Factor{"q", 2, FactorKind::spin}});
  SLHTriple Z = make_triple(OpMatrix::identity(1), {Operator::zero(sp)}, Operator::zero(sp));
  CHECK(output_flux(Z, ket_density(sp, {{"q", 1}}), 1) == 0.0);
}

TEST_CASE("single photon on a two-level atom") {
  double g = 1.0;
  SLHTriple A = tla("q", g);
  Pulse p = make_pulse("gaussian", {{"tc", 5.0 / g}, {"sigma", 1.0 / g}});
  FockHierarchy F(A, xi_envelope(p), 1);
  DMat ground = ket_density(A.space, {{"q", 0}});
  FockHierarchyState s0 = fock_number_state(ground, 1);
  auto ts = linspace(0, 12 / g, 121);
  FockRun run = evolve_fock(F, s0, ts);
  double herm = 0, cons = 0, peak = 0;
  DMat exc = DMat(sp("q").adjoint().matrix() * sm("q").matrix()).real().cast<cplx>();
  exc = DMat(sp("q").matrix() * sm("q").matrix());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const auto& s = run.states[k];
    herm = std::max(herm, (s.block(0, 1) - s.block(1, 0).adjoint()).cwiseAbs().maxCoeff());
    double e = FockHierarchy::expect(s, exc).real();
    peak = std::max(peak, e);
    double arrived = 1.0 - p.W(ts[k]);
    cons = std::max(cons, std::abs(e + run.emitted[k] - arrived));
  }
  CHECK(herm < 1e-8);
  CHECK(cons < 1e-6);
  CHECK(peak > 0.3);
  CHECK(peak < 1.0);
  double total = FockHierarchy::expect(run.states.back(), exc).real() + run.emitted.back();
  CHECK(std::abs(total - 1.0) < 1e-4);

  MasterRun vac = evolve(liouvillian(A), ground, ts);
  double diff = 0;
  for (std::size_t k = 0; k < ts.size(); ++k) diff = std::max(diff, (vac.rho[k] - run.states[k].block(0, 0)).cwiseAbs().maxCoeff());
  CHECK(diff < 1e-8);
}

TEST_CASE("fock hierarchy with zero envelope reduces to vacuum evolution") {
  std::mt19937 rng(4);
  LabeledSpace sp({Factor{"c", 3, FactorKind::oscillator}});
  SLHTriple G = make_triple(OpMatrix::identity(1), {random_op(sp, rng, 0.5)}, random_herm(sp, rng));
  auto zero = make_atom("zero", [](double) { return cplx(0.0); });
  FockHierarchy F(G, Envelope(zero), 1);
  DMat rho = random_density(3, rng);
  FockHierarchyState s = fock_number_state(rho, 2);
  for (auto& b : s.blocks) b = random_density(3, rng);
  FockHierarchyState ds;
  F.rhs(0.4, s, ds);
  Superoperator L = liouvillian(G);
  double worst = 0;
  for (std::size_t k = 0; k < s.blocks.size(); ++k)
    worst = std::max(worst, (ds.blocks[k] - L.apply(0.4, s.blocks[k])).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-14);
  FockHierarchyState viaFree = fock_hierarchy_rhs(G, Envelope(zero), s, 0.4);
  CHECK((viaFree.blocks[3] - ds.blocks[3]).norm() < 1e-14);
}

TEST_CASE("single photon reflects off a far-detuned cavity") {
  SLHTriple G = cavity("c", 1.0, 40.0, 3);
  Pulse p = make_pulse("gaussian", {{"tc", 4.0}, {"sigma", 1.0}});
  FockHierarchy F(G, xi_envelope(p), 1);
  FockRun run = evolve_fock(F, fock_number_state(ket_density(G.space, {{"c", 0}}), 1), linspace(0, 10, 41));
  CHECK(std::abs(run.emitted.back() - 1.0) < 1e-4);
  double worst = 0;
  for (std::size_t k = 1; k + 1 < run.t.size(); ++k) {
    double rate = (run.emitted[k + 1] - run.emitted[k - 1]) / (run.t[k + 1] - run.t[k - 1]);
    worst = std::max(worst, std::abs(rate - std::norm(p.xi(run.t[k]))));
  }
  CHECK(worst < 2e-2);
}

TEST_CASE("truncation guard and trace checks") {
  SLHTriple G = cavity("c", 1.0, 0.0, 4);
  MasterOptions o;
  CHECK_THROWS_WITH_AS(evolve(liouvillian_coherent(G, 3.0), ket_density(G.space, {{"c", 0}}), {0.0, 5.0}, o),
                       doctest::Contains("mode 'c'"), Error);
  DMat bad = ket_density(G.space, {{"c", 0}}) * 1.1;
  CHECK_THROWS_AS(evolve(liouvillian(G), bad, {0.0, 1.0}), Error);
  o.truncation_guard = -1;
  CHECK_NOTHROW(evolve(liouvillian_coherent(G, 3.0), ket_density(G.space, {{"c", 0}}), {0.0, 1.0}, o));
}

TEST_CASE("trajectory tables") {
  SLHTriple G = cavity("c", 1.0, 0.0, 3);
  MasterRun run = evolve(liouvillian(G), ket_density(G.space, {{"c", 1}}), {0.0, 1.0});
  TrajectoryTable tab = tabulate(G.space, run.t, run.rho, {{"n", num("c", 3)}, {"a", a("c", 3)}});
  std::ostringstream os;
  write_csv(os, tab);
  std::string s = os.str();
  CHECK(s.rfind("t,n,a\n0.000000000000e+00,1.000000000000e+00,0.000000000000e+00:0.000000000000e+00\n", 0) == 0);
  json j = trajectory_json(tab, {{"tolerances", {1e-10, 1e-8}}});
  CHECK(j["observables"][0]["name"] == "n");
  CHECK(j["observables"][1]["complex"] == true);
}
