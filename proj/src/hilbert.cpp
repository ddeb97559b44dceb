#include "qnet/hilbert.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>

namespace qnet {

LabeledSpace::LabeledSpace(std::vector<Factor> factors) : factors_(std::move(factors)) {
  std::sort(factors_.begin(), factors_.end(), [](const Factor& a, const Factor& b) { return a.label < b.label; });
  total_ = 1;
  for (std::size_t k = 0; k < factors_.size(); ++k) {
    if (factors_[k].dim < 1) throw Error(ErrorKind::construction, "factor '" + factors_[k].label + "' has dim < 1");
    if (k > 0 && factors_[k].label == factors_[k - 1].label)
      throw Error(ErrorKind::construction, "duplicate factor label '" + factors_[k].label + "'");
    total_ *= factors_[k].dim;
  }
}

int LabeledSpace::index_of(const std::string& label) const {
  auto it = std::lower_bound(factors_.begin(), factors_.end(), label,
                             [](const Factor& f, const std::string& l) { return f.label < l; });
  if (it == factors_.end() || it->label != label) return -1;
  return static_cast<int>(it - factors_.begin());
}

std::vector<std::string> LabeledSpace::labels() const {
  std::vector<std::string> out;
  for (const auto& f : factors_) out.push_back(f.label);
  return out;
}

LabeledSpace LabeledSpace::unite(const LabeledSpace& a, const LabeledSpace& b) {
  if (a == b) return a;
  std::vector<Factor> fs = a.factors_;
  for (const auto& f : b.factors_) {
    int k = a.index_of(f.label);
    if (k < 0) {
      fs.push_back(f);
    } else if (a.factors_[k].dim == f.dim) {
      if (fs[k].kind == FactorKind::other) fs[k].kind = f.kind;
    } else {
      throw Error(ErrorKind::embedding, "factor '" + f.label + "' has conflicting dims " +
                                            std::to_string(a.factors_[k].dim) + " and " + std::to_string(f.dim));
    }
  }
  return LabeledSpace(std::move(fs));
}

LabeledSpace LabeledSpace::restrict_to(const std::set<std::string>& keep) const {
  std::vector<Factor> fs;
  for (const auto& l : keep)
    if (!has(l)) throw Error(ErrorKind::embedding, "unknown factor label '" + l + "'");
  for (const auto& f : factors_)
    if (keep.count(f.label)) fs.push_back(f);
  return LabeledSpace(std::move(fs));
}

std::vector<int> multi_index(long flat, const LabeledSpace& space) {
  const auto& fs = space.factors();
  std::vector<int> idx(fs.size());
  for (int k = static_cast<int>(fs.size()) - 1; k >= 0; --k) {
    idx[k] = static_cast<int>(flat % fs[k].dim);
    flat /= fs[k].dim;
  }
  return idx;
}

long flat_index(const std::vector<int>& idx, const LabeledSpace& space) {
  long flat = 0;
  const auto& fs = space.factors();
  for (std::size_t k = 0; k < fs.size(); ++k) flat = flat * fs[k].dim + idx[k];
  return flat;
}

namespace {

std::vector<long> strides(const LabeledSpace& s) {
  const auto& fs = s.factors();
  std::vector<long> st(fs.size());
  long acc = 1;
  for (int k = static_cast<int>(fs.size()) - 1; k >= 0; --k) {
    st[k] = acc;
    acc *= fs[k].dim;
  }
  return st;
}

struct EmbedPlan {
  std::vector<long> from_to_stride;  // target stride of each source factor
  std::vector<long> other_offsets;   // offsets of all combinations of the extra factors
};

EmbedPlan plan_embed(const LabeledSpace& from, const LabeledSpace& to) {
  EmbedPlan p;
  auto st = strides(to);
  std::vector<bool> used(to.factors().size(), false);
  for (const auto& f : from.factors()) {
    int k = to.index_of(f.label);
    if (k < 0) throw Error(ErrorKind::embedding, "label '" + f.label + "' missing from target space");
    if (to.factors()[k].dim != f.dim)
      throw Error(ErrorKind::embedding, "dim mismatch for label '" + f.label + "'");
    used[k] = true;
    p.from_to_stride.push_back(st[k]);
  }
  p.other_offsets = {0};
  for (std::size_t k = 0; k < to.factors().size(); ++k) {
    if (used[k]) continue;
    std::vector<long> next;
    next.reserve(p.other_offsets.size() * to.factors()[k].dim);
    for (long o : p.other_offsets)
      for (int l = 0; l < to.factors()[k].dim; ++l) next.push_back(o + l * st[k]);
    p.other_offsets = std::move(next);
  }
  return p;
}

long map_index(long flat, const LabeledSpace& from, const std::vector<long>& tstride) {
  long out = 0;
  const auto& fs = from.factors();
  for (int k = static_cast<int>(fs.size()) - 1; k >= 0; --k) {
    out += (flat % fs[k].dim) * tstride[k];
    flat /= fs[k].dim;
  }
  return out;
}

}  // namespace

SpMat embed_matrix(const SpMat& m, const LabeledSpace& from, const LabeledSpace& to) {
  if (from == to) return m;
  EmbedPlan p = plan_embed(from, to);
  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(static_cast<std::size_t>(m.nonZeros()) * p.other_offsets.size());
  for (int c = 0; c < m.outerSize(); ++c) {
    for (SpMat::InnerIterator it(m, c); it; ++it) {
      long r0 = map_index(it.row(), from, p.from_to_stride);
      long c0 = map_index(it.col(), from, p.from_to_stride);
      for (long o : p.other_offsets) trip.emplace_back(r0 + o, c0 + o, it.value());
    }
  }
  SpMat out(to.total_dim(), to.total_dim());
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

DMat embed_dense(const DMat& m, const LabeledSpace& from, const LabeledSpace& to) {
  return DMat(embed_matrix(m.sparseView(), from, to));
}

static std::atomic<long> g_atom_counter{0};

std::shared_ptr<const EnvelopeAtom> make_atom(std::string name, std::function<cplx(double)> fn) {
  auto a = std::make_shared<EnvelopeAtom>();
  a->name = std::move(name);
  a->fn = std::move(fn);
  a->id = ++g_atom_counter;
  return a;
}

Envelope::Envelope(std::shared_ptr<const EnvelopeAtom> a) { parts_.emplace_back(std::move(a), false); }

cplx Envelope::operator()(double t) const {
  cplx v = 1.0;
  for (const auto& [a, c] : parts_) {
    cplx f = a->fn(t);
    v *= c ? std::conj(f) : f;
  }
  return v;
}

Envelope Envelope::conj() const {
  Envelope e = *this;
  for (auto& p : e.parts_) p.second = !p.second;
  e.canonicalize();
  return e;
}

Envelope Envelope::operator*(const Envelope& o) const {
  Envelope e = *this;
  e.parts_.insert(e.parts_.end(), o.parts_.begin(), o.parts_.end());
  e.canonicalize();
  return e;
}

void Envelope::canonicalize() {
  std::sort(parts_.begin(), parts_.end(), [](const Part& a, const Part& b) {
    return std::make_pair(a.first->id, a.second) < std::make_pair(b.first->id, b.second);
  });
}

std::vector<std::pair<long, bool>> Envelope::key() const {
  std::vector<std::pair<long, bool>> k;
  for (const auto& [a, c] : parts_) k.emplace_back(a->id, c);
  return k;
}

std::string Envelope::describe() const {
  if (parts_.empty()) return "1";
  std::string s;
  for (std::size_t k = 0; k < parts_.size(); ++k) {
    if (k) s += "*";
    s += parts_[k].second ? "conj(" + parts_[k].first->name + ")" : parts_[k].first->name;
  }
  return s;
}

Operator::Operator() : c_(1, 1) {}

Operator::Operator(LabeledSpace space, SpMat m) : space_(std::move(space)), c_(std::move(m)) {
  if (c_.rows() != space_.total_dim() || c_.cols() != space_.total_dim())
    throw Error(ErrorKind::construction, "matrix shape does not match space dimension");
  c_.makeCompressed();
}

Operator Operator::scalar(cplx c) {
  SpMat m(1, 1);
  if (c != cplx(0.0)) m.insert(0, 0) = c;
  return Operator(LabeledSpace(), m);
}

Operator Operator::identity(const LabeledSpace& space) {
  SpMat m(space.total_dim(), space.total_dim());
  m.setIdentity();
  return Operator(space, m);
}

Operator Operator::zero(const LabeledSpace& space) {
  return Operator(space, SpMat(space.total_dim(), space.total_dim()));
}

Operator Operator::timed(const Envelope& env, const Operator& x) {
  Operator out = Operator::zero(x.space_);
  out.add_term(env, x.c_);
  for (const auto& t : x.terms_) out.add_term(env * t.env, t.mat);
  return out;
}

void Operator::add_term(const Envelope& env, const SpMat& m) {
  if (env.constant()) {
    c_ += m;
    return;
  }
  auto it = std::lower_bound(terms_.begin(), terms_.end(), env, [](const Term& t, const Envelope& e) { return t.env < e; });
  if (it != terms_.end() && it->env == env) {
    it->mat += m;
  } else {
    terms_.insert(it, Term{env, m});
  }
}

SpMat Operator::at(double t) const {
  SpMat m = c_;
  for (const auto& term : terms_) m += term.env(t) * term.mat;
  return m;
}

Operator Operator::operator+(const Operator& o) const {
  if (space_ != o.space_) {
    LabeledSpace u = LabeledSpace::unite(space_, o.space_);
    return embed(u) + o.embed(u);
  }
  Operator out = *this;
  out.c_ += o.c_;
  for (const auto& t : o.terms_) out.add_term(t.env, t.mat);
  return out;
}

Operator Operator::operator-() const { return *this * cplx(-1.0); }
Operator Operator::operator-(const Operator& o) const { return *this + (-o); }

Operator Operator::operator*(const Operator& o) const {
  if (space_ != o.space_) {
    LabeledSpace u = LabeledSpace::unite(space_, o.space_);
    return embed(u) * o.embed(u);
  }
  Operator out(space_, SpMat(c_ * o.c_));
  for (const auto& t : o.terms_) out.add_term(t.env, SpMat(c_ * t.mat));
  for (const auto& t : terms_) {
    out.add_term(t.env, SpMat(t.mat * o.c_));
    for (const auto& u : o.terms_) out.add_term(t.env * u.env, SpMat(t.mat * u.mat));
  }
  return out;
}

Operator Operator::operator*(cplx c) const {
  Operator out = *this;
  out.c_ *= c;
  for (auto& t : out.terms_) t.mat *= c;
  return out;
}

Operator Operator::adjoint() const {
  Operator out(space_, SpMat(c_.adjoint()));
  for (const auto& t : terms_) out.add_term(t.env.conj(), SpMat(t.mat.adjoint()));
  return out;
}

Operator Operator::embed(const LabeledSpace& target) const {
  if (space_ == target) return *this;
  Operator out(target, embed_matrix(c_, space_, target));
  for (const auto& t : terms_) out.add_term(t.env, embed_matrix(t.mat, space_, target));
  return out;
}

Operator Operator::pruned(double eps) const {
  Operator out = *this;
  out.c_.prune(cplx(0.0), eps > 0 ? eps : std::numeric_limits<double>::min());
  std::vector<Term> keep;
  for (auto& t : out.terms_) {
    t.mat.prune(cplx(0.0), eps > 0 ? eps : std::numeric_limits<double>::min());
    if (t.mat.nonZeros() > 0) keep.push_back(t);
  }
  out.terms_ = std::move(keep);
  return out;
}

bool Operator::is_zero(double tol) const {
  if (max_abs(c_) > tol) return false;
  for (const auto& t : terms_)
    if (max_abs(t.mat) > tol) return false;
  return true;
}

bool Operator::scalar_value(cplx& out, double tol) const {
  for (const auto& t : terms_)
    if (max_abs(t.mat) > tol) return false;
  out = c_.coeff(0, 0);
  SpMat d = c_;
  for (long k = 0; k < d.rows(); ++k) d.coeffRef(k, k) -= out;
  return max_abs(d) <= tol;
}

Operator make_elementary(ElemKind kind, const std::string& label, int dim, int i, int j) {
  if (dim < 1 || (kind != ElemKind::identity && dim < 2))
    throw Error(ErrorKind::construction, "invalid dim " + std::to_string(dim) + " for elementary operator on '" + label + "'");
  bool spin_kind = kind == ElemKind::pauli_x || kind == ElemKind::pauli_y || kind == ElemKind::pauli_z ||
                   kind == ElemKind::sigma_minus || kind == ElemKind::sigma_plus;
  if (spin_kind && dim != 2) throw Error(ErrorKind::construction, "Pauli operators need dim 2");
  FactorKind fk = spin_kind ? FactorKind::spin : (kind == ElemKind::annihilation || kind == ElemKind::creation || kind == ElemKind::number) ? FactorKind::oscillator : FactorKind::other;
  LabeledSpace sp({Factor{label, dim, fk}});
  std::vector<Eigen::Triplet<cplx>> t;
  switch (kind) {
    case ElemKind::annihilation:
      for (int n = 1; n < dim; ++n) t.emplace_back(n - 1, n, std::sqrt(double(n)));
      break;
    case ElemKind::creation:
      for (int n = 1; n < dim; ++n) t.emplace_back(n, n - 1, std::sqrt(double(n)));
      break;
    case ElemKind::number:
      for (int n = 1; n < dim; ++n) t.emplace_back(n, n, double(n));
      break;
    case ElemKind::pauli_x:
      t.emplace_back(0, 1, 1.0);
      t.emplace_back(1, 0, 1.0);
      break;
    case ElemKind::pauli_y:
      t.emplace_back(0, 1, cplx(0, -1));
      t.emplace_back(1, 0, cplx(0, 1));
      break;
    case ElemKind::pauli_z:
      t.emplace_back(0, 0, 1.0);
      t.emplace_back(1, 1, -1.0);
      break;
    case ElemKind::sigma_minus:
      t.emplace_back(0, 1, 1.0);
      break;
    case ElemKind::sigma_plus:
      t.emplace_back(1, 0, 1.0);
      break;
    case ElemKind::projector:
      if (i < 0 || j < 0 || i >= dim || j >= dim)
        throw Error(ErrorKind::construction, "projector index out of range");
      t.emplace_back(i, j, 1.0);
      break;
    case ElemKind::identity:
      for (int n = 0; n < dim; ++n) t.emplace_back(n, n, 1.0);
      break;
  }
  SpMat m(dim, dim);
  m.setFromTriplets(t.begin(), t.end());
  return Operator(sp, m);
}

Operator embed(const Operator& op, const LabeledSpace& target) { return op.embed(target); }
Operator adjoint(const Operator& x) { return x.adjoint(); }
Operator commutator(const Operator& x, const Operator& y) { return x * y - y * x; }
Operator anticommutator(const Operator& x, const Operator& y) { return x * y + y * x; }

Operator partial_trace(const Operator& rho, const std::set<std::string>& keep) {
  if (rho.time_dependent()) throw Error(ErrorKind::unsupported, "partial_trace of a time-dependent operator");
  const LabeledSpace& sp = rho.space();
  LabeledSpace red = sp.restrict_to(keep);
  std::vector<bool> kept(sp.factors().size());
  for (std::size_t k = 0; k < kept.size(); ++k) kept[k] = keep.count(sp.factors()[k].label) > 0;
  std::vector<Eigen::Triplet<cplx>> trip;
  const SpMat& m = rho.matrix();
  for (int c = 0; c < m.outerSize(); ++c) {
    for (SpMat::InnerIterator it(m, c); it; ++it) {
      auto ri = multi_index(it.row(), sp);
      auto ci = multi_index(it.col(), sp);
      bool diag = true;
      std::vector<int> rk, ck;
      for (std::size_t k = 0; k < kept.size(); ++k) {
        if (kept[k]) {
          rk.push_back(ri[k]);
          ck.push_back(ci[k]);
        } else if (ri[k] != ci[k]) {
          diag = false;
          break;
        }
      }
      if (diag) trip.emplace_back(flat_index(rk, red), flat_index(ck, red), it.value());
    }
  }
  SpMat out(red.total_dim(), red.total_dim());
  out.setFromTriplets(trip.begin(), trip.end());
  return Operator(red, out);
}

cplx trace(const Operator& x) {
  cplx s = 0.0;
  for (long k = 0; k < x.matrix().rows(); ++k) s += x.matrix().coeff(k, k);
  return s;
}

const std::vector<double>& probe_times() {
  static const std::vector<double> ts{0.0, 0.37, 1.3, 2.9, 6.1};
  return ts;
}

double max_abs(const SpMat& m) {
  double v = 0.0;
  for (int c = 0; c < m.outerSize(); ++c)
    for (SpMat::InnerIterator it(m, c); it; ++it) v = std::max(v, std::abs(it.value()));
  return v;
}

double max_abs_diff(const Operator& x, const Operator& y) {
  if (x.space() != y.space()) {
    LabeledSpace u = LabeledSpace::unite(x.space(), y.space());
    return max_abs_diff(x.embed(u), y.embed(u));
  }
  if (!x.time_dependent() && !y.time_dependent()) return max_abs(SpMat(x.matrix() - y.matrix()));
  double v = 0.0;
  for (double t : probe_times()) v = std::max(v, max_abs(SpMat(x.at(t) - y.at(t))));
  return v;
}

bool approx_equal(const Operator& x, const Operator& y, double tol) { return max_abs_diff(x, y) <= tol; }

double hermiticity_residual(const Operator& x) { return max_abs_diff(x, x.adjoint()); }

DVec basis_ket(const LabeledSpace& space, const std::vector<std::pair<std::string, int>>& levels) {
  std::vector<int> idx(space.factors().size(), 0);
  for (const auto& [l, n] : levels) {
    int k = space.index_of(l);
    if (k < 0) throw Error(ErrorKind::embedding, "unknown factor label '" + l + "'");
    if (n < 0 || n >= space.factors()[k].dim) throw Error(ErrorKind::construction, "level out of range for '" + l + "'");
    idx[k] = n;
  }
  DVec v = DVec::Zero(space.total_dim());
  v(flat_index(idx, space)) = 1.0;
  return v;
}

std::string fmt12(double x) {
  if (x == 0.0) x = 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12e", x);
  return buf;
}

double round12(double x) {
  double r = std::strtod(fmt12(x).c_str(), nullptr);
  return r == 0.0 ? 0.0 : r;
}

namespace {

json entries_json(const SpMat& m) {
  std::vector<std::tuple<long, long, cplx>> es;
  for (int c = 0; c < m.outerSize(); ++c)
    for (SpMat::InnerIterator it(m, c); it; ++it) es.emplace_back(it.row(), it.col(), it.value());
  std::sort(es.begin(), es.end(), [](const auto& a, const auto& b) {
    return std::make_pair(std::get<0>(a), std::get<1>(a)) < std::make_pair(std::get<0>(b), std::get<1>(b));
  });
  json arr = json::array();
  for (const auto& [r, c, v] : es) {
    double re = round12(std::abs(v.real()) < 1e-14 ? 0.0 : v.real());
    double im = round12(std::abs(v.imag()) < 1e-14 ? 0.0 : v.imag());
    if (re == 0.0 && im == 0.0) continue;
    arr.push_back(json::array({r, c, re, im}));
  }
  return arr;
}

SpMat entries_from_json(const json& arr, long dim) {
  std::vector<Eigen::Triplet<cplx>> t;
  for (const auto& e : arr) {
    long r = e.at(0).get<long>(), c = e.at(1).get<long>();
    if (r < 0 || c < 0 || r >= dim || c >= dim) throw Error(ErrorKind::construction, "entry index out of range");
    t.emplace_back(r, c, cplx(e.at(2).get<double>(), e.at(3).get<double>()));
  }
  SpMat m(dim, dim);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

const char* kind_name(FactorKind k) {
  switch (k) {
    case FactorKind::oscillator: return "oscillator";
    case FactorKind::spin: return "spin";
    default: return "other";
  }
}

}  // namespace

json space_to_json(const LabeledSpace& s) {
  json j;
  j["labels"] = json::array();
  j["dims"] = json::array();
  j["kinds"] = json::array();
  for (const auto& f : s.factors()) {
    j["labels"].push_back(f.label);
    j["dims"].push_back(f.dim);
    j["kinds"].push_back(kind_name(f.kind));
  }
  return j;
}

LabeledSpace space_from_json(const json& j) {
  std::vector<Factor> fs;
  const auto& ls = j.at("labels");
  const auto& ds = j.at("dims");
  if (ls.size() != ds.size()) throw Error(ErrorKind::construction, "labels/dims length mismatch");
  for (std::size_t k = 0; k < ls.size(); ++k) {
    Factor f{ls[k].get<std::string>(), ds[k].get<int>(), FactorKind::other};
    if (j.contains("kinds")) {
      std::string kn = j["kinds"].at(k).get<std::string>();
      f.kind = kn == "oscillator" ? FactorKind::oscillator : kn == "spin" ? FactorKind::spin : FactorKind::other;
    }
    fs.push_back(f);
  }
  return LabeledSpace(fs);
}

json operator_to_json(const Operator& x) {
  json j = space_to_json(x.space());
  j["entries"] = entries_json(x.matrix());
  if (x.time_dependent()) {
    j["terms"] = json::array();
    for (const auto& t : x.terms()) j["terms"].push_back({{"envelope", t.env.describe()}, {"entries", entries_json(t.mat)}});
  }
  return j;
}

Operator operator_from_json(const json& j) {
  if (j.contains("terms")) throw Error(ErrorKind::unsupported, "time-dependent operators cannot be deserialized");
  LabeledSpace s = space_from_json(j);
  return Operator(s, entries_from_json(j.at("entries"), s.total_dim()));
}

}  // namespace qnet
