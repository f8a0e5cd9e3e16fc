#include "narpath/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace narpath::nn {

namespace {

[[noreturn]] void contract_fail(const std::string& what) { throw std::invalid_argument("nn: " + what); }

int product(const std::vector<int>& s) {
  int p = 1;
  for (int d : s) {
    if (d <= 0) contract_fail("non-positive dimension");
    p *= d;
  }
  return p;
}

// out = op(a) x op(b) with optional transposes
Tensor raw_matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.shape.size() != 2 || b.shape.size() != 2) contract_fail("matmul expects 2-D operands");
  const int am = ta ? a.cols() : a.rows();
  const int ak = ta ? a.rows() : a.cols();
  const int bk = tb ? b.cols() : b.rows();
  const int bn = tb ? b.rows() : b.cols();
  if (ak != bk) contract_fail("matmul inner dimension mismatch");
  Tensor out({am, bn});
  for (int i = 0; i < am; ++i) {
    for (int k = 0; k < ak; ++k) {
      const double av = ta ? a.at(k, i) : a.at(i, k);
      if (av == 0.0) continue;
      for (int j = 0; j < bn; ++j) {
        const double bv = tb ? b.at(j, k) : b.at(k, j);
        out.at(i, j) += av * bv;
      }
    }
  }
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (int i = 0; i < dst.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
  v.assign(product(shape), fill);
}

Tensor Tensor::scalar(double x) { return of({1}, {x}); }

Tensor Tensor::of(std::vector<int> s, std::vector<double> values) {
  Tensor t;
  t.shape = std::move(s);
  if (product(t.shape) != static_cast<int>(values.size())) contract_fail("value count does not match shape");
  t.v = std::move(values);
  return t;
}

int Tensor::size() const { return static_cast<int>(v.size()); }

int Tensor::rows() const {
  if (shape.size() != 2) contract_fail("rows() on non-2-D tensor");
  return shape[0];
}

int Tensor::cols() const {
  if (shape.size() != 2) contract_fail("cols() on non-2-D tensor");
  return shape[1];
}

double& Tensor::at(int r, int c) { return v[static_cast<size_t>(r) * cols() + c]; }
double Tensor::at(int r, int c) const { return v[static_cast<size_t>(r) * cols() + c]; }

bool Tensor::finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Tensor fan_in_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : t.v) x = rng.range(-bound, bound);
  return t;
}

Tape::Id Tape::push(Tensor val, bool req) {
  nodes_.push_back(Node{std::move(val), Tensor{}, grad_enabled_ && req, nullptr});
  return static_cast<Id>(nodes_.size()) - 1;
}

void Tape::set_back(Id id, std::function<void()> fn) {
  if (nodes_[id].req) nodes_[id].back = std::move(fn);
}

Tensor& Tape::grad_ref(Id id) {
  Node& n = nodes_[id];
  if (n.grad.v.empty()) n.grad = Tensor(n.val.shape);
  return n.grad;
}

const Tensor& Tape::grad(Id id) const {
  if (nodes_[id].grad.v.empty()) contract_fail("gradient not computed for node");
  return nodes_[id].grad;
}

void Tape::backward(Id loss) {
  if (value(loss).size() != 1) contract_fail("backward expects a scalar loss");
  // tracked nodes that the loss never touches keep an explicit zero gradient
  for (Node& n : nodes_)
    if (n.req && n.grad.v.empty()) n.grad = Tensor(n.val.shape);
  grad_ref(loss).v[0] = 1.0;
  for (Id id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.back && !n.grad.v.empty()) n.back();
  }
}

Tape::Id Tape::leaf(Tensor t, bool requires_grad) { return push(std::move(t), requires_grad); }

Tape::Id Tape::matmul(Id a, Id b, bool ta, bool tb) {
  Id id = push(raw_matmul(value(a), value(b), ta, tb), track(a) || track(b));
  set_back(id, [this, a, b, ta, tb, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (nodes_[a].req) {
      Tensor da = ta ? (tb ? raw_matmul(bv, g, true, true) : raw_matmul(bv, g, false, true))
                     : (tb ? raw_matmul(g, bv, false, false) : raw_matmul(g, bv, false, true));
      accumulate(grad_ref(a), da);
    }
    if (nodes_[b].req) {
      Tensor db = tb ? (ta ? raw_matmul(g, av, true, true) : raw_matmul(g, av, true, false))
                     : (ta ? raw_matmul(av, g, false, false) : raw_matmul(av, g, true, false));
      accumulate(grad_ref(b), db);
    }
  });
  return id;
}

Tape::Id Tape::conv2d(Id x, Id w, Id bias, int stride) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(bias);
  if (xv.shape.size() != 3 || wv.shape.size() != 4) contract_fail("conv2d expects {C,H,W} and {O,C,kh,kw}");
  const int ci = xv.shape[0], hi = xv.shape[1], wi = xv.shape[2];
  const int co = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
  if (wv.shape[1] != ci) contract_fail("conv2d channel mismatch");
  if (bv.shape != std::vector<int>{co}) contract_fail("conv2d bias shape mismatch");
  if (hi < kh || wi < kw) contract_fail("conv2d input smaller than kernel");
  const int ho = (hi - kh) / stride + 1;
  const int wo = (wi - kw) / stride + 1;

  auto xi = [hi, wi](const std::vector<double>& v, int c, int i, int j) -> double {
    return v[(static_cast<size_t>(c) * hi + i) * wi + j];
  };
  auto widx = [ci, kh, kw](int o, int c, int i, int j) -> size_t {
    return ((static_cast<size_t>(o) * ci + c) * kh + i) * kw + j;
  };

  Tensor out({co, ho, wo});
  for (int o = 0; o < co; ++o)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double acc = bv.v[o];
        for (int c = 0; c < ci; ++c)
          for (int di = 0; di < kh; ++di)
            for (int dj = 0; dj < kw; ++dj)
              acc += wv.v[widx(o, c, di, dj)] * xi(xv.v, c, i * stride + di, j * stride + dj);
        out.v[(static_cast<size_t>(o) * ho + i) * wo + j] = acc;
      }

  Id id = push(std::move(out), track(x) || track(w) || track(bias));
  set_back(id, [this, x, w, bias, stride, id, ci, hi, wi, co, kh, kw, ho, wo, widx] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& xv2 = value(x);
    const Tensor& wv2 = value(w);
    auto gat = [&](int o, int i, int j) -> double {
      return g.v[(static_cast<size_t>(o) * ho + i) * wo + j];
    };
    if (nodes_[bias].req) {
      Tensor& db = grad_ref(bias);
      for (int o = 0; o < co; ++o)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) db.v[o] += gat(o, i, j);
    }
    if (nodes_[w].req) {
      Tensor& dw = grad_ref(w);
      for (int o = 0; o < co; ++o)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            const double go = gat(o, i, j);
            if (go == 0.0) continue;
            for (int c = 0; c < ci; ++c)
              for (int di = 0; di < kh; ++di)
                for (int dj = 0; dj < kw; ++dj)
                  dw.v[widx(o, c, di, dj)] +=
                      go * xv2.v[(static_cast<size_t>(c) * hi + (i * stride + di)) * wi + (j * stride + dj)];
          }
    }
    if (nodes_[x].req) {
      Tensor& dx = grad_ref(x);
      for (int o = 0; o < co; ++o)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            const double go = gat(o, i, j);
            if (go == 0.0) continue;
            for (int c = 0; c < ci; ++c)
              for (int di = 0; di < kh; ++di)
                for (int dj = 0; dj < kw; ++dj)
                  dx.v[(static_cast<size_t>(c) * hi + (i * stride + di)) * wi + (j * stride + dj)] +=
                      go * wv2.v[widx(o, c, di, dj)];
          }
    }
  });
  return id;
}

Tape::Id Tape::relu(Id x) {
  Tensor out = value(x);
  for (double& e : out.v) e = e > 0.0 ? e : 0.0;
  Id id = push(std::move(out), track(x));
  set_back(id, [this, x, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& xv = value(x);
    Tensor& dx = grad_ref(x);
    for (int i = 0; i < g.size(); ++i)
      if (xv.v[i] > 0.0) dx.v[i] += g.v[i];
  });
  return id;
}

Tape::Id Tape::tanh_all(Id x) {
  Tensor out = value(x);
  for (double& e : out.v) e = std::tanh(e);
  Id id = push(std::move(out), track(x));
  set_back(id, [this, x, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& y = nodes_[id].val;
    Tensor& dx = grad_ref(x);
    for (int i = 0; i < g.size(); ++i) dx.v[i] += g.v[i] * (1.0 - y.v[i] * y.v[i]);
  });
  return id;
}

Tape::Id Tape::softmax_rows(Id x) {
  const Tensor& xv = value(x);
  const int r = xv.rows(), c = xv.cols();
  Tensor out({r, c});
  for (int i = 0; i < r; ++i) {
    double m = xv.at(i, 0);
    for (int j = 1; j < c; ++j) m = std::max(m, xv.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      const double e = std::exp(xv.at(i, j) - m);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < c; ++j) out.at(i, j) /= sum;
  }
  Id id = push(std::move(out), track(x));
  set_back(id, [this, x, id, r, c] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& y = nodes_[id].val;
    Tensor& dx = grad_ref(x);
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
      for (int j = 0; j < c; ++j) dx.at(i, j) += (g.at(i, j) - dot) * y.at(i, j);
    }
  });
  return id;
}

Tape::Id Tape::cross_entropy_mean(Id logits, std::vector<int> labels) {
  const Tensor& lv = value(logits);
  const int r = lv.rows(), c = lv.cols();
  if (static_cast<int>(labels.size()) != r) contract_fail("cross_entropy label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= c) contract_fail("cross_entropy label out of range");
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    double m = lv.at(i, 0);
    for (int j = 1; j < c; ++j) m = std::max(m, lv.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(lv.at(i, j) - m);
    total += m + std::log(sum) - lv.at(i, labels[i]);
  }
  Tensor out = Tensor::scalar(total / r);
  Id id = push(std::move(out), track(logits));
  set_back(id, [this, logits, labels = std::move(labels), id, r, c] {
    const double go = nodes_[id].grad.v[0];
    const Tensor& lv2 = value(logits);
    Tensor& dx = grad_ref(logits);
    for (int i = 0; i < r; ++i) {
      double m = lv2.at(i, 0);
      for (int j = 1; j < c; ++j) m = std::max(m, lv2.at(i, j));
      double sum = 0.0;
      for (int j = 0; j < c; ++j) sum += std::exp(lv2.at(i, j) - m);
      for (int j = 0; j < c; ++j) {
        const double p = std::exp(lv2.at(i, j) - m) / sum;
        dx.at(i, j) += go * (p - (labels[i] == j ? 1.0 : 0.0)) / r;
      }
    }
  });
  return id;
}

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.shape != bv.shape) contract_fail("add shape mismatch");
  Tensor out = av;
  for (int i = 0; i < out.size(); ++i) out.v[i] += bv.v[i];
  Id id = push(std::move(out), track(a) || track(b));
  set_back(id, [this, a, b, id] {
    const Tensor& g = nodes_[id].grad;
    if (nodes_[a].req) accumulate(grad_ref(a), g);
    if (nodes_[b].req) accumulate(grad_ref(b), g);
  });
  return id;
}

Tape::Id Tape::add_rowvec(Id a, Id bias) {
  const Tensor& av = value(a);
  const Tensor& bv = value(bias);
  const int r = av.rows(), c = av.cols();
  if (bv.shape != std::vector<int>{c}) contract_fail("add_rowvec bias shape mismatch");
  Tensor out = av;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) += bv.v[j];
  Id id = push(std::move(out), track(a) || track(bias));
  set_back(id, [this, a, bias, id, r, c] {
    const Tensor& g = nodes_[id].grad;
    if (nodes_[a].req) accumulate(grad_ref(a), g);
    if (nodes_[bias].req) {
      Tensor& db = grad_ref(bias);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) db.v[j] += g.at(i, j);
    }
  });
  return id;
}

Tape::Id Tape::scale(Id a, double cst) {
  Tensor out = value(a);
  for (double& e : out.v) e *= cst;
  Id id = push(std::move(out), track(a));
  set_back(id, [this, a, cst, id] {
    const Tensor& g = nodes_[id].grad;
    Tensor& da = grad_ref(a);
    for (int i = 0; i < g.size(); ++i) da.v[i] += cst * g.v[i];
  });
  return id;
}

Tape::Id Tape::scale_by(Id s, Id a) {
  const Tensor& sv = value(s);
  if (sv.size() != 1) contract_fail("scale_by expects a scalar");
  const double sc = sv.v[0];
  Tensor out = value(a);
  for (double& e : out.v) e *= sc;
  Id id = push(std::move(out), track(s) || track(a));
  set_back(id, [this, s, a, id, sc] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& av = value(a);
    if (nodes_[s].req) {
      double acc = 0.0;
      for (int i = 0; i < g.size(); ++i) acc += g.v[i] * av.v[i];
      grad_ref(s).v[0] += acc;
    }
    if (nodes_[a].req) {
      Tensor& da = grad_ref(a);
      for (int i = 0; i < g.size(); ++i) da.v[i] += sc * g.v[i];
    }
  });
  return id;
}

Tape::Id Tape::embedding_rows(Id table, std::vector<int> idx) {
  const Tensor& tv = value(table);
  const int rows = tv.rows(), d = tv.cols();
  for (int i : idx)
    if (i < 0 || i >= rows) contract_fail("embedding index out of range");
  Tensor out({static_cast<int>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = tv.at(idx[r], j);
  Id id = push(std::move(out), track(table));
  set_back(id, [this, table, idx = std::move(idx), id, d] {
    const Tensor& g = nodes_[id].grad;
    Tensor& dt = grad_ref(table);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < d; ++j) dt.at(idx[r], j) += g.at(static_cast<int>(r), j);
  });
  return id;
}

Tape::Id Tape::stack_rows(const std::vector<Id>& row_ids) {
  if (row_ids.empty()) contract_fail("stack_rows on empty list");
  int d = -1;
  bool req = false;
  for (Id r : row_ids) {
    const Tensor& t = value(r);
    const int n = t.size();
    if (t.shape.size() > 2 || (t.shape.size() == 2 && t.shape[0] != 1))
      contract_fail("stack_rows expects row vectors");
    if (d < 0) d = n;
    if (n != d) contract_fail("stack_rows width mismatch");
    req = req || track(r);
  }
  Tensor out({static_cast<int>(row_ids.size()), d});
  for (size_t r = 0; r < row_ids.size(); ++r) {
    const Tensor& t = value(row_ids[r]);
    std::copy(t.v.begin(), t.v.end(), out.v.begin() + static_cast<long>(r) * d);
  }
  Id id = push(std::move(out), req);
  set_back(id, [this, rows = row_ids, id, d] {
    const Tensor& g = nodes_[id].grad;
    for (size_t r = 0; r < rows.size(); ++r) {
      if (!nodes_[rows[r]].req) continue;
      Tensor& dr = grad_ref(rows[r]);
      for (int j = 0; j < d; ++j) dr.v[j] += g.v[static_cast<long>(r) * d + j];
    }
  });
  return id;
}

Tape::Id Tape::reshape(Id a, std::vector<int> shape) {
  const Tensor& av = value(a);
  if (product(shape) != av.size()) contract_fail("reshape size mismatch");
  Tensor out;
  out.shape = std::move(shape);
  out.v = av.v;
  Id id = push(std::move(out), track(a));
  set_back(id, [this, a, id] {
    const Tensor& g = nodes_[id].grad;
    Tensor& da = grad_ref(a);
    for (int i = 0; i < g.size(); ++i) da.v[i] += g.v[i];
  });
  return id;
}

void ParamStore::add(const std::string& name, Tensor t) {
  if (entries.count(name)) contract_fail("duplicate parameter " + name);
  Entry e;
  e.m = Tensor(t.shape);
  e.v = Tensor(t.shape);
  e.value = std::move(t);
  entries.emplace(name, std::move(e));
}

bool ParamStore::has(const std::string& name) const { return entries.count(name) != 0; }

Tensor& ParamStore::value(const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end()) contract_fail("unknown parameter " + name);
  return it->second.value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) contract_fail("unknown parameter " + name);
  return it->second.value;
}

void ParamStore::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << "narpath-checkpoint 1\n" << entries.size() << "\n";
  char buf[64];
  for (const auto& [name, e] : entries) {
    out << name << " " << e.value.shape.size();
    for (int d : e.value.shape) out << " " << d;
    out << "\n";
    for (int i = 0; i < e.value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", e.value.v[i]);
      out << (i ? " " : "") << buf;
    }
    out << "\n";
  }
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "narpath-checkpoint" || version != 1)
    throw std::runtime_error("unsupported checkpoint format in " + path);
  size_t count = 0;
  in >> count;
  ParamStore store;
  for (size_t p = 0; p < count; ++p) {
    std::string name;
    int ndim = 0;
    if (!(in >> name >> ndim)) throw std::runtime_error("truncated checkpoint: " + path);
    std::vector<int> shape(ndim);
    for (int& d : shape) in >> d;
    Tensor t(shape);
    for (double& x : t.v)
      if (!(in >> x)) throw std::runtime_error("truncated checkpoint values: " + path);
    store.add(name, std::move(t));
  }
  return store;
}

void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    const Tensor& p = store.value(name);
    if (g.shape != p.shape) contract_fail("gradient shape mismatch for " + name);
    if (!g.finite()) throw std::runtime_error("non-finite gradient for " + name + "; step rejected");
  }
  store.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
  for (const auto& [name, g] : grads) {
    auto& e = store.entries.at(name);
    for (int i = 0; i < g.size(); ++i) {
      e.m.v[i] = cfg.beta1 * e.m.v[i] + (1.0 - cfg.beta1) * g.v[i];
      e.v.v[i] = cfg.beta2 * e.v.v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
      const double mh = e.m.v[i] / bc1;
      const double vh = e.v.v[i] / bc2;
      e.value.v[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

std::map<std::string, Tape::Id> register_params(Tape& tape, const ParamStore& store, bool requires_grad) {
  std::map<std::string, Tape::Id> ids;
  for (const auto& [name, e] : store.entries) ids.emplace(name, tape.leaf(e.value, requires_grad));
  return ids;
}

double grad_check(const ParamStore& store, const LossBuilder& build, double eps,
                  int max_coords_per_param, std::uint64_t sample_seed) {
  if (eps < 1e-6 || eps > 1e-3) contract_fail("grad_check eps out of [1e-6, 1e-3]");

  Tape tape(true);
  auto ids = register_params(tape, store);
  Tape::Id loss = build(tape, ids);
  if (!tape.value(loss).finite()) throw std::runtime_error("grad_check: non-finite loss");
  tape.backward(loss);

  ParamStore probe;
  for (const auto& [name, e] : store.entries) probe.add(name, e.value);

  auto eval = [&](const ParamStore& at) {
    Tape t(false);
    auto pid = register_params(t, at, false);
    return t.value(build(t, pid)).v[0];
  };

  double worst = 0.0;
  for (const auto& [name, e] : store.entries) {
    const Tensor& analytic = tape.grad(ids.at(name));
    std::vector<int> coords;
    const int n = e.value.size();
    if (max_coords_per_param <= 0 || n <= max_coords_per_param) {
      coords.resize(n);
      for (int i = 0; i < n; ++i) coords[i] = i;
    } else {
      Rng rng(mix_seed(sample_seed, std::hash<std::string>{}(name)));
      std::set<int> picked;
      while (static_cast<int>(picked.size()) < max_coords_per_param) picked.insert(rng.index(n));
      coords.assign(picked.begin(), picked.end());
    }
    Tensor& pv = probe.value(name);
    for (int i : coords) {
      const double saved = pv.v[i];
      pv.v[i] = saved + eps;
      const double fp = eval(probe);
      pv.v[i] = saved - eps;
      const double fm = eval(probe);
      pv.v[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw std::runtime_error("grad_check: non-finite probe");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double ga = analytic.v[i];
      // the 1e-6 floor keeps coordinates below the central-difference noise
      // scale (~|f| * machine_eps / eps) on an absolute comparison
      const double rel = std::abs(ga - numeric) / std::max({std::abs(ga), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace narpath::nn
