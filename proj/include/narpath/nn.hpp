// Dense 64-bit tensors, a reverse-mode operation tape, an adaptive-moment
// optimizer and a finite-difference gradient checker. Small by intent: only
// the kernels the networks in this repo need.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "narpath/rng.hpp"

namespace narpath::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;  // row-major

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  static Tensor scalar(double x);
  static Tensor of(std::vector<int> s, std::vector<double> values);

  int size() const;
  int rows() const;  // 2-D only
  int cols() const;
  double& at(int r, int c);
  double at(int r, int c) const;
  bool finite() const;
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
Tensor fan_in_init(std::vector<int> shape, int fan_in, Rng& rng);

// Reverse-mode tape. Ops append nodes; backward() walks the closures in
// reverse creation order. Construct with grads disabled for plain inference
// (same arithmetic, no bookkeeping).
class Tape {
 public:
  using Id = int;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Id leaf(Tensor t, bool requires_grad = false);

  Id matmul(Id a, Id b, bool trans_a = false, bool trans_b = false);
  // x: {C,H,W}, w: {O,C,kh,kw}, bias: {O}; valid positions only (no padding)
  Id conv2d(Id x, Id w, Id bias, int stride);
  Id relu(Id x);
  Id tanh_all(Id x);
  Id softmax_rows(Id x);
  // mean over rows of (logsumexp(row) - row[label]); labels in [0, cols)
  Id cross_entropy_mean(Id logits, std::vector<int> labels);
  Id add(Id a, Id b);              // same shape
  Id add_rowvec(Id a, Id bias);    // a: {R,C}, bias: {C}
  Id scale(Id a, double c);
  Id scale_by(Id s, Id a);         // s: {1} (learned scalar gate)
  Id embedding_rows(Id table, std::vector<int> idx);
  Id stack_rows(const std::vector<Id>& row_ids);  // each {D} or {1,D}
  Id reshape(Id a, std::vector<int> shape);

  const Tensor& value(Id id) const { return nodes_[id].val; }
  const Tensor& grad(Id id) const;
  bool requires_grad(Id id) const { return nodes_[id].req; }
  void backward(Id loss);
  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily during backward
    bool req = false;
    std::function<void()> back;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;

  Id push(Tensor val, bool req);
  void set_back(Id id, std::function<void()> fn);
  Tensor& grad_ref(Id id);
  bool track(Id a) const { return grad_enabled_ && nodes_[a].req; }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamStore {
  struct Entry {
    Tensor value;
    Tensor m;
    Tensor v;
  };

  std::map<std::string, Entry> entries;
  long long step = 0;

  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);
};

// bias-corrected adaptive moment update; throws std::runtime_error on
// non-finite gradients without touching the store
void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads,
               const AdamConfig& cfg);

// every entry becomes a tape leaf; returns name -> id
std::map<std::string, Tape::Id> register_params(Tape& tape, const ParamStore& store,
                                                bool requires_grad = true);

using LossBuilder = std::function<Tape::Id(Tape&, const std::map<std::string, Tape::Id>&)>;

// central finite differences against the tape gradient; returns the worst
// relative error over the checked coordinates. max_coords_per_param == 0
// checks every coordinate.
double grad_check(const ParamStore& store, const LossBuilder& build, double eps,
                  int max_coords_per_param = 0, std::uint64_t sample_seed = 0);

}  // namespace narpath::nn
