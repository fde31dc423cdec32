#pragma once

// Dense 2-d tensors with reverse-mode differentiation, a parameter store,
// SGD, finite-difference gradient checking, and the checkpoint format.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovsg::nn {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), v(r * c, fill) {}

  static Tensor row_vec(std::vector<double> d) {
    Tensor t;
    t.rows = 1;
    t.cols = d.size();
    t.v = std::move(d);
    return t;
  }

  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

// Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
Tensor init_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in,
                    std::uint64_t seed);

struct Param {
  Tensor value;
  bool trainable = true;
};

// Named parameters with deterministic (insertion) iteration order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t, bool trainable = true);
  bool has(const std::string& name) const;
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }

 private:
  std::map<std::string, Param> params_;
  std::vector<std::string> order_;
};

// Checkpoint: directory with manifest.json plus a raw little-endian f64 blob.
// extra_meta is stored verbatim under "meta" and returned by load.
void save_checkpoint(const ParamStore& store, const std::string& dir,
                     const std::string& extra_meta_json);
std::string load_checkpoint(ParamStore& store, const std::string& dir);

namespace detail {
struct Node {
  Tensor val;
  Tensor grad;
  bool needs_grad = false;
  std::string param;  // nonempty for parameter leaves
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> back;
};
}  // namespace detail

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
  const Tensor& val() const { return n_->val; }
  const Tensor& grad() const { return n_->grad; }
  std::size_t rows() const { return n_->val.rows; }
  std::size_t cols() const { return n_->val.cols; }
  double scalar() const;
  bool empty() const { return !n_; }
  std::shared_ptr<detail::Node> node() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

Var constant(Tensor t);
Var constant_scalar(double x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var vdiv(const Var& a, const Var& b);
Var vmin(const Var& a, const Var& b);
Var vmax(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_rowwise(const Var& a, const Var& bias_row);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t c0, std::size_t c1);
Var row(const Var& a, std::size_t r);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var vlog(const Var& a);
Var vpow(const Var& a, double p);  // entries must be positive
Var vabs(const Var& a);
Var softmax_rows(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);
// sum(|a - b|), a scalar
Var l1_distance(const Var& a, const Var& b);

// Seeds root (must be 1x1) and accumulates gradients into every node that
// needs them. Gradients of parameter leaves are read back via Session.
void backward(const Var& root);

// Binds parameter leaves to a ParamStore; repeated lookups of the same name
// within one session share a leaf so gradients accumulate correctly.
class Session {
 public:
  explicit Session(ParamStore& store) : store_(&store) {}
  Var p(const std::string& name);
  ParamStore& store() { return *store_; }
  // Runs backward from root and returns gradients for trainable leaves.
  std::map<std::string, Tensor> gradients(const Var& root);

 private:
  ParamStore* store_;
  std::map<std::string, Var> leaves_;
};

// Central finite differences over every trainable parameter entry.
// builder must rebuild the (scalar) expression from the current store state.
struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
};
FiniteDiffReport finite_diff_check(
    const std::function<Var(Session&)>& builder, ParamStore& store,
    double epsilon);

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.0;
  double grad_clip = 0.0;  // 0 disables
};

class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& store, const std::map<std::string, Tensor>& grads);
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  SgdConfig cfg_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace ovsg::nn
