#include "ovsg/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <unordered_set>

#include <json.hpp>

namespace ovsg::nn {

using detail::Node;
using json = nlohmann::json;

Tensor init_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in,
                    std::uint64_t seed) {
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(rows, cols);
  for (auto& x : t.v) x = dist(rng);
  return t;
}

Tensor& ParamStore::add(const std::string& name, Tensor t, bool trainable) {
  auto [it, inserted] = params_.emplace(name, Param{std::move(t), trainable});
  if (!inserted) throw std::invalid_argument("duplicate parameter: " + name);
  order_.push_back(name);
  return it->second.value;
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) != 0;
}

Param& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

void save_checkpoint(const ParamStore& store, const std::string& dir,
                     const std::string& extra_meta_json) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["tensors"] = json::array();
  std::size_t offset = 0;
  std::ofstream blob(dir + "/params.f64", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write checkpoint blob in " + dir);
  for (const auto& name : store.names()) {
    const Param& p = store.get(name);
    manifest["tensors"].push_back({{"name", name},
                                   {"shape", {p.value.rows, p.value.cols}},
                                   {"byte_offset", offset},
                                   {"trainable", p.trainable}});
    blob.write(reinterpret_cast<const char*>(p.value.v.data()),
               static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
    offset += p.value.v.size() * sizeof(double);
  }
  blob.close();
  if (!extra_meta_json.empty()) manifest["meta"] = json::parse(extra_meta_json);
  std::ofstream mf(dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
}

std::string load_checkpoint(ParamStore& store, const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("missing checkpoint manifest: " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt checkpoint manifest in " + dir + ": " + e.what());
  }
  std::ifstream blob(dir + "/params.f64", std::ios::binary | std::ios::ate);
  if (!blob) throw std::runtime_error("missing checkpoint blob: " + dir);
  const std::size_t blob_bytes = static_cast<std::size_t>(blob.tellg());
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name");
    const std::size_t r = entry.at("shape")[0], c = entry.at("shape")[1];
    const std::size_t off = entry.at("byte_offset");
    const std::size_t bytes = r * c * sizeof(double);
    if (off + bytes > blob_bytes)
      throw std::runtime_error("checkpoint blob too short for tensor " + name);
    Tensor t(r, c);
    blob.seekg(static_cast<std::streamoff>(off));
    blob.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(bytes));
    if (store.has(name)) {
      Param& p = store.get(name);
      if (!p.value.same_shape(t))
        throw std::runtime_error("checkpoint shape mismatch for tensor " + name);
      p.value = std::move(t);
      p.trainable = entry.at("trainable");
    } else {
      store.add(name, std::move(t), entry.at("trainable"));
    }
  }
  return manifest.contains("meta") ? manifest["meta"].dump() : std::string("{}");
}

namespace {

void check_finite(const Tensor& t, const char* op) {
  for (double x : t.v)
    if (!std::isfinite(x))
      throw std::runtime_error(std::string("non-finite value produced by op '") +
                               op + "'");
}

std::shared_ptr<Node> make_node(Tensor val, std::vector<Var> parents,
                                std::function<void(Node&)> back, const char* op) {
  check_finite(val, op);
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    n->needs_grad = n->needs_grad || p.node()->needs_grad;
  }
  if (n->needs_grad) n->back = std::move(back);
  return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.val().same_shape(b.val()))
    throw std::invalid_argument(std::string("shape mismatch in op '") + op + "'");
}

void accum(Node& parent, const Tensor& delta) {
  if (parent.grad.v.empty()) parent.grad = Tensor(parent.val.rows, parent.val.cols);
  for (std::size_t i = 0; i < delta.v.size(); ++i) parent.grad.v[i] += delta.v[i];
}

}  // namespace

double Var::scalar() const {
  if (rows() != 1 || cols() != 1)
    throw std::invalid_argument("scalar() on non 1x1 tensor");
  return n_->val.v[0];
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  check_finite(t, "constant");
  n->val = std::move(t);
  return Var(n);
}

Var constant_scalar(double x) { return constant(Tensor(1, 1, x)); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.val().v[i];
  return Var(make_node(std::move(out), {a, b},
                       [](Node& n) {
                         accum(*n.parents[0], n.grad);
                         accum(*n.parents[1], n.grad);
                       },
                       "add"));
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.val().v[i];
  return Var(make_node(std::move(out), {a, b},
                       [](Node& n) {
                         accum(*n.parents[0], n.grad);
                         Tensor neg = n.grad;
                         for (auto& x : neg.v) x = -x;
                         accum(*n.parents[1], neg);
                       },
                       "sub"));
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.val().v[i];
  return Var(make_node(std::move(out), {a, b},
                       [](Node& n) {
                         Tensor da = n.grad, db = n.grad;
                         for (std::size_t i = 0; i < n.grad.v.size(); ++i) {
                           da.v[i] *= n.parents[1]->val.v[i];
                           db.v[i] *= n.parents[0]->val.v[i];
                         }
                         accum(*n.parents[0], da);
                         accum(*n.parents[1], db);
                       },
                       "mul"));
}

Var vdiv(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] /= b.val().v[i];
  return Var(make_node(std::move(out), {a, b},
                       [](Node& n) {
                         Tensor da = n.grad, db = n.grad;
                         for (std::size_t i = 0; i < n.grad.v.size(); ++i) {
                           double bv = n.parents[1]->val.v[i];
                           da.v[i] /= bv;
                           db.v[i] *= -n.parents[0]->val.v[i] / (bv * bv);
                         }
                         accum(*n.parents[0], da);
                         accum(*n.parents[1], db);
                       },
                       "div"));
}

namespace {
Var min_or_max(const Var& a, const Var& b, bool take_min, const char* op) {
  require_same_shape(a, b, op);
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = take_min ? std::min(out.v[i], b.val().v[i])
                        : std::max(out.v[i], b.val().v[i]);
  return Var(make_node(std::move(out), {a, b},
                       [take_min](Node& n) {
                         Tensor da(n.val.rows, n.val.cols), db(n.val.rows, n.val.cols);
                         for (std::size_t i = 0; i < n.grad.v.size(); ++i) {
                           const double av = n.parents[0]->val.v[i];
                           const double bv = n.parents[1]->val.v[i];
                           // ties route to the first argument
                           bool pick_a = take_min ? (av <= bv) : (av >= bv);
                           (pick_a ? da.v[i] : db.v[i]) = n.grad.v[i];
                         }
                         accum(*n.parents[0], da);
                         accum(*n.parents[1], db);
                       },
                       op));
}
}  // namespace

Var vmin(const Var& a, const Var& b) { return min_or_max(a, b, true, "min"); }
Var vmax(const Var& a, const Var& b) { return min_or_max(a, b, false, "max"); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("shape mismatch in op 'matmul'");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a.val().at(i, kk);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.val().at(kk, j);
    }
  return Var(make_node(std::move(out), {a, b},
                       [m, k, n](Node& nd) {
                         const Tensor& A = nd.parents[0]->val;
                         const Tensor& B = nd.parents[1]->val;
                         Tensor da(m, k), db(k, n);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) {
                             const double g = nd.grad.at(i, j);
                             if (g == 0.0) continue;
                             for (std::size_t kk = 0; kk < k; ++kk) {
                               da.at(i, kk) += g * B.at(kk, j);
                               db.at(kk, j) += g * A.at(i, kk);
                             }
                           }
                         accum(*nd.parents[0], da);
                         accum(*nd.parents[1], db);
                       },
                       "matmul"));
}

Var transpose(const Var& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.val().at(i, j);
  return Var(make_node(std::move(out), {a},
                       [](Node& n) {
                         Tensor da(n.val.cols, n.val.rows);
                         for (std::size_t i = 0; i < n.val.rows; ++i)
                           for (std::size_t j = 0; j < n.val.cols; ++j)
                             da.at(j, i) = n.grad.at(i, j);
                         accum(*n.parents[0], da);
                       },
                       "transpose"));
}

Var add_rowwise(const Var& a, const Var& bias_row) {
  if (bias_row.rows() != 1 || bias_row.cols() != a.cols())
    throw std::invalid_argument("shape mismatch in op 'add_rowwise'");
  Tensor out = a.val();
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) += bias_row.val().at(0, j);
  return Var(make_node(std::move(out), {a, bias_row},
                       [](Node& n) {
                         accum(*n.parents[0], n.grad);
                         Tensor db(1, n.val.cols);
                         for (std::size_t i = 0; i < n.val.rows; ++i)
                           for (std::size_t j = 0; j < n.val.cols; ++j)
                             db.at(0, j) += n.grad.at(i, j);
                         accum(*n.parents[1], db);
                       },
                       "add_rowwise"));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("shape mismatch in op 'concat_cols'");
    c += p.cols();
  }
  Tensor out(r, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.val().at(i, j);
    off += p.cols();
  }
  return Var(make_node(std::move(out), parts,
                       [](Node& n) {
                         std::size_t off = 0;
                         for (auto& par : n.parents) {
                           Tensor dp(par->val.rows, par->val.cols);
                           for (std::size_t i = 0; i < dp.rows; ++i)
                             for (std::size_t j = 0; j < dp.cols; ++j)
                               dp.at(i, j) = n.grad.at(i, off + j);
                           accum(*par, dp);
                           off += dp.cols;
                         }
                       },
                       "concat_cols"));
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("shape mismatch in op 'concat_rows'");
    r += p.rows();
  }
  Tensor out(r, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(off + i, j) = p.val().at(i, j);
    off += p.rows();
  }
  return Var(make_node(std::move(out), parts,
                       [](Node& n) {
                         std::size_t off = 0;
                         for (auto& par : n.parents) {
                           Tensor dp(par->val.rows, par->val.cols);
                           for (std::size_t i = 0; i < dp.rows; ++i)
                             for (std::size_t j = 0; j < dp.cols; ++j)
                               dp.at(i, j) = n.grad.at(off + i, j);
                           accum(*par, dp);
                           off += dp.rows;
                         }
                       },
                       "concat_rows"));
}

Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
  if (c0 >= c1 || c1 > a.cols()) throw std::invalid_argument("bad slice_cols range");
  Tensor out(a.rows(), c1 - c0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = a.val().at(i, j);
  return Var(make_node(std::move(out), {a},
                       [c0](Node& n) {
                         Tensor da(n.parents[0]->val.rows, n.parents[0]->val.cols);
                         for (std::size_t i = 0; i < n.val.rows; ++i)
                           for (std::size_t j = 0; j < n.val.cols; ++j)
                             da.at(i, c0 + j) = n.grad.at(i, j);
                         accum(*n.parents[0], da);
                       },
                       "slice_cols"));
}

Var row(const Var& a, std::size_t r) {
  if (r >= a.rows()) throw std::invalid_argument("row index out of range");
  Tensor out(1, a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) out.at(0, j) = a.val().at(r, j);
  return Var(make_node(std::move(out), {a},
                       [r](Node& n) {
                         Tensor da(n.parents[0]->val.rows, n.parents[0]->val.cols);
                         for (std::size_t j = 0; j < n.val.cols; ++j)
                           da.at(r, j) = n.grad.at(0, j);
                         accum(*n.parents[0], da);
                       },
                       "row"));
}

namespace {
Var unary(const Var& a, const char* op, double (*f)(double),
          std::function<double(double val, double out)> dfdx) {
  Tensor out = a.val();
  for (auto& x : out.v) x = f(x);
  Tensor saved = out;
  return Var(make_node(std::move(out), {a},
                       [dfdx, saved](Node& n) {
                         Tensor da = n.grad;
                         for (std::size_t i = 0; i < da.v.size(); ++i)
                           da.v[i] *= dfdx(n.parents[0]->val.v[i], saved.v[i]);
                         accum(*n.parents[0], da);
                       },
                       op));
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary(
      a, "sigmoid", +[](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return unary(
      a, "relu", +[](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var vlog(const Var& a) {
  return unary(
      a, "log", +[](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var vpow(const Var& a, double p) {
  Tensor out = a.val();
  for (auto& x : out.v) x = std::pow(x, p);
  return Var(make_node(std::move(out), {a},
                       [p](Node& n) {
                         Tensor da = n.grad;
                         for (std::size_t i = 0; i < da.v.size(); ++i)
                           da.v[i] *= p * std::pow(n.parents[0]->val.v[i], p - 1.0);
                         accum(*n.parents[0], da);
                       },
                       "pow"));
}

Var vabs(const Var& a) {
  return unary(
      a, "abs", +[](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var softmax_rows(const Var& a) {
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < out.cols; ++j) mx = std::max(mx, out.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < out.cols; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) /= z;
  }
  Tensor saved = out;
  return Var(make_node(std::move(out), {a},
                       [saved](Node& n) {
                         Tensor da(saved.rows, saved.cols);
                         for (std::size_t i = 0; i < saved.rows; ++i) {
                           double dot = 0.0;
                           for (std::size_t j = 0; j < saved.cols; ++j)
                             dot += n.grad.at(i, j) * saved.at(i, j);
                           for (std::size_t j = 0; j < saved.cols; ++j)
                             da.at(i, j) = saved.at(i, j) * (n.grad.at(i, j) - dot);
                         }
                         accum(*n.parents[0], da);
                       },
                       "softmax"));
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.val().v) s += x;
  return Var(make_node(Tensor(1, 1, s), {a},
                       [](Node& n) {
                         Tensor da(n.parents[0]->val.rows, n.parents[0]->val.cols,
                                   n.grad.v[0]);
                         accum(*n.parents[0], da);
                       },
                       "sum"));
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.val().size());
  return scale(sum(a), inv);
}

Var scale(const Var& a, double k) {
  Tensor out = a.val();
  for (auto& x : out.v) x *= k;
  return Var(make_node(std::move(out), {a},
                       [k](Node& n) {
                         Tensor da = n.grad;
                         for (auto& x : da.v) x *= k;
                         accum(*n.parents[0], da);
                       },
                       "scale"));
}

Var add_scalar(const Var& a, double k) {
  Tensor out = a.val();
  for (auto& x : out.v) x += k;
  return Var(make_node(std::move(out), {a},
                       [](Node& n) { accum(*n.parents[0], n.grad); }, "add_scalar"));
}

Var l1_distance(const Var& a, const Var& b) { return sum(vabs(sub(a, b))); }

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw std::invalid_argument("backward requires a scalar root");
  // iterative post-order DFS
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : topo) n->grad = Tensor(n->val.rows, n->val.cols);
  root.node()->grad.v[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if ((*it)->back && (*it)->needs_grad) (*it)->back(**it);
}

Var Session::p(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  const Param& prm = store_->get(name);
  auto n = std::make_shared<Node>();
  n->val = prm.value;
  check_finite(n->val, "param");
  n->needs_grad = prm.trainable;
  n->param = name;
  Var v(n);
  leaves_.emplace(name, v);
  return v;
}

std::map<std::string, Tensor> Session::gradients(const Var& root) {
  backward(root);
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : leaves_) {
    if (!store_->get(name).trainable) continue;
    Tensor g = var.node()->grad;
    if (g.v.empty()) g = Tensor(var.rows(), var.cols());
    out.emplace(name, std::move(g));
  }
  return out;
}

FiniteDiffReport finite_diff_check(
    const std::function<Var(Session&)>& builder, ParamStore& store,
    double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
  std::map<std::string, Tensor> analytic;
  {
    Session s(store);
    Var root = builder(s);
    analytic = s.gradients(root);
  }
  FiniteDiffReport report;
  auto eval = [&]() {
    Session s(store);
    return builder(s).scalar();
  };
  for (const auto& name : store.names()) {
    Param& prm = store.get(name);
    if (!prm.trainable) continue;
    const Tensor* ga = analytic.count(name) ? &analytic.at(name) : nullptr;
    for (std::size_t i = 0; i < prm.value.v.size(); ++i) {
      const double orig = prm.value.v[i];
      prm.value.v[i] = orig + epsilon;
      const double fp = eval();
      prm.value.v[i] = orig - epsilon;
      const double fm = eval();
      prm.value.v[i] = orig;
      const double central = (fp - fm) / (2.0 * epsilon);
      const double a = ga ? ga->v[i] : 0.0;
      const double rel = std::fabs(a - central) / std::max(1e-8, std::fabs(central));
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.entries_checked;
    }
  }
  return report;
}

void Sgd::step(ParamStore& store, const std::map<std::string, Tensor>& grads) {
  double clip_scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      for (double x : g.v) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
  }
  for (const auto& [name, g] : grads) {
    Param& prm = store.get(name);
    if (!prm.trainable) continue;
    auto [it, inserted] =
        velocity_.emplace(name, Tensor(g.rows, g.cols));
    Tensor& vel = it->second;
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      vel.v[i] = cfg_.momentum * vel.v[i] - cfg_.lr * clip_scale * g.v[i];
      prm.value.v[i] += vel.v[i];
    }
  }
}

}  // namespace ovsg::nn
