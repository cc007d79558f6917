#include "t3d/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "t3d/errors.hpp"

namespace t3d::numcore {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

struct TensorAccess {
  static const std::shared_ptr<detail::Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }
};

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

const NodePtr& node_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
  return TensorAccess::node(t);
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw OverflowError(std::string(op) + ": non-finite value in forward output");
  }
}

// Creates the output node. Gradient storage exists only when the tape
// records and some input carries a gradient.
NodePtr make_output(Tape& tape, Shape shape, std::vector<double> value, const char* op,
                    std::initializer_list<const NodePtr*> inputs) {
  check_finite(value, op);
  auto out = std::make_shared<detail::Node>();
  out->shape = std::move(shape);
  out->value = std::move(value);
  bool rg = false;
  if (tape.grad_enabled()) {
    for (const NodePtr* in : inputs) rg = rg || (*in)->requires_grad;
  }
  out->requires_grad = rg;
  if (rg) out->grad.assign(out->value.size(), 0.0);
  return out;
}

void require_rank2(const NodePtr& n, const char* op) {
  if (n->shape.size() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(n->shape));
  }
}

void require_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
  if (a->shape != b->shape) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

// ----------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from(shape, std::vector<double>(shape_size(shape), 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
  }
  if (shape_size(shape) != values.size()) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->value.size(), 0.0);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_of(*this)->shape; }
std::size_t Tensor::size() const { return node_of(*this)->value.size(); }

std::size_t Tensor::rows() const {
  require_rank2(node_of(*this), "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(node_of(*this), "cols");
  return node_->shape[1];
}

std::span<const double> Tensor::values() const { return node_of(*this)->value; }
std::span<double> Tensor::mutable_values() { return node_of(*this)->value; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on a tensor with " + std::to_string(size()) + " values");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_of(*this)->value[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }

std::span<const double> Tensor::grad() const {
  if (!requires_grad()) throw StateError("tensor does not carry a gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!requires_grad()) throw StateError("tensor does not carry a gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  auto& n = node_of(*this);
  std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return clone(requires_grad()); }

Tensor Tensor::clone(bool requires_grad) const {
  const auto& n = node_of(*this);
  return from(n->shape, n->value, requires_grad);
}

// ------------------------------------------------------------------- Tape

void Tape::record(std::function<void()> adjoint) {
  if (consumed_) throw StateError("tape already consumed by backward()");
  if (grad_enabled_) adjoints_.push_back(std::move(adjoint));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw StateError("tape already consumed by backward()");
  if (!grad_enabled_) throw StateError("backward() on an inference tape");
  const auto& ln = node_of(loss);
  if (ln->value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(ln->shape));
  }
  consumed_ = true;
  if (!ln->requires_grad) {
    adjoints_.clear();
    return;
  }
  ln->grad[0] += 1.0;
  for (auto it = adjoints_.rbegin(); it != adjoints_.rend(); ++it) (*it)();
  adjoints_.clear();
}

// -------------------------------------------------------------------- ops

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a);
  const auto& bn = node_of(b);
  require_rank2(an, "matmul");
  require_rank2(bn, "matmul");
  const std::size_t m = an->shape[0], k = an->shape[1], n = bn->shape[1];
  if (bn->shape[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(an->shape) + " x " +
                         shape_str(bn->shape));
  }
  std::vector<double> c(m * n, 0.0);
  const double* A = an->value.data();
  const double* B = bn->value.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = A[i * k + l];
      const double* brow = B + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
  auto out = make_output(tape, {m, n}, std::move(c), "matmul", {&an, &bn});
  if (out->requires_grad) {
    tape.record([an, bn, out, m, k, n] {
      const double* dC = out->grad.data();
      if (an->requires_grad) {
        const double* B = bn->value.data();
        double* dA = an->grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* dcrow = dC + i * n;
          for (std::size_t l = 0; l < k; ++l) {
            const double* brow = B + l * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
            dA[i * k + l] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        const double* A = an->value.data();
        double* dB = bn->grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* dcrow = dC + i * n;
          for (std::size_t l = 0; l < k; ++l) {
            const double ail = A[i * k + l];
            double* dbrow = dB + l * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += ail * dcrow[j];
          }
        }
      }
    });
  }
  return TensorAccess::wrap(out);
}

namespace {

template <class Fwd, class DA, class DB>
Tensor binary_elementwise(Tape& tape, const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da,
                          DB db) {
  const auto& an = node_of(a);
  const auto& bn = node_of(b);
  require_same_shape(an, bn, op);
  std::vector<double> v(an->value.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(an->value[i], bn->value[i]);
  auto out = make_output(tape, an->shape, std::move(v), op, {&an, &bn});
  if (out->requires_grad) {
    tape.record([an, bn, out, da, db] {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        const double g = out->grad[i];
        if (an->requires_grad) an->grad[i] += g * da(an->value[i], bn->value[i]);
        if (bn->requires_grad) bn->grad[i] += g * db(an->value[i], bn->value[i]);
      }
    });
  }
  return TensorAccess::wrap(out);
}

template <class Fwd, class Deriv>
Tensor unary_elementwise(Tape& tape, const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  const auto& xn = node_of(x);
  std::vector<double> v(xn->value.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(xn->value[i]);
  auto out = make_output(tape, xn->shape, std::move(v), op, {&xn});
  if (out->requires_grad) {
    tape.record([xn, out, deriv] {
      for (std::size_t i = 0; i < out->grad.size(); ++i) xn->grad[i] += out->grad[i] * deriv(xn->value[i]);
    });
  }
  return TensorAccess::wrap(out);
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  return unary_elementwise(
      tape, x, "scale", [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  const auto& xn = node_of(x);
  const auto& bn = node_of(bias);
  require_rank2(xn, "add_row_bias");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  if (bn->value.size() != n) throw DimensionError("add_row_bias: bias length does not match columns");
  std::vector<double> v(xn->value);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] += bn->value[j];
  }
  auto out = make_output(tape, xn->shape, std::move(v), "add_row_bias", {&xn, &bn});
  if (out->requires_grad) {
    tape.record([xn, bn, out, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = out->grad[i * n + j];
          if (xn->requires_grad) xn->grad[i * n + j] += g;
          if (bn->requires_grad) bn->grad[j] += g;
        }
      }
    });
  }
  return TensorAccess::wrap(out);
}

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids) {
  const auto& tn = node_of(table);
  require_rank2(tn, "gather_rows");
  const std::size_t rows = tn->shape[0], d = tn->shape[1];
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  std::vector<std::size_t> idx(ids.size());
  std::vector<double> v(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DomainError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                        std::to_string(rows) + " rows");
    }
    idx[i] = static_cast<std::size_t>(ids[i]);
    std::copy_n(tn->value.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                v.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto out = make_output(tape, {ids.size(), d}, std::move(v), "gather_rows", {&tn});
  if (out->requires_grad) {
    tape.record([tn, out, idx = std::move(idx), d] {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) tn->grad[idx[i] * d + j] += out->grad[i * d + j];
      }
    });
  }
  return TensorAccess::wrap(out);
}

Tensor layer_norm_rows(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto& xn = node_of(x);
  const auto& gn = node_of(gain);
  const auto& bn = node_of(bias);
  require_rank2(xn, "layer_norm_rows");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  if (gn->value.size() != n || bn->value.size() != n) {
    throw DimensionError("layer_norm_rows: gain/bias length does not match columns");
  }
  std::vector<double> xhat(m * n), inv_std(m), v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xn->value.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      v[i * n + j] = gn->value[j] * xhat[i * n + j] + bn->value[j];
    }
  }
  auto out = make_output(tape, xn->shape, std::move(v), "layer_norm_rows", {&xn, &gn, &bn});
  if (out->requires_grad) {
    tape.record([xn, gn, bn, out, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n] {
      std::vector<double> dxhat(n);
      for (std::size_t i = 0; i < m; ++i) {
        const double* dy = out->grad.data() + i * n;
        const double* xh = xhat.data() + i * n;
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (gn->requires_grad) gn->grad[j] += dy[j] * xh[j];
          if (bn->requires_grad) bn->grad[j] += dy[j];
          dxhat[j] = dy[j] * gn->value[j];
          mean_d += dxhat[j];
          mean_dx += dxhat[j] * xh[j];
        }
        if (!xn->requires_grad) continue;
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          xn->grad[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
      }
    });
  }
  return TensorAccess::wrap(out);
}

Tensor gelu(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor block_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                       std::size_t seq_len, std::size_t block_size) {
  const auto& qn = node_of(q);
  const auto& kn = node_of(k);
  const auto& vn = node_of(v);
  require_rank2(qn, "block_attention");
  require_same_shape(qn, kn, "block_attention");
  require_same_shape(qn, vn, "block_attention");
  const std::size_t rows = qn->shape[0], d = qn->shape[1];
  if (n_heads == 0 || d % n_heads != 0) throw DimensionError("block_attention: heads must divide width");
  if (seq_len == 0 || rows % seq_len != 0) throw DimensionError("block_attention: rows not a multiple of seq_len");
  if (block_size == 0) throw DimensionError("block_attention: block_size must be positive");
  const std::size_t n_seq = rows / seq_len, dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // keys visible to query i: [0, visible[i])
  std::vector<std::size_t> visible(seq_len), offset(seq_len + 1, 0);
  for (std::size_t i = 0; i < seq_len; ++i) {
    visible[i] = std::min(seq_len, (i / block_size + 1) * block_size);
    offset[i + 1] = offset[i] + visible[i];
  }
  const std::size_t per_head = offset[seq_len];
  std::vector<double> probs(n_seq * n_heads * per_head);
  std::vector<double> o(rows * d, 0.0);
  const double* Q = qn->value.data();
  const double* K = kn->value.data();
  const double* V = vn->value.data();

  for (std::size_t s = 0; s < n_seq; ++s) {
    const std::size_t base = s * seq_len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t col = h * dh;
      double* P = probs.data() + (s * n_heads + h) * per_head;
      for (std::size_t i = 0; i < seq_len; ++i) {
        const double* qi = Q + (base + i) * d + col;
        double* p = P + offset[i];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < visible[i]; ++j) {
          const double* kj = K + (base + j) * d + col;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          p[j] = dot * inv_sqrt;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < visible[i]; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        double* oi = o.data() + (base + i) * d + col;
        for (std::size_t j = 0; j < visible[i]; ++j) {
          p[j] /= z;
          const double* vj = V + (base + j) * d + col;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  auto out = make_output(tape, qn->shape, std::move(o), "block_attention", {&qn, &kn, &vn});
  if (out->requires_grad) {
    tape.record([qn, kn, vn, out, probs = std::move(probs), visible = std::move(visible),
                 offset = std::move(offset), n_seq, n_heads, seq_len, d, dh, per_head, inv_sqrt] {
      const double* Q = qn->value.data();
      const double* K = kn->value.data();
      const double* V = vn->value.data();
      const double* dO = out->grad.data();
      std::vector<double> dp(seq_len);
      for (std::size_t s = 0; s < n_seq; ++s) {
        const std::size_t base = s * seq_len;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t col = h * dh;
          const double* P = probs.data() + (s * n_heads + h) * per_head;
          for (std::size_t i = 0; i < seq_len; ++i) {
            const double* p = P + offset[i];
            const double* doi = dO + (base + i) * d + col;
            double weighted = 0.0;
            for (std::size_t j = 0; j < visible[i]; ++j) {
              const double* vj = V + (base + j) * d + col;
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += doi[c] * vj[c];
              dp[j] = acc;
              weighted += p[j] * acc;
              if (vn->requires_grad) {
                double* dvj = vn->grad.data() + (base + j) * d + col;
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * doi[c];
              }
            }
            const double* qi = Q + (base + i) * d + col;
            for (std::size_t j = 0; j < visible[i]; ++j) {
              const double ds = p[j] * (dp[j] - weighted) * inv_sqrt;
              if (ds == 0.0) continue;
              const double* kj = K + (base + j) * d + col;
              if (qn->requires_grad) {
                double* dqi = qn->grad.data() + (base + i) * d + col;
                for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
              }
              if (kn->requires_grad) {
                double* dkj = kn->grad.data() + (base + j) * d + col;
                for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
              }
            }
          }
        }
      }
    });
  }
  return TensorAccess::wrap(out);
}

Tensor log_softmax_rows(Tape& tape, const Tensor& x) {
  const auto& xn = node_of(x);
  require_rank2(xn, "log_softmax_rows");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xn->value.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = row[j] - lse;
  }
  auto out = make_output(tape, xn->shape, std::move(v), "log_softmax_rows", {&xn});
  if (out->requires_grad) {
    tape.record([xn, out, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = out->grad.data() + i * n;
        const double* lp = out->value.data() + i * n;
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += g[j];
        if (gsum == 0.0) {
          for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += g[j];
          continue;
        }
        for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += g[j] - std::exp(lp[j]) * gsum;
      }
    });
  }
  return TensorAccess::wrap(out);
}

Tensor pick(Tape& tape, const Tensor& x, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  const auto& xn = node_of(x);
  require_rank2(xn, "pick");
  if (rows.size() != cols.size()) throw DimensionError("pick: row/col index lists differ in length");
  if (rows.empty()) throw DimensionError("pick: empty index list");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> v(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m || cols[i] >= n) throw DimensionError("pick: index out of range");
    flat[i] = rows[i] * n + cols[i];
    v[i] = xn->value[flat[i]];
  }
  auto out = make_output(tape, {rows.size()}, std::move(v), "pick", {&xn});
  if (out->requires_grad) {
    tape.record([xn, out, flat = std::move(flat)] {
      for (std::size_t i = 0; i < flat.size(); ++i) xn->grad[flat[i]] += out->grad[i];
    });
  }
  return TensorAccess::wrap(out);
}

Tensor sum(Tape& tape, const Tensor& x) {
  const auto& xn = node_of(x);
  double s = 0.0;
  for (double v : xn->value) s += v;
  auto out = make_output(tape, {}, {s}, "sum", {&xn});
  if (out->requires_grad) {
    tape.record([xn, out] {
      for (double& g : xn->grad) g += out->grad[0];
    });
  }
  return TensorAccess::wrap(out);
}

Tensor mean(Tape& tape, const Tensor& x) {
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.size()));
}

Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lo must not exceed hi");
  return unary_elementwise(
      tape, x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

namespace {
double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

SigmoidTerms sigmoid_and_logsigmoid(double x) {
  return {stable_sigmoid(x), -stable_softplus(-x), -stable_softplus(x)};
}

Tensor softplus(Tape& tape, const Tensor& x) {
  return unary_elementwise(tape, x, "softplus", stable_softplus, stable_sigmoid);
}

Tensor log_sigmoid(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, "log_sigmoid", [](double v) { return -stable_softplus(-v); },
      [](double v) { return stable_sigmoid(-v); });
}

Tensor log_one_minus_sigmoid(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, "log_one_minus_sigmoid", [](double v) { return -stable_softplus(v); },
      [](double v) { return -stable_sigmoid(v); });
}

}  // namespace t3d::numcore
