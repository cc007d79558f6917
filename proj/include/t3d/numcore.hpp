#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// The op set is deliberately coarse (fused block attention, row-wise layer
// norm, row-wise log-softmax) so a small transformer needs only a few dozen
// tape entries per forward pass.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace t3d::numcore {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value iff requires_grad
  bool requires_grad = false;
};
}  // namespace detail

// Shared handle to a node. Copies alias the same storage; use clone() for a
// deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;  // rank 2 only
  std::size_t cols() const;  // rank 2 only

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Deep copy. The copy keeps the requires_grad flag unless overridden.
  Tensor clone() const;
  Tensor clone(bool requires_grad) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend struct TensorAccess;
};

// Ordered record of adjoint closures. Backward replays them in reverse and
// consumes the tape. A tape built with grad disabled records nothing and
// produces outputs that never require grad (inference mode).
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return adjoints_.size(); }

  void record(std::function<void()> adjoint);

  // Seeds d(loss)/d(loss) = 1 and runs every adjoint in reverse order.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> adjoints_;
  bool grad_enabled_;
  bool consumed_ = false;
};

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias);

// out[i, :] = table[ids[i], :]
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids);

Tensor layer_norm_rows(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
Tensor gelu(Tape& tape, const Tensor& x);

// Multi-head attention over rows = n_seq * seq_len. Query row i of a sequence
// attends exactly to keys j with block(j) <= block(i), block(i) = i / block_size.
// Disallowed keys are skipped, not masked with -inf.
Tensor block_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                       std::size_t n_heads, std::size_t seq_len, std::size_t block_size);

Tensor log_softmax_rows(Tape& tape, const Tensor& x);

// out[n] = x[rows[n], cols[n]]
Tensor pick(Tape& tape, const Tensor& x, std::span<const std::size_t> rows,
            std::span<const std::size_t> cols);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);
Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi);
Tensor softplus(Tape& tape, const Tensor& x);
Tensor log_sigmoid(Tape& tape, const Tensor& x);            // -softplus(-x)
Tensor log_one_minus_sigmoid(Tape& tape, const Tensor& x);  // -softplus(x)

struct SigmoidTerms {
  double sigmoid;
  double log_sigmoid;
  double log_one_minus_sigmoid;
};

double stable_softplus(double x);
SigmoidTerms sigmoid_and_logsigmoid(double x);

}  // namespace t3d::numcore
