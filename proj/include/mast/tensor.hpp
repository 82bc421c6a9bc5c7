#ifndef MAST_TENSOR_HPP
#define MAST_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mast {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense 2-D matrix of doubles, row-major. A Tensor may carry a node id
/// into the Tape that produced it; node == -1 means "constant" (not part
/// of any differentiation graph).
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols) : shape{rows, cols}, data(size_t(rows) * cols, 0.0) {
    if (rows <= 0 || cols <= 0) throw ShapeError("Tensor dims must be positive");
  }
  Tensor(int rows, int cols, std::vector<double> values)
      : shape{rows, cols}, data(std::move(values)) {
    if (rows <= 0 || cols <= 0) throw ShapeError("Tensor dims must be positive");
    if (data.size() != size_t(rows) * cols)
      throw ShapeError("Tensor data length does not match shape");
  }
  static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }
  size_t size() const { return data.size(); }
  double& at(int r, int c) { return data[size_t(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[size_t(r) * shape[1] + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor");
    return data[0];
  }
  bool tracked() const { return node >= 0; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::vector<int> shape{0, 0};
  std::vector<double> data;
  int node = -1;
};

std::string shape_str(const Tensor& t);

/// Define-by-run differentiation tape. Every op records a node when at
/// least one input is tracked; ops on constants just compute values.
/// The tape is rebuilt for every forward pass.
class Tape {
 public:
  /// Register a watched variable (typically a model parameter).
  Tensor leaf(const Tensor& value);

  Tensor matmul(const Tensor& a, const Tensor& b);
  /// a * b^T without materializing the transpose.
  Tensor matmul_nt(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double s);
  /// x[m,n] + row[1,n] broadcast over rows.
  Tensor add_rowvec(const Tensor& x, const Tensor& row);
  Tensor softmax_rows(const Tensor& x);
  /// Masked softmax; mask is row-major 0/1 over x's shape, 1 = visible.
  /// Masked positions get weight exactly 0 and receive zero gradient.
  Tensor softmax_rows_masked(const Tensor& x, const std::vector<uint8_t>& mask);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
  Tensor gelu(const Tensor& x);
  Tensor sum(const Tensor& x);        // -> [1,1]
  Tensor mean_rows(const Tensor& x);  // -> [1,cols]
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor slice_rows(const Tensor& x, int begin, int count);
  Tensor slice_cols(const Tensor& x, int begin, int count);
  Tensor element(const Tensor& x, int r, int c);  // -> [1,1]
  /// log(max(x, 1e-12)) elementwise.
  Tensor log_clamped(const Tensor& x);

  /// Reverse sweep from a scalar loss. Fills gradients for every node.
  void backward(const Tensor& loss);
  /// Gradient of a tracked tensor after backward(); zeros if unreached.
  Tensor grad(const Tensor& t) const;

  size_t node_count() const { return nodes_.size(); }

  static constexpr double kLogFloor = 1e-12;
  static constexpr double kLayerNormEps = 1e-5;

 private:
  struct Node {
    std::vector<int> parents;
    std::vector<int> out_shape;
    // Accumulates into parent grads given this node's grad.
    std::function<void(Tape&, const std::vector<double>&)> back;
  };

  int record(std::vector<int> parents, const Tensor& out,
             std::function<void(Tape&, const std::vector<double>&)> back);
  std::vector<double>& grad_buf(int node);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool swept_ = false;
};

/// Adam optimizer state; accumulators are keyed by parameter name and
/// allocated lazily on first step.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

/// Textbook Adam with bias correction. Parameters without a gradient
/// entry are left untouched.
void adam_step(ParamMap& params, const GradMap& grads, AdamState& state);

}  // namespace mast

#endif  // MAST_TENSOR_HPP
