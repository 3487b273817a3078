#pragma once

// Dense row-major 2-D tensors and the handful of differentiable kernels the
// reranker needs. Every op comes as a forward/backward pair; backward takes
// the cached forward values and the upstream gradient and returns the
// gradient w.r.t. the op input, accumulating into parameter grads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace treerank {

using Scalar = double;

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, Scalar fill = 0);
  Tensor(std::initializer_list<std::initializer_list<Scalar>> rows);

  static Tensor row_vector(std::span<const Scalar> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Scalar operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<Scalar> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Scalar> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  void fill(Scalar v);
  void resize(std::size_t rows, std::size_t cols);
  bool same_shape(const Tensor& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  bool all_finite() const;
  std::string shape_str() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(Scalar s);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Scalar> data_;
};

// A learnable tensor with its gradient and Adam moments.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t step_count = 0;

  Param() = default;
  Param(std::string name, std::size_t rows, std::size_t cols);
  Param(std::string name, Tensor init);

  void zero_grad() { grad.fill(0); }
  void init_normal(std::mt19937_64& rng, Scalar stddev);
};

// ---- products -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // a · b
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // aᵀ · b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a · bᵀ
void add_matmul_tn(Tensor& acc, const Tensor& a, const Tensor& b);  // acc += aᵀ · b

// ---- affine ---------------------------------------------------------------

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor affine(const Tensor& x, const Param& w, const Param& b);
// Accumulates dW, db and returns dX.
Tensor affine_backward(const Tensor& x, Param& w, Param& b, const Tensor& dy);

// ---- elementwise / rowwise --------------------------------------------------

Tensor softmax_rows(const Tensor& x);
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

Scalar sigmoid(Scalar x);
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& dy);

Tensor mean_rows(const Tensor& x);  // 1 × cols

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  Scalar lr = 0.001;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

// Bias-corrected Adam; increments step_count and zeroes grads afterwards.
void adam_step(std::span<Param* const> params, const AdamConfig& cfg);

// ---- gradient checking --------------------------------------------------------

// Evaluates the loss at the current parameter values. When `with_grad` is
// true it must also accumulate analytic gradients into Param::grad (grads are
// zeroed by the checker beforehand).
using LossFn = std::function<Scalar(bool with_grad)>;

struct GradcheckOptions {
  std::size_t max_coords_per_param = 32;
  std::uint64_t seed = 7;
};

struct GradcheckReport {
  Scalar max_relative_error = 0;
  std::string worst_param;
  std::vector<std::pair<std::string, Scalar>> per_param;
};

GradcheckReport gradcheck(const LossFn& loss_fn, std::span<Param* const> params, Scalar epsilon,
                          const GradcheckOptions& opts = {});

}  // namespace treerank
