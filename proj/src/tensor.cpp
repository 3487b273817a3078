#include "treerank/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "treerank/errors.hpp"

namespace treerank {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MutMap view(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, Scalar fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::initializer_list<std::initializer_list<Scalar>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Tensor Tensor::row_vector(std::span<const Scalar> values) {
  Tensor t(1, values.size());
  std::copy(values.begin(), values.end(), t.data_.begin());
  return t;
}

void Tensor::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::resize(std::size_t rows, std::size_t cols) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, 0);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[' << rows_ << 'x' << cols_ << ']';
  return os.str();
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) shape_error("add", *this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(Scalar s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Param::Param(std::string n, std::size_t rows, std::size_t cols)
    : name(std::move(n)), value(rows, cols), grad(rows, cols), adam_m(rows, cols), adam_v(rows, cols) {}

Param::Param(std::string n, Tensor init)
    : name(std::move(n)),
      value(std::move(init)),
      grad(value.rows(), value.cols()),
      adam_m(value.rows(), value.cols()),
      adam_v(value.rows(), value.cols()) {}

void Param::init_normal(std::mt19937_64& rng, Scalar stddev) {
  std::normal_distribution<Scalar> dist(0.0, stddev);
  for (auto& v : value.values()) v = dist(rng);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Tensor out(a.rows(), b.cols());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
  Tensor out(a.cols(), b.cols());
  if (a.rows() == 0) return out;
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  Tensor out(a.rows(), b.rows());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

void add_matmul_tn(Tensor& acc, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols()) shape_error("add_matmul_tn", a, b);
  if (a.rows() == 0) return;
  view(acc).noalias() += view(a).transpose() * view(b);
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows()) shape_error("affine", x, w);
  if (b.rows() != 1 || b.cols() != w.cols()) shape_error("affine bias", w, b);
  Tensor out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b(0, j);
  }
  return out;
}

Tensor affine(const Tensor& x, const Param& w, const Param& b) { return affine(x, w.value, b.value); }

Tensor affine_backward(const Tensor& x, Param& w, Param& b, const Tensor& dy) {
  if (dy.rows() != x.rows() || dy.cols() != w.value.cols()) shape_error("affine_backward", x, dy);
  add_matmul_tn(w.grad, x, dy);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    auto r = dy.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) b.grad(0, j) += r[j];
  }
  return matmul_nt(dy, w.value);
}

Tensor softmax_rows(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto out = y.row(i);
    if (in.empty()) continue;
    const Scalar mx = *std::max_element(in.begin(), in.end());
    Scalar denom = 0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      denom += out[j];
    }
    for (auto& v : out) v /= denom;
  }
  return y;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  if (!y.same_shape(dy)) shape_error("softmax_rows_backward", y, dy);
  Tensor dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto gr = dy.row(i);
    Scalar dot = 0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
    auto out = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) out[j] = yr[j] * (gr[j] - dot);
  }
  return dx;
}

Scalar sigmoid(Scalar x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  auto in = x.values();
  auto out = y.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid(in[i]);
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  if (!y.same_shape(dy)) shape_error("sigmoid_backward", y, dy);
  Tensor dx(y.rows(), y.cols());
  auto yv = y.values();
  auto gv = dy.values();
  auto out = dx.values();
  for (std::size_t i = 0; i < yv.size(); ++i) out[i] = gv[i] * yv[i] * (1.0 - yv[i]);
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  auto in = x.values();
  auto out = y.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0 ? in[i] : 0;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  if (!y.same_shape(dy)) shape_error("relu_backward", y, dy);
  Tensor dx(y.rows(), y.cols());
  auto yv = y.values();
  auto gv = dy.values();
  auto out = dx.values();
  for (std::size_t i = 0; i < yv.size(); ++i) out[i] = yv[i] > 0 ? gv[i] : 0;
  return dx;
}

Tensor mean_rows(const Tensor& x) {
  Tensor out(1, x.cols());
  if (x.rows() == 0) return out;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out(0, j) += r[j];
  }
  out *= 1.0 / static_cast<Scalar>(x.rows());
  return out;
}

void adam_step(std::span<Param* const> params, const AdamConfig& cfg) {
  for (Param* p : params) {
    ++p->step_count;
    const auto t = static_cast<Scalar>(p->step_count);
    const Scalar c1 = 1.0 - std::pow(cfg.beta1, t);
    const Scalar c2 = 1.0 - std::pow(cfg.beta2, t);
    auto val = p->value.values();
    auto g = p->grad.values();
    auto m = p->adam_m.values();
    auto v = p->adam_v.values();
    for (std::size_t i = 0; i < val.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const Scalar m_hat = m[i] / c1;
      const Scalar v_hat = v[i] / c2;
      val[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    p->zero_grad();
  }
}

GradcheckReport gradcheck(const LossFn& loss_fn, std::span<Param* const> params, Scalar epsilon,
                          const GradcheckOptions& opts) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw InputError("gradcheck epsilon must lie in [1e-6, 1e-3]");
  }
  for (Param* p : params) p->zero_grad();
  const Scalar base = loss_fn(true);
  if (!std::isfinite(base)) throw NumericError("gradcheck: non-finite loss");
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  std::mt19937_64 rng(opts.seed);
  GradcheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opts.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_param);
    }
    Scalar worst = 0;
    for (std::size_t idx : coords) {
      Scalar& slot = p.value.values()[idx];
      const Scalar saved = slot;
      slot = saved + epsilon;
      const Scalar up = loss_fn(false);
      slot = saved - epsilon;
      const Scalar down = loss_fn(false);
      slot = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("gradcheck: non-finite loss");
      const Scalar numeric = (up - down) / (2 * epsilon);
      const Scalar a = analytic[pi].values()[idx];
      const Scalar rel = std::abs(a - numeric) / std::max<Scalar>(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
    report.per_param.emplace_back(p.name, worst);
    if (report.worst_param.empty() || worst > report.max_relative_error) {
      report.max_relative_error = worst;
      report.worst_param = p.name;
    }
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return report;
}

}  // namespace treerank
