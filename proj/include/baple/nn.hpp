#pragma once

// Minimal dense-network toolkit with hand-written reverse passes. Activations
// are column-major batches: an input batch of B vectors of width n is an n x B
// matrix.

#include <Eigen/Dense>

#include "baple/core.hpp"

namespace baple::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Dense {
  MatrixXd weight;  // out x in
  VectorXd bias;

  static Dense init(int in, int out, Rng& rng) {
    Dense d;
    d.weight.resize(out, in);
    d.bias = VectorXd::Zero(out);
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = s * normal01(rng);
    return d;
  }
  static Dense zeros_like(const Dense& o) {
    return Dense{MatrixXd::Zero(o.weight.rows(), o.weight.cols()), VectorXd::Zero(o.bias.size())};
  }
  Index in() const { return weight.cols(); }
  Index out() const { return weight.rows(); }
};

// Affine layers with tanh between them; the last layer is linear.
struct Mlp {
  std::vector<Dense> layers;

  static Mlp init(int in, const std::vector<int>& hidden, int out, Rng& rng) {
    Mlp m;
    int prev = in;
    for (int h : hidden) {
      m.layers.push_back(Dense::init(prev, h, rng));
      prev = h;
    }
    m.layers.push_back(Dense::init(prev, out, rng));
    return m;
  }
  static Mlp zeros_like(const Mlp& o) {
    Mlp m;
    for (const auto& l : o.layers) m.layers.push_back(Dense::zeros_like(l));
    return m;
  }
  Index input_dim() const { return layers.front().in(); }
  Index output_dim() const { return layers.back().out(); }
};

struct MlpTrace {
  std::vector<MatrixXd> inputs;  // input to each layer
};

inline MatrixXd mlp_forward(const Mlp& net, const MatrixXd& x, MlpTrace* trace = nullptr) {
  if (x.rows() != net.input_dim())
    throw DimensionError("mlp input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(net.input_dim()));
  if (trace) trace->inputs.clear();
  MatrixXd a = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (trace) trace->inputs.push_back(a);
    MatrixXd z = l.weight * a;
    z.colwise() += l.bias;
    if (i + 1 < net.layers.size()) z = z.array().tanh().matrix();
    a = std::move(z);
  }
  return a;
}

// Reverse pass. Accumulates parameter gradients into `grads` when non-null and
// returns the gradient with respect to the input when `input_grad` is set.
inline MatrixXd mlp_backward(const Mlp& net, const MlpTrace& trace, const MatrixXd& grad_out, Mlp* grads,
                             bool input_grad) {
  MatrixXd g = grad_out;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& l = net.layers[k];
    const MatrixXd& in = trace.inputs[k];
    if (grads) {
      grads->layers[k].weight.noalias() += g * in.transpose();
      grads->layers[k].bias += g.rowwise().sum();
    }
    if (k == 0 && !input_grad) return {};
    MatrixXd gin = l.weight.transpose() * g;
    if (k > 0) gin.array() *= (1.0 - in.array().square());  // in = tanh(previous pre-activation)
    g = std::move(gin);
  }
  return g;
}

struct NormalizedColumns {
  MatrixXd unit;
  VectorXd norms;
};

inline NormalizedColumns normalize_columns(const MatrixXd& z) {
  NormalizedColumns r;
  r.norms = z.colwise().norm().transpose();
  r.unit = z;
  for (Index j = 0; j < z.cols(); ++j) r.unit.col(j) /= std::max(r.norms(j), 1e-12);
  return r;
}

// d(z/|z|) applied to an upstream gradient.
inline MatrixXd normalize_backward(const NormalizedColumns& n, const MatrixXd& grad_unit) {
  MatrixXd g(grad_unit.rows(), grad_unit.cols());
  for (Index j = 0; j < grad_unit.cols(); ++j) {
    const auto u = n.unit.col(j);
    g.col(j) = (grad_unit.col(j) - u * u.dot(grad_unit.col(j))) / std::max(n.norms(j), 1e-12);
  }
  return g;
}

// Mean cross-entropy of softmax(logits) against integer labels. logits is
// C x B. When `grad` is non-null it receives d(mean CE)/d(logits).
inline double softmax_cross_entropy(const MatrixXd& logits, std::span<const LabelId> labels, MatrixXd* grad) {
  const Index classes = logits.rows();
  const Index batch = logits.cols();
  if (static_cast<Index>(labels.size()) != batch) throw DimensionError("label count does not match batch size");
  if (grad) grad->setZero(classes, batch);
  if (batch == 0) return 0.0;
  double total = 0.0;
  for (Index j = 0; j < batch; ++j) {
    const auto col = logits.col(j);
    const double m = col.maxCoeff();
    const VectorXd e = (col.array() - m).exp().matrix();
    const double s = e.sum();
    const LabelId y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= classes) throw DimensionError("label out of range in cross-entropy");
    total += -(col(y) - m - std::log(s));
    if (grad) {
      grad->col(j) = e / s;
      (*grad)(y, j) -= 1.0;
    }
  }
  if (grad) *grad /= static_cast<double>(batch);
  return total / static_cast<double>(batch);
}

// Soft-target variant: targets is C x B with columns summing to one.
inline double softmax_cross_entropy_soft(const MatrixXd& logits, const MatrixXd& targets, MatrixXd* grad) {
  const Index batch = logits.cols();
  if (grad) grad->setZero(logits.rows(), batch);
  if (batch == 0) return 0.0;
  double total = 0.0;
  for (Index j = 0; j < batch; ++j) {
    const auto col = logits.col(j);
    const double m = col.maxCoeff();
    const VectorXd e = (col.array() - m).exp().matrix();
    const double s = e.sum();
    const double lse = m + std::log(s);
    total += -(targets.col(j).array() * (col.array() - lse)).sum();
    if (grad) grad->col(j) = e / s - targets.col(j);
  }
  if (grad) *grad /= static_cast<double>(batch);
  return total / static_cast<double>(batch);
}

struct ParamView {
  double* data;
  Index size;
};

inline void append_views(Dense& d, std::vector<ParamView>& out) {
  out.push_back({d.weight.data(), d.weight.size()});
  out.push_back({d.bias.data(), d.bias.size()});
}

inline void append_views(Mlp& m, std::vector<ParamView>& out) {
  for (auto& l : m.layers) append_views(l, out);
}

inline void append_views(MatrixXd& m, std::vector<ParamView>& out) { out.push_back({m.data(), m.size()}); }

enum class OptimizerKind { sgd, adam };

inline std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("optimizer", "expected 'sgd' or 'adam', got '" + s + "'");
}

// Plain gradient descent or Adam over a fixed list of parameter blocks.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  void step(const std::vector<ParamView>& params, const std::vector<ParamView>& grads) {
    if (params.size() != grads.size()) throw DimensionError("optimizer parameter/gradient block count mismatch");
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t b = 0; b < params.size(); ++b)
        for (Index i = 0; i < params[b].size; ++i) params[b].data[i] -= lr_ * grads[b].data[i];
      return;
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(VectorXd::Zero(p.size));
        v_.push_back(VectorXd::Zero(p.size));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (Index i = 0; i < params[b].size; ++i) {
        const double g = grads[b].data[i];
        m_[b](i) = beta1_ * m_[b](i) + (1 - beta1_) * g;
        v_[b](i) = beta2_ * v_[b](i) + (1 - beta2_) * g * g;
        params[b].data[i] -= lr_ * (m_[b](i) / c1) / (std::sqrt(v_[b](i) / c2) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<VectorXd> m_, v_;
};

}  // namespace baple::nn
