#pragma once

#include <Eigen/Eigenvalues>

#include "baple/attack.hpp"

namespace baple {

inline std::vector<LabelId> predict_batch(const DualEncoder& enc, const ClassPromptSet& prompts,
                                          std::span<const Image> images) {
  check_class_count(enc, prompts);
  return predict_from_features(encode_images(enc, images), class_text_features(enc, prompts));
}

inline std::vector<Image> apply_trigger(const FixedTrigger& trigger, std::span<const Image> images) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& x : images) out.push_back(trigger ? trigger(x) : x);
  return out;
}

inline double clean_accuracy(const DualEncoder& enc, const ClassPromptSet& prompts, const Dataset& test) {
  if (test.size() == 0) throw EvaluationError("clean accuracy over an empty test set");
  return accuracy_of(predict_batch(enc, prompts, test.images), test.labels);
}

// Fraction of triggered test images predicted as `target`. By default every
// test sample counts, including those whose true label already is the target.
inline double backdoor_accuracy(const DualEncoder& enc, const ClassPromptSet& prompts, const Dataset& test,
                                const FixedTrigger& trigger, LabelId target, bool exclude_true_target = false) {
  std::vector<Image> chosen;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (!exclude_true_target || test.labels[i] != target) chosen.push_back(trigger ? trigger(test.images[i]) : test.images[i]);
  if (chosen.empty()) throw EvaluationError("backdoor accuracy over an empty test set");
  const auto pred = predict_batch(enc, prompts, chosen);
  return static_cast<double>(std::count(pred.begin(), pred.end(), target)) / static_cast<double>(pred.size());
}

struct EvalReport {
  double ca = 0.0;
  std::optional<double> ba;
  std::vector<double> per_class;
  LabelId target = 0;
  std::string fingerprint;
  std::uint64_t seed = 0;
};

inline std::vector<double> per_class_accuracy(std::span<const LabelId> pred, std::span<const LabelId> truth,
                                              int num_classes) {
  std::vector<double> hit(static_cast<std::size_t>(num_classes)), total(hit.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    total.at(static_cast<std::size_t>(truth[i])) += 1;
    hit[static_cast<std::size_t>(truth[i])] += pred[i] == truth[i];
  }
  for (std::size_t c = 0; c < hit.size(); ++c) hit[c] = total[c] > 0 ? hit[c] / total[c] : 0.0;
  return hit;
}

inline EvalReport evaluate(const DualEncoder& enc, const ClassPromptSet& prompts, const Dataset& test,
                           const FixedTrigger* trigger, LabelId target, bool exclude_true_target = false) {
  if (test.size() == 0) throw EvaluationError("evaluation over an empty test set");
  EvalReport r;
  const auto pred = predict_batch(enc, prompts, test.images);
  r.ca = accuracy_of(pred, test.labels);
  r.per_class = per_class_accuracy(pred, test.labels, prompts.num_classes());
  r.target = target;
  if (trigger) r.ba = backdoor_accuracy(enc, prompts, test, *trigger, target, exclude_true_target);
  return r;
}

// ---------------------------------------------------------------------------
// Feature export

struct FeatureExport {
  MatrixXd clean;      // d x N
  MatrixXd triggered;  // d x N, empty without a trigger
  std::vector<LabelId> labels;
  MatrixXd projection;  // 2 x N_total, clean columns first
};

// Projects columns onto the two leading principal axes of their covariance.
// Axis signs are fixed so that the largest-magnitude loading is positive.
inline MatrixXd principal_projection(const MatrixXd& x, int dims = 2) {
  if (x.cols() == 0) return MatrixXd(dims, 0);
  const VectorXd mean = x.rowwise().mean();
  const MatrixXd centered = x.colwise() - mean;
  const MatrixXd cov = centered * centered.transpose() / static_cast<double>(std::max<Eigen::Index>(1, x.cols()));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  MatrixXd axes(x.rows(), dims);
  for (int k = 0; k < dims; ++k) {
    VectorXd v = es.eigenvectors().col(x.rows() - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    axes.col(k) = v;
  }
  return axes.transpose() * centered;
}

inline FeatureExport export_features(const DualEncoder& enc, std::span<const Image> images,
                                     std::span<const LabelId> labels, const FixedTrigger* trigger) {
  FeatureExport out;
  out.clean = encode_images(enc, images);
  out.labels.assign(labels.begin(), labels.end());
  if (trigger) {
    const auto trig = apply_trigger(*trigger, images);
    out.triggered = encode_images(enc, trig);
  }
  MatrixXd all(out.clean.rows(), out.clean.cols() + out.triggered.cols());
  all << out.clean, out.triggered;
  out.projection = principal_projection(all);
  return out;
}

inline double mean_cosine(const MatrixXd& unit_features, const VectorXd& direction) {
  if (unit_features.cols() == 0) throw EvaluationError("mean cosine over no features");
  const VectorXd d = direction.normalized();
  return (d.transpose() * unit_features).mean();
}

inline MatrixXd select_columns(const MatrixXd& m, std::span<const std::size_t> cols) {
  MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(cols[k]));
  return out;
}

inline void write_features_csv(std::ostream& os, const FeatureExport& fx) {
  const auto d = fx.clean.rows();
  os << "index,variant,label,proj_x,proj_y";
  for (Eigen::Index k = 0; k < d; ++k) os << ",f" << k;
  os << '\n' << std::setprecision(9);
  auto rows = [&](const MatrixXd& f, const char* variant, Eigen::Index offset) {
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      os << j << ',' << variant << ',' << fx.labels[static_cast<std::size_t>(j)] << ','
         << fx.projection(0, offset + j) << ',' << fx.projection(1, offset + j);
      for (Eigen::Index k = 0; k < d; ++k) os << ',' << f(k, j);
      os << '\n';
    }
  };
  rows(fx.clean, "clean", 0);
  rows(fx.triggered, "triggered", fx.clean.cols());
}

}  // namespace baple
