#pragma once

#include "baple/data.hpp"

namespace baple {

// eta(y) = t* for every y.
struct TargetLabelFn {
  LabelId target = 0;
  LabelId operator()(LabelId) const noexcept { return target; }
};

inline LabelId apply_target_label(const TargetLabelFn& eta, LabelId y) { return eta(y); }

struct PoisonPlan {
  std::vector<std::size_t> clean;   // dataset indices, ascending
  std::vector<std::size_t> poison;  // dataset indices, ascending
  LabelId target = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  std::size_t total() const noexcept { return clean.size() + poison.size(); }
  TargetLabelFn eta() const noexcept { return {target}; }
};

inline std::size_t poison_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

// Draws floor(ratio * N) subset members uniformly without replacement as the
// poison pool; the rest stay clean. Every class, including the target, is eligible.
inline PoisonPlan make_poison_plan(const FewShotSubset& subset, double ratio, LabelId target, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("poison.ratio", "must lie in [0,1]");
  if (target < 0 || target >= subset.num_classes)
    throw ConfigError("poison.target", "target class " + std::to_string(target) + " outside [0," +
                                           std::to_string(subset.num_classes) + ")");
  PoisonPlan plan;
  plan.target = target;
  plan.ratio = ratio;
  plan.seed = seed;
  std::vector<std::size_t> pool = subset.indices;
  Rng rng(seed);
  shuffle_in_place(pool, rng);
  const std::size_t n = poison_count(ratio, pool.size());
  plan.poison.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  plan.clean.assign(pool.begin() + static_cast<std::ptrdiff_t>(n), pool.end());
  std::sort(plan.poison.begin(), plan.poison.end());
  std::sort(plan.clean.begin(), plan.clean.end());
  if (n == 0 && ratio > 0.0)
    plan.warnings.push_back("floor(ratio * N) = 0 for ratio " + std::to_string(ratio) + " and N " +
                            std::to_string(pool.size()) + "; training is clean-only");
  return plan;
}

struct StepBatch {
  std::vector<std::size_t> clean;
  std::vector<LabelId> clean_labels;
  std::vector<std::size_t> poison;
  std::vector<LabelId> poison_labels;  // always eta(y)
};

// Single-consumer stream of (clean, poison) mini-batches. Both pools are
// reshuffled at the start of every epoch. Steps per epoch are floor(|D_c| / B)
// over the clean pool; each step also draws ceil(B * ratio) poison samples
// (capped by |D_p|), cycling through the shuffled poison pool.
class BatchStream {
 public:
  BatchStream(const PoisonPlan& plan, const Dataset& dataset, int batch_size, std::uint64_t seed)
      : plan_(plan), dataset_(dataset), batch_size_(batch_size), rng_(seed) {
    if (batch_size < 1) throw ConfigError("attack.batch_size", "must be >= 1");
    const double want = std::ceil(static_cast<double>(batch_size) * plan.ratio - 1e-9);
    quota_ = std::min(static_cast<std::size_t>(std::max(want, 0.0)), plan.poison.size());
    const std::size_t b = static_cast<std::size_t>(batch_size);
    if (!plan.clean.empty()) {
      steps_ = std::max<std::size_t>(1, plan.clean.size() / b);
    } else if (quota_ > 0) {
      steps_ = std::max<std::size_t>(1, plan.poison.size() / quota_);
    } else {
      steps_ = 0;
    }
  }

  std::size_t steps_per_epoch() const noexcept { return steps_; }
  std::size_t poison_quota() const noexcept { return quota_; }

  std::vector<StepBatch> next_epoch() {
    std::vector<std::size_t> clean = plan_.clean, poison = plan_.poison;
    shuffle_in_place(clean, rng_);
    shuffle_in_place(poison, rng_);
    const std::size_t b = static_cast<std::size_t>(batch_size_);
    std::vector<StepBatch> out(steps_);
    for (std::size_t s = 0; s < steps_; ++s) {
      auto& batch = out[s];
      for (std::size_t i = s * b; i < std::min(clean.size(), (s + 1) * b); ++i) {
        batch.clean.push_back(clean[i]);
        batch.clean_labels.push_back(dataset_.labels[clean[i]]);
      }
      for (std::size_t i = 0; i < quota_; ++i) {
        batch.poison.push_back(poison[(s * quota_ + i) % poison.size()]);
        batch.poison_labels.push_back(plan_.eta()(dataset_.labels[batch.poison.back()]));
      }
    }
    return out;
  }

 private:
  PoisonPlan plan_;
  const Dataset& dataset_;
  int batch_size_;
  Rng rng_;
  std::size_t quota_ = 0;
  std::size_t steps_ = 0;
};

inline BatchStream materialize_batches(const PoisonPlan& plan, const Dataset& dataset, int batch_size,
                                       std::uint64_t seed) {
  return BatchStream(plan, dataset, batch_size, seed);
}

template <>
struct ArtifactCodec<PoisonPlan> {
  static void save(const PoisonPlan& p, const std::filesystem::path& dir) {
    std::vector<std::int32_t> clean(p.clean.begin(), p.clean.end()), poison(p.poison.begin(), p.poison.end());
    ArtifactWriter(dir, "poison_plan")
        .field("target", p.target)
        .field("ratio", p.ratio)
        .field("seed", p.seed)
        .array_i32("clean", clean, {clean.size()})
        .array_i32("poison", poison, {poison.size()})
        .text("warnings", join_lines(p.warnings))
        .commit();
  }
  static PoisonPlan load(const std::filesystem::path& dir) {
    ArtifactReader r(dir, "poison_plan");
    PoisonPlan p;
    p.target = static_cast<LabelId>(r.field_i64("target"));
    p.ratio = r.field_f64("ratio");
    p.seed = r.field_u64("seed");
    for (auto i : r.array_i32("clean")) p.clean.push_back(static_cast<std::size_t>(i));
    for (auto i : r.array_i32("poison")) p.poison.push_back(static_cast<std::size_t>(i));
    p.warnings = split_lines(r.text("warnings"));
    return p;
  }
};

}  // namespace baple
