#pragma once

#include <cstdint>
#include <vector>

#include "seqaug/core/tensor.hpp"

namespace seqaug {

struct AdamWConfig {
  double lr = 1e-4;
  std::int64_t warmup = 500;
  std::int64_t total_steps = 10000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Linear warmup 0 -> lr over `warmup` steps, then cosine decay to 0 at
// `total_steps`. step_index is 1-based.
double warmup_cosine_lr(std::int64_t step_index, const AdamWConfig& cfg);

// AdamW with decoupled weight decay over a fixed parameter list. Gradients
// are read from each parameter's grad buffer.
class AdamW {
 public:
  AdamW(std::vector<TensorF> params, AdamWConfig cfg);

  // Applies update number `step_index` (1-based) and returns the lr used.
  double step(std::int64_t step_index);
  void zero_grad();

  const AdamWConfig& config() const { return cfg_; }
  const std::vector<TensorF>& params() const { return params_; }

 private:
  std::vector<TensorF> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

// Stateless form: one AdamW update of `params` using `grads` and the moment
// buffers `m`, `v` (same layout, updated in place).
void adamw_cosine_step(std::vector<std::vector<float>>& params, const std::vector<std::vector<float>>& grads,
                       std::vector<std::vector<float>>& m, std::vector<std::vector<float>>& v,
                       std::int64_t step_index, const AdamWConfig& cfg);

}  // namespace seqaug
