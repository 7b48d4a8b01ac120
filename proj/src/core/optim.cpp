#include "seqaug/core/optim.hpp"

#include <cmath>
#include <numbers>

#include "seqaug/core/error.hpp"

namespace seqaug {

double warmup_cosine_lr(std::int64_t step_index, const AdamWConfig& cfg) {
  if (step_index < 1) throw InputError("optimizer step index must be >= 1");
  if (cfg.total_steps < cfg.warmup) throw ConfigError("optimizer total_steps must be >= warmup");
  if (cfg.warmup > 0 && step_index <= cfg.warmup)
    return cfg.lr * static_cast<double>(step_index) / static_cast<double>(cfg.warmup);
  if (step_index >= cfg.total_steps) return 0.0;
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup);
  const double progress = static_cast<double>(step_index - cfg.warmup) / span;
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

void update(std::span<float> p, std::span<const float> g, std::vector<float>& m, std::vector<float>& v,
            std::int64_t step, double lr, const AdamWConfig& cfg) {
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw DimensionError("adamw: parameter/gradient size mismatch");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(cfg.eps);
  const auto decay = static_cast<float>(1.0 - lr * cfg.weight_decay);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    p[i] *= decay;
    p[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
  }
}

}  // namespace

AdamW::AdamW(std::vector<TensorF> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  }
}

double AdamW::step(std::int64_t step_index) {
  const double lr = warmup_cosine_lr(step_index, cfg_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    update(p.data(), p.grad(), m_[i], v_[i], step_index, lr, cfg_);
  }
  return lr;
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void adamw_cosine_step(std::vector<std::vector<float>>& params, const std::vector<std::vector<float>>& grads,
                       std::vector<std::vector<float>>& m, std::vector<std::vector<float>>& v,
                       std::int64_t step_index, const AdamWConfig& cfg) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
    throw DimensionError("adamw: parameter group count mismatch");
  const double lr = warmup_cosine_lr(step_index, cfg);
  for (std::size_t i = 0; i < params.size(); ++i) update(params[i], grads[i], m[i], v[i], step_index, lr, cfg);
}

}  // namespace seqaug
