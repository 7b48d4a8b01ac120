#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seqaug/core/tensor.hpp"

namespace seqaug::nn {

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& param)>;

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// Base for anything holding trainable tensors. Subclasses list their
// parameters and children in visit(); names are dotted paths.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual void visit(const std::string& prefix, const ParamVisitor<T>& fn) = 0;

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters(const std::string& prefix = "") {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit(prefix, [&](const std::string& n, Tensor<T>& p) { out.emplace_back(n, p); });
    return out;
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    visit("", [&](const std::string&, Tensor<T>& p) { out.push_back(p); });
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    visit("", [&](const std::string&, Tensor<T>& p) { n += p.numel(); });
    return n;
  }

  void set_requires_grad(bool on) {
    visit("", [&](const std::string&, Tensor<T>& p) { p.set_requires_grad(on); });
  }

  void zero_grad() {
    visit("", [&](const std::string&, Tensor<T>& p) { p.zero_grad(); });
  }
};

}  // namespace seqaug::nn
