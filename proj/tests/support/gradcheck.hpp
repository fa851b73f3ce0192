#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "amlhp/nn.hpp"
#include "amlhp/rng.hpp"
#include "amlhp/tensor.hpp"

namespace amlhp::testing {

// One tensor whose analytic gradient is compared against central
// differences of the loss taken by nudging `value` in place.
template <typename T>
struct BasicProbe {
  std::string name;
  T* value;
  const T* grad;
  std::size_t size;
};
using Probe = BasicProbe<double>;

struct GradCheck {
  double worst = 0;  // largest per-tensor relative error
  std::string where;
  std::size_t entries = 0;
};

// Relative error per tensor is |a - n|_2 / max(|a|_2, |n|_2); tensors whose
// analytic and numeric gradients are both below `floor` in norm are compared
// absolutely instead.
template <typename T>
GradCheck check_gradients(const std::function<T()>& loss, const std::vector<BasicProbe<T>>& probes, T step = 1e-6,
                          T floor = 1e-10) {
  GradCheck out;
  for (const auto& p : probes) {
    T diff2 = 0, an2 = 0, num2 = 0;
    for (std::size_t i = 0; i < p.size; ++i) {
      const T keep = p.value[i];
      p.value[i] = keep + step;
      const T up = loss();
      p.value[i] = keep - step;
      const T down = loss();
      p.value[i] = keep;
      const T num = (up - down) / (2 * step);
      const T an = p.grad[i];
      diff2 += (num - an) * (num - an);
      an2 += an * an;
      num2 += num * num;
      ++out.entries;
    }
    const T scale = std::sqrt(std::max(an2, num2));
    const T err = scale < floor ? std::sqrt(diff2) : std::sqrt(diff2) / scale;
    if (static_cast<double>(err) > out.worst) {
      out.worst = static_cast<double>(err);
      out.where = p.name;
    }
  }
  return out;
}

inline GradCheck check_gradients(const std::function<double()>& loss, const std::vector<Probe>& probes,
                                 double step = 1e-6) {
  return check_gradients<double>(loss, probes, step);
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo = -1, double hi = 1) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
std::vector<BasicProbe<T>> param_probes(const nn::ParamRefs<T>& params) {
  std::vector<BasicProbe<T>> out;
  for (auto* p : params) out.push_back({p->name, p->value.data(), p->grad.data(), p->size()});
  return out;
}

template <typename T>
void zero_grads(const nn::ParamRefs<T>& params) {
  for (auto* p : params) p->zero_grad();
}

// Mean cross-entropy evaluated entirely in T.
template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<std::uint16_t>& labels) {
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  T total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    T mx = logits(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(i, j));
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits(i, j) - mx);
    total += std::log(z) + mx - logits(i, labels[i]);
  }
  return total / static_cast<T>(b);
}

}  // namespace amlhp::testing
