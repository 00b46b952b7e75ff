#ifndef GRES2NET_GRADCHECK_HPP
#define GRES2NET_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "gres2net/ops.hpp"

namespace gres2net {

// Central-finite-difference check of reverse-mode gradients.
//
// `f` must be a pure scalar-valued map of the `wrt` tensors (re-evaluating it
// after perturbing one coordinate must reflect that perturbation). Returns
// the maximum over all coordinates of
//   |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|).
template <class S>
double grad_check(const std::function<Tensor<S>()>& f, std::vector<Tensor<S>> wrt,
                  double eps = 1e-6) {
  GRES_CHECK(!wrt.empty(), "grad_check: nothing to differentiate");
  for (auto& t : wrt) {
    GRES_CHECK(t.requires_grad(), "grad_check: every wrt tensor must require grad");
    t.zero_grad();
  }
  {
    Tape<S> tape;
    Tensor<S> y = f();
    GRES_CHECK_SHAPE(y.numel() == 1, "grad_check: f must be scalar-valued");
    tape.backward(y);
  }
  double worst = 0.0;
  for (auto& t : wrt) {
    auto values = t.mutable_data();
    const auto grads = t.grad();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const S saved = values[i];
      values[i] = saved + static_cast<S>(eps);
      const double up = static_cast<double>(f().item());
      values[i] = saved - static_cast<S>(eps);
      const double down = static_cast<double>(f().item());
      values[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = static_cast<double>(grads.empty() ? S(0) : grads[i]);
      const double denom = std::max(1e-12, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, std::abs(ad - fd) / denom);
    }
  }
  return worst;
}

// Single-input form: checks d f(x) / d x.
template <class S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, Tensor<S> x,
                  double eps = 1e-6) {
  x.set_requires_grad(true);
  return grad_check<S>([&]() { return f(x); }, {x}, eps);
}

}  // namespace gres2net

#endif  // GRES2NET_GRADCHECK_HPP
