#include "topogen/optim.hpp"

#include <cmath>

#include "topogen/errors.hpp"

namespace topogen {

template <class T>
Adam<T>::Adam(const AdamConfig& cfg, const ParamStore<T>& params) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw ValidationError("adam: lr must be > 0");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    throw ValidationError("adam: betas must be in [0, 1)");
  m_.resize(params.count());
  v_.resize(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) {
    m_[i].assign(params.at(i).value.size(), T(0));
    v_[i].assign(params.at(i).value.size(), T(0));
  }
}

template <class T>
bool Adam<T>::step(ParamStore<T>& params) {
  if (params.count() != m_.size())
    throw ValidationError("adam: parameter store does not match optimizer state");
  if (!params.grads_finite()) {
    ++skipped_;
    return false;
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  for (std::size_t i = 0; i < params.count(); ++i) {
    nn::Parameter<T>& p = params.at(i);
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const T g = p.grad[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[k]) / bc1;
      const double vhat = static_cast<double>(v[k]) / bc2;
      p.value[k] -= static_cast<T>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
  return true;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace topogen
