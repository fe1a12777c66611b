#pragma once

#include <cstdint>
#include <vector>

#include "topogen/denoiser.hpp"

namespace topogen {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction.  step() applies one update from the gradients
/// currently held in the store; if any gradient is non-finite the update is
/// skipped entirely (moments untouched) and false is returned so the caller
/// can report it.
template <class T>
class Adam {
 public:
  Adam(const AdamConfig& cfg, const ParamStore<T>& params);

  bool step(ParamStore<T>& params);
  std::int64_t steps_taken() const { return steps_; }
  int skipped() const { return skipped_; }

 private:
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
  int skipped_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace topogen
