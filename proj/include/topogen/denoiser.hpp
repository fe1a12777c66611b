#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "topogen/tensor.hpp"

namespace topogen {

/// Named parameters in a fixed creation order; the order defines the
/// checkpoint blob layout.
template <class T>
class ParamStore {
 public:
  nn::Parameter<T>& add(const std::string& name, const nn::Shape& shape);
  nn::Parameter<T>& get(const std::string& name);
  const nn::Parameter<T>& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t count() const { return params_.size(); }
  nn::Parameter<T>& at(std::size_t i) { return *params_[i]; }
  const nn::Parameter<T>& at(std::size_t i) const { return *params_[i]; }

  std::size_t total_size() const;
  void zero_grads();
  bool grads_finite() const;
  double grad_norm() const;  // L2 over all parameters

 private:
  // unique_ptr keeps addresses stable; tapes bind raw Parameter pointers.
  std::vector<std::unique_ptr<nn::Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Architecture of the noise-prediction UNet.
struct DenoiserConfig {
  int image_size = 32;
  int in_channels = 1;
  int base_channels = 32;
  std::vector<int> channel_mult = {1, 2, 4};  // one entry per resolution level
  int blocks_per_level = 1;
  int emb_dim = 128;  // timestep/count embedding width
  int c_max = 10;     // embedding rows for the count condition (c in 1..c_max)
  int num_classes = 0;  // optional class condition; 0 disables
  int groups = 8;       // GroupNorm groups
  int T = 1000;         // valid timestep range for inputs

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

/// Conditional noise predictor eps_theta(x_t, t, c [, class]).
///
/// Layout: stem conv, then per level `blocks_per_level` residual blocks and
/// a 2x average-pool between levels; the decoder mirrors this with nearest
/// upsampling and additive skip connections; a GroupNorm+SiLU+conv head
/// (zero-initialized, so the untrained model predicts zero noise).  Each
/// residual block is GN-SiLU-conv twice, with the summed condition
/// embedding injected between the convs as a per-(sample, channel) bias.
///
/// Conditioning: sinusoidal timestep features and a learned embedding row
/// per count value, each passed through its own 2-layer MLP and summed
/// (plus a learned class embedding row when enabled), so every block sees
/// both the noise level and the target structure count.
template <class T>
class Denoiser {
 public:
  explicit Denoiser(const DenoiserConfig& cfg);  // zero-initialized params

  /// Fan-in-scaled uniform init for convs/linears, unit GroupNorm scales,
  /// zero head.  Deterministic in (cfg, seed).
  static Denoiser random_init(const DenoiserConfig& cfg, std::uint64_t seed);

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Build the forward graph; returns the predicted-noise node, shape
  /// [N, in_channels, image_size, image_size].  t, c and (when class
  /// conditioning is on) class_ids carry one entry per sample and are
  /// range-checked.
  typename nn::Tape<T>::Ref forward(nn::Tape<T>& tape, typename nn::Tape<T>::Ref x_t,
                                    const std::vector<int>& t, const std::vector<int>& c,
                                    const std::vector<int>& class_ids = {}) const;

  /// Inference convenience: forward one batch and copy out the values.
  std::vector<T> predict_eps(const std::vector<T>& x_t, int n, const std::vector<int>& t,
                             const std::vector<int>& c,
                             const std::vector<int>& class_ids = {}) const;

 private:
  DenoiserConfig cfg_;
  ParamStore<T> params_;

  void build_params();
};

/// Checkpoint file: magic "TDNC", u32 version, u32 header length, JSON
/// header {config, params: [{name, shape}]}, then float32 blobs in header
/// order.  Loading rebuilds the model from the embedded config and fails
/// (ValidationError) if the parameter manifest does not match it.
template <class T>
void save_checkpoint(const Denoiser<T>& model, const std::string& path);
template <class T>
Denoiser<T> load_checkpoint(const std::string& path);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Denoiser<float>;
extern template class Denoiser<double>;
extern template void save_checkpoint<float>(const Denoiser<float>&, const std::string&);
extern template void save_checkpoint<double>(const Denoiser<double>&, const std::string&);
extern template Denoiser<float> load_checkpoint<float>(const std::string&);
extern template Denoiser<double> load_checkpoint<double>(const std::string&);

}  // namespace topogen
