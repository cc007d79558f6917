#pragma once

// Adam with decoupled weight decay. Decay applies to matrices only (rank 2:
// projections and embeddings); gains and biases are left alone.

#include <vector>

#include "t3d/denoiser.hpp"

namespace t3d {

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global-norm clip; 0 disables

  void validate() const;
};

class AdamW {
 public:
  AdamW(AdamWConfig cfg, const DenoiserParams& params);

  // Applies one update from the accumulated gradients and returns their
  // global norm before clipping. lr_scale multiplies the learning rate.
  double step(DenoiserParams& params, double lr_scale = 1.0);

  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

double global_grad_norm(const DenoiserParams& params);

}  // namespace t3d
