// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dupfm/flow.hpp"

namespace dupfm {

// MLP velocity field. Input is [x, tau, sin(pi tau), cos(pi tau)]; hidden layers use tanh,
// the output layer is affine.
class MlpVf final : public VelocityField {
 public:
  static constexpr std::size_t kTauFeatures = 3;

  MlpVf(std::size_t dim, const std::vector<std::size_t>& hidden, std::uint64_t seed);
  MlpVf(std::vector<RMatrix> weights, std::vector<RVector> biases);

  std::size_t dim() const override { return dim_; }
  RVector velocity(const RVector& x, double tau) const override;

  // Layer widths including input and output.
  std::vector<std::size_t> widths() const;
  std::size_t n_params() const;
  RVector params() const;
  void set_params(const RVector& p);

  const std::vector<RMatrix>& weights() const { return w_; }
  const std::vector<RVector>& biases() const { return b_; }

  static RVector input_features(const RVector& x, double tau);

 private:
  std::size_t dim_;
  std::vector<RMatrix> w_;
  std::vector<RVector> b_;
};

// Fixed minibatch for the conditional flow-matching loss. Column j is one sample.
struct CfmBatch {
  RMatrix x0;
  RMatrix x1;
  RVector tau;
};

CfmBatch draw_cfm_batch(const std::vector<RVector>& data, std::size_t batch, Rng& rng);

// Mean over the batch of || v(x(tau), tau) - (x1 - x0) ||^2. Gradient w.r.t. params() order.
double cfm_loss(const MlpVf& net, const CfmBatch& batch, RVector* grad = nullptr);

enum class Optimizer { kSgd, kAdam };

struct CfmTrainConfig {
  std::size_t steps = 1000;
  double lr = 1e-2;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kAdam;
  // Cosine decay of lr from its initial value to 0 over `steps`.
  bool cosine_decay = false;
  // Called after the listed steps with the current net.
  std::vector<std::size_t> checkpoints;
  std::function<void(std::size_t, const MlpVf&)> on_checkpoint;
};

struct CfmTrainResult {
  MlpVf net;
  double final_loss;
  std::vector<double> loss_history;
};

CfmTrainResult cfm_train(const std::vector<RVector>& data, const MlpVf& net,
                         const CfmTrainConfig& cfg);

struct MlpCheckpointInfo {
  std::uint64_t training_seed = 0;
  double final_loss = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const MlpVf& net,
                     const MlpCheckpointInfo& info);
MlpVf load_checkpoint(const std::filesystem::path& path, MlpCheckpointInfo* info = nullptr);

}  // namespace dupfm
