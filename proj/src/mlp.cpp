// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "dupfm/io.hpp"
#include "dupfm/kernels.hpp"

namespace dupfm {

namespace {

std::size_t rows(const RMatrix& m) { return static_cast<std::size_t>(m.rows()); }
std::size_t cols(const RMatrix& m) { return static_cast<std::size_t>(m.cols()); }

}  // namespace

MlpVf::MlpVf(std::size_t dim, const std::vector<std::size_t>& hidden, std::uint64_t seed)
    : dim_(dim) {
  if (dim == 0) throw std::invalid_argument("MlpVf: zero dim");
  Rng rng(seed);
  std::vector<std::size_t> widths{dim + kTauFeatures};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(dim);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(widths[l]);
    const auto out = static_cast<Eigen::Index>(widths[l + 1]);
    const double s = std::sqrt(1.0 / static_cast<double>(in));
    RMatrix w(out, in);
    for (Eigen::Index j = 0; j < in; ++j) {
      for (Eigen::Index i = 0; i < out; ++i) w(i, j) = s * rng.normal();
    }
    w_.push_back(std::move(w));
    b_.push_back(RVector::Zero(out));
  }
}

MlpVf::MlpVf(std::vector<RMatrix> weights, std::vector<RVector> biases)
    : w_(std::move(weights)), b_(std::move(biases)) {
  if (w_.empty() || w_.size() != b_.size()) throw std::invalid_argument("MlpVf: layer count");
  for (std::size_t l = 0; l < w_.size(); ++l) {
    if (w_[l].rows() != b_[l].size()) throw std::invalid_argument("MlpVf: bias shape");
    if (l > 0 && w_[l].cols() != w_[l - 1].rows()) throw std::invalid_argument("MlpVf: chain");
  }
  dim_ = rows(w_.back());
  if (cols(w_.front()) != dim_ + kTauFeatures) throw std::invalid_argument("MlpVf: input width");
}

RVector MlpVf::input_features(const RVector& x, double tau) {
  RVector in(x.size() + static_cast<Eigen::Index>(kTauFeatures));
  in.head(x.size()) = x;
  in(x.size()) = tau;
  in(x.size() + 1) = std::sin(std::numbers::pi * tau);
  in(x.size() + 2) = std::cos(std::numbers::pi * tau);
  return in;
}

RVector MlpVf::velocity(const RVector& x, double tau) const {
  if (static_cast<std::size_t>(x.size()) != dim_) throw std::invalid_argument("MlpVf: input dim");
  RVector a = input_features(x, tau);
  for (std::size_t l = 0; l < w_.size(); ++l) {
    RVector z(w_[l].rows());
    kernels::gemv_n(w_[l].data(), rows(w_[l]), cols(w_[l]), a.data(), z.data());
    z += b_[l];
    if (l + 1 < w_.size()) z = z.array().tanh().matrix();
    a = std::move(z);
  }
  return a;
}

std::vector<std::size_t> MlpVf::widths() const {
  std::vector<std::size_t> out{cols(w_.front())};
  for (const auto& w : w_) out.push_back(rows(w));
  return out;
}

std::size_t MlpVf::n_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < w_.size(); ++l) n += static_cast<std::size_t>(w_[l].size() + b_[l].size());
  return n;
}

RVector MlpVf::params() const {
  RVector p(static_cast<Eigen::Index>(n_params()));
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    p.segment(o, w_[l].size()) = w_[l].reshaped();
    o += w_[l].size();
    p.segment(o, b_[l].size()) = b_[l];
    o += b_[l].size();
  }
  return p;
}

void MlpVf::set_params(const RVector& p) {
  if (static_cast<std::size_t>(p.size()) != n_params()) throw std::invalid_argument("set_params");
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    w_[l].reshaped() = p.segment(o, w_[l].size());
    o += w_[l].size();
    b_[l] = p.segment(o, b_[l].size());
    o += b_[l].size();
  }
}

CfmBatch draw_cfm_batch(const std::vector<RVector>& data, std::size_t batch, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("draw_cfm_batch: empty dataset");
  const Eigen::Index d = data.front().size();
  CfmBatch b{RMatrix(d, static_cast<Eigen::Index>(batch)), RMatrix(d, static_cast<Eigen::Index>(batch)),
             RVector(static_cast<Eigen::Index>(batch))};
  for (std::size_t j = 0; j < batch; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    b.x0.col(jj) = data[rng.next() % data.size()];
    b.x1.col(jj) = rng.normal_vector(d);
    b.tau(jj) = rng.uniform();
  }
  return b;
}

double cfm_loss(const MlpVf& net, const CfmBatch& batch, RVector* grad) {
  const auto& w = net.weights();
  const auto& bias = net.biases();
  const std::size_t n_layers = w.size();
  const auto n = static_cast<std::size_t>(batch.tau.size());
  if (n == 0) throw std::invalid_argument("cfm_loss: empty batch");

  std::vector<RMatrix> gw;
  std::vector<RVector> gb;
  if (grad != nullptr) {
    for (std::size_t l = 0; l < n_layers; ++l) {
      gw.push_back(RMatrix::Zero(w[l].rows(), w[l].cols()));
      gb.push_back(RVector::Zero(bias[l].size()));
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  std::vector<RVector> acts(n_layers + 1);
  for (std::size_t j = 0; j < n; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double tau = batch.tau(jj);
    const RVector xt = (1.0 - tau) * batch.x0.col(jj) + tau * batch.x1.col(jj);
    const RVector target = batch.x1.col(jj) - batch.x0.col(jj);
    acts[0] = MlpVf::input_features(xt, tau);
    for (std::size_t l = 0; l < n_layers; ++l) {
      RVector z(w[l].rows());
      kernels::gemv_n(w[l].data(), rows(w[l]), cols(w[l]), acts[l].data(), z.data());
      z += bias[l];
      if (l + 1 < n_layers) z = z.array().tanh().matrix();
      acts[l + 1] = std::move(z);
    }
    const RVector err = acts[n_layers] - target;
    loss += err.squaredNorm() * inv_n;
    if (grad == nullptr) continue;
    RVector delta = 2.0 * inv_n * err;
    for (std::size_t l = n_layers; l-- > 0;) {
      kernels::ger(gw[l].data(), rows(w[l]), cols(w[l]), delta.data(), acts[l].data());
      gb[l] += delta;
      if (l == 0) break;
      RVector back(w[l].cols());
      kernels::gemv_t(w[l].data(), rows(w[l]), cols(w[l]), delta.data(), back.data());
      delta = back.array() * (1.0 - acts[l].array().square());
    }
  }
  if (grad != nullptr) {
    grad->resize(static_cast<Eigen::Index>(net.n_params()));
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      grad->segment(o, gw[l].size()) = gw[l].reshaped();
      o += gw[l].size();
      grad->segment(o, gb[l].size()) = gb[l];
      o += gb[l].size();
    }
  }
  return loss;
}

CfmTrainResult cfm_train(const std::vector<RVector>& data, const MlpVf& net,
                         const CfmTrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("cfm_train: empty dataset");
  if (static_cast<std::size_t>(data.front().size()) != net.dim()) {
    throw std::invalid_argument("cfm_train: data dim does not match net");
  }
  Rng rng(cfg.seed);
  CfmTrainResult res{net, 0.0, {}};
  RVector p = net.params();
  RVector m = RVector::Zero(p.size());
  RVector v = RVector::Zero(p.size());
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  if (cfg.steps == 0) {
    res.final_loss = cfm_loss(net, draw_cfm_batch(data, cfg.batch, rng));
    return res;
  }
  RVector g;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const CfmBatch batch = draw_cfm_batch(data, cfg.batch, rng);
    const double loss = cfm_loss(res.net, batch, &g);
    if (!std::isfinite(loss) || !g.allFinite()) {
      std::ostringstream os;
      os << "cfm_train diverged at step " << step << " (loss " << loss << ", lr " << cfg.lr << ")";
      throw NumericalError(os.str());
    }
    res.loss_history.push_back(loss);
    const double lr = cfg.cosine_decay
                          ? 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step - 1) /
                                                            static_cast<double>(cfg.steps)))
                          : cfg.lr;
    if (cfg.optimizer == Optimizer::kSgd) {
      p -= lr * g;
    } else {
      m = kB1 * m + (1.0 - kB1) * g;
      v = kB2 * v + (1.0 - kB2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(kB1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kB2, static_cast<double>(step));
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    }
    res.net.set_params(p);
    res.final_loss = loss;
    if (cfg.on_checkpoint &&
        std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), step) != cfg.checkpoints.end()) {
      cfg.on_checkpoint(step, res.net);
    }
  }
  return res;
}

void save_checkpoint(const std::filesystem::path& path, const MlpVf& net,
                     const MlpCheckpointInfo& info) {
  nlohmann::json header;
  header["kind"] = "mlp_vf";
  header["schema"] = 1;
  header["widths"] = net.widths();
  header["activation"] = "tanh";
  header["tau_features"] = {"tau", "sin(pi tau)", "cos(pi tau)"};
  header["training_seed"] = info.training_seed;
  header["final_loss"] = info.final_loss;
  const RVector p = net.params();
  io::write_binary(path, header, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
}

MlpVf load_checkpoint(const std::filesystem::path& path, MlpCheckpointInfo* info) {
  auto [header, payload] = io::read_binary(path);
  if (header.value("kind", "") != "mlp_vf") throw ConfigError("not an mlp_vf checkpoint");
  if (header.value("activation", "") != "tanh") throw ConfigError("unsupported activation");
  const auto widths = header.at("widths").get<std::vector<std::size_t>>();
  if (widths.size() < 2) throw ConfigError("checkpoint: bad widths");
  std::vector<RMatrix> w;
  std::vector<RVector> b;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    w.push_back(RMatrix::Zero(static_cast<Eigen::Index>(widths[l + 1]), static_cast<Eigen::Index>(widths[l])));
    b.push_back(RVector::Zero(static_cast<Eigen::Index>(widths[l + 1])));
  }
  MlpVf net(std::move(w), std::move(b));
  if (payload.size() != net.n_params()) throw ConfigError("checkpoint: parameter count mismatch");
  net.set_params(Eigen::Map<const RVector>(payload.data(), static_cast<Eigen::Index>(payload.size())));
  if (info != nullptr) {
    info->training_seed = header.value("training_seed", std::uint64_t{0});
    info->final_loss = header.value("final_loss", 0.0);
  }
  return net;
}

}  // namespace dupfm
