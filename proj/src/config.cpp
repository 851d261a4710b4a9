// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "dupfm/common.hpp"

namespace dupfm {

namespace {

using nlohmann::json;

// Reads optional fields from one JSON object and rejects keys it was never asked about.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
    }
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

void ExperimentConfig::validate() const {
  try {
    dims.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (sweep.csnr_db.empty() || sweep.cbr.empty() || sweep.alpha.empty()) {
    throw ConfigError("sweep axes must be nonempty");
  }
  for (double c : sweep.cbr) {
    if (!(c > 0.0)) throw ConfigError("cbr must be > 0");
  }
  if (pilots.schemes.empty()) throw ConfigError("pilots.schemes must be nonempty");
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (!(source_prior.intrinsic_fraction > 0.0 && source_prior.intrinsic_fraction <= 1.0)) {
    throw ConfigError("source_prior.intrinsic_fraction must lie in (0, 1]");
  }
  if (source_prior.n_components < 1) throw ConfigError("source_prior.n_components must be >= 1");
  if (!(bcrb.eps > 0.0 && bcrb.eps < 1.0)) throw ConfigError("bcrb.eps must lie in (0, 1)");
  if (pfm.tune_grid.empty()) throw ConfigError("pfm.tune_grid must be nonempty");
  if (!(encoder.overflow_factor >= 1.0)) throw ConfigError("encoder.overflow_factor must be >= 1");
  if (calibration_blocks < 1) throw ConfigError("calibration_blocks must be >= 1");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  {
    Section top(j, "config");
    if (const json* d = top.child("dims")) {
      Section s(*d, "dims");
      s.get("n_f", c.dims.n_f);
      s.get("n_t", c.dims.n_t);
      s.get("n_r", c.dims.n_r);
      s.get("t_s", c.dims.t_s);
      s.get("power_p", c.dims.power_p);
    }
    if (const json* d = top.child("channel_prior")) {
      Section s(*d, "channel_prior");
      s.get("freq_corr", c.channel_prior.freq_corr);
      s.get("rx_corr", c.channel_prior.rx_corr);
      s.get("rician_k", c.channel_prior.rician_k);
      s.get("rank", c.channel_prior.rank);
      s.get("seed", c.channel_prior.seed);
    }
    if (const json* d = top.child("source_prior")) {
      Section s(*d, "source_prior");
      s.get("intrinsic_fraction", c.source_prior.intrinsic_fraction);
      s.get("offset", c.source_prior.offset);
      s.get("n_components", c.source_prior.n_components);
      s.get("seed", c.source_prior.seed);
    }
    if (const json* d = top.child("encoder")) {
      Section s(*d, "encoder");
      s.get("seed", c.encoder.seed);
      s.get("overflow_factor", c.encoder.overflow_factor);
    }
    if (const json* d = top.child("pilots")) {
      Section s(*d, "pilots");
      std::vector<std::string> names;
      s.get("schemes", names);
      if (d->contains("schemes")) {
        c.pilots.schemes.clear();
        for (const auto& n : names) c.pilots.schemes.push_back(parse_pilot_kind(n));
      }
      s.get("pilot_power_fraction", c.pilots.pilot_power_fraction);
      s.get("seed", c.pilots.seed);
    }
    if (const json* d = top.child("pfm")) {
      Section s(*d, "pfm");
      s.get("delta_tau", c.pfm.delta_tau);
      s.get("beta_h", c.pfm.beta_h);
      s.get("beta_s", c.pfm.beta_s);
      s.get("normalize_beta", c.pfm.normalize_beta);
      s.get("n_average", c.pfm.n_average);
      s.get("tune_beta", c.pfm.tune_beta);
      s.get("tune_grid", c.pfm.tune_grid);
      s.get("tune_trials", c.pfm.tune_trials);
      s.get("channel_vf_checkpoint", c.pfm.channel_vf_checkpoint);
      s.get("source_vf_checkpoint", c.pfm.source_vf_checkpoint);
    }
    if (const json* d = top.child("sweep")) {
      Section s(*d, "sweep");
      s.get("csnr_db", c.sweep.csnr_db);
      s.get("cbr", c.sweep.cbr);
      s.get("alpha", c.sweep.alpha);
    }
    if (const json* d = top.child("bcrb")) {
      Section s(*d, "bcrb");
      s.get("eps", c.bcrb.eps);
      s.get("n_fim_samples", c.bcrb.n_fim_samples);
      s.get("n_prior_samples", c.bcrb.n_prior_samples);
    }
    if (const json* d = top.child("train_prior")) {
      Section s(*d, "train_prior");
      s.get("target", c.train_prior.target);
      s.get("hidden", c.train_prior.hidden);
      s.get("steps", c.train_prior.steps);
      s.get("lr", c.train_prior.lr);
      s.get("batch", c.train_prior.batch);
      s.get("n_data", c.train_prior.n_data);
      s.get("eps", c.train_prior.eps);
    }
    top.get("n_trials", c.n_trials);
    top.get("seed", c.seed);
    top.get("workers", c.workers);
    top.get("calibration_blocks", c.calibration_blocks);
    top.get("run_baselines", c.run_baselines);
    top.get("output", c.output);
  }
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["dims"] = {{"n_f", c.dims.n_f}, {"n_t", c.dims.n_t}, {"n_r", c.dims.n_r},
               {"t_s", c.dims.t_s}, {"power_p", c.dims.power_p}};
  j["channel_prior"] = {{"freq_corr", c.channel_prior.freq_corr},
                        {"rx_corr", c.channel_prior.rx_corr},
                        {"rician_k", c.channel_prior.rician_k},
                        {"rank", c.channel_prior.rank},
                        {"seed", c.channel_prior.seed}};
  j["source_prior"] = {{"intrinsic_fraction", c.source_prior.intrinsic_fraction},
                       {"offset", c.source_prior.offset},
                       {"n_components", c.source_prior.n_components},
                       {"seed", c.source_prior.seed}};
  j["encoder"] = {{"seed", c.encoder.seed}, {"overflow_factor", c.encoder.overflow_factor}};
  std::vector<std::string> names;
  for (auto k : c.pilots.schemes) names.push_back(to_string(k));
  j["pilots"] = {{"schemes", names},
                 {"pilot_power_fraction", c.pilots.pilot_power_fraction},
                 {"seed", c.pilots.seed}};
  j["pfm"] = {{"delta_tau", c.pfm.delta_tau},
              {"beta_h", c.pfm.beta_h},
              {"beta_s", c.pfm.beta_s},
              {"normalize_beta", c.pfm.normalize_beta},
              {"n_average", c.pfm.n_average},
              {"tune_beta", c.pfm.tune_beta},
              {"tune_grid", c.pfm.tune_grid},
              {"tune_trials", c.pfm.tune_trials},
              {"channel_vf_checkpoint", c.pfm.channel_vf_checkpoint},
              {"source_vf_checkpoint", c.pfm.source_vf_checkpoint}};
  j["sweep"] = {{"csnr_db", c.sweep.csnr_db}, {"cbr", c.sweep.cbr}, {"alpha", c.sweep.alpha}};
  j["bcrb"] = {{"eps", c.bcrb.eps},
               {"n_fim_samples", c.bcrb.n_fim_samples},
               {"n_prior_samples", c.bcrb.n_prior_samples}};
  j["train_prior"] = {{"target", c.train_prior.target}, {"hidden", c.train_prior.hidden},
                      {"steps", c.train_prior.steps},   {"lr", c.train_prior.lr},
                      {"batch", c.train_prior.batch},   {"n_data", c.train_prior.n_data},
                      {"eps", c.train_prior.eps}};
  j["n_trials"] = c.n_trials;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["calibration_blocks"] = c.calibration_blocks;
  j["run_baselines"] = c.run_baselines;
  j["output"] = c.output;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& c) {
  json j = config_to_json(c);
  j.erase("workers");  // does not affect results
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dupfm
