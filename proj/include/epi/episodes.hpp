#pragma once

#include <memory>
#include <utility>

#include "epi/envsim.hpp"
#include "epi/policy.hpp"

namespace epi {

// A playable episode over one EnvInstance. The seed fixes the initial state.
class EnvEpisode : public policy::Episode {
 public:
  EnvEpisode(env::Family family, env::EnvParams params, uint64_t seed, int env_id,
             int episode_limit = 0)
      : env_(family, std::move(params), episode_limit), seed_(seed), env_id_(env_id) {}

  policy::Vec reset() override { return env_.reset(seed_); }

  policy::Vec step(std::span<const double> action, double* reward, bool* done) override {
    env::StepResult res = env_.step(action);
    *reward = res.reward;
    *done = res.done;
    return std::move(res.obs);
  }

  int env_id() const override { return env_id_; }
  env::EnvInstance& env() { return env_; }

 private:
  env::EnvInstance env_;
  uint64_t seed_;
  int env_id_;
};

// Appends a fixed context vector (environment parameters, probe embedding,
// flattened interaction) to every observation.
class AugmentedEpisode : public policy::Episode {
 public:
  AugmentedEpisode(std::unique_ptr<policy::Episode> inner, policy::Vec context)
      : inner_(std::move(inner)), context_(std::move(context)) {}

  policy::Vec reset() override { return augment(inner_->reset()); }

  policy::Vec step(std::span<const double> action, double* reward, bool* done) override {
    return augment(inner_->step(action, reward, done));
  }

  int env_id() const override { return inner_->env_id(); }

 private:
  policy::Vec augment(policy::Vec obs) {
    obs.insert(obs.end(), context_.begin(), context_.end());
    return obs;
  }

  std::unique_ptr<policy::Episode> inner_;
  policy::Vec context_;
};

// Appends the last `lag` (state, action) pairs, zero-filled for t < lag.
class HistoryEpisode : public policy::Episode {
 public:
  HistoryEpisode(std::unique_ptr<policy::Episode> inner, int obs_dim, int act_dim, int lag = 10)
      : inner_(std::move(inner)), obs_dim_(obs_dim), act_dim_(act_dim), lag_(lag) {}

  policy::Vec reset() override {
    history_.assign(static_cast<size_t>(lag_) * (obs_dim_ + act_dim_), 0.0);
    last_obs_ = inner_->reset();
    return augment(last_obs_);
  }

  policy::Vec step(std::span<const double> action, double* reward, bool* done) override {
    // Push (s_t, a_t); most recent pair first.
    const int pair = obs_dim_ + act_dim_;
    history_.insert(history_.begin(), last_obs_.begin(), last_obs_.end());
    history_.insert(history_.begin() + obs_dim_, action.begin(), action.end());
    history_.resize(static_cast<size_t>(lag_) * pair);
    last_obs_ = inner_->step(action, reward, done);
    return augment(last_obs_);
  }

  int env_id() const override { return inner_->env_id(); }

 private:
  policy::Vec augment(const policy::Vec& obs) {
    policy::Vec out = obs;
    out.insert(out.end(), history_.begin(), history_.end());
    return out;
  }

  std::unique_ptr<policy::Episode> inner_;
  policy::Vec history_;
  policy::Vec last_obs_;
  int obs_dim_;
  int act_dim_;
  int lag_;
};

}  // namespace epi
