#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "rapid/core/error.hpp"
#include "rapid/core/rng.hpp"
#include "rapid/diffusion/schedule.hpp"
#include "rapid/nn/adam.hpp"
#include "rapid/nn/mlp.hpp"

namespace rapid::diffusion {

/// Anything that predicts the injected noise for a batch: columns of `x_t`
/// and `s` are samples, `t` holds one time per column.
template <class P>
concept NoisePredictor = requires(const P& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& s,
                                  const Eigen::VectorXd& t) {
  { p.predict(x, s, t) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Learned noise predictor over [noisy action | state | time embedding].
struct Denoiser {
  nn::Network net;
  int action_dim = 0;
  int state_dim = 0;

  Eigen::MatrixXd inputs(const Eigen::MatrixXd& x, const Eigen::MatrixXd& s, const Eigen::VectorXd& t) const {
    require(x.rows() == action_dim && s.rows() == state_dim, errc::kShape, "denoiser input dims mismatch");
    require(x.cols() == s.cols() && x.cols() == t.size(), errc::kShape, "denoiser batch sizes differ");
    Eigen::MatrixXd in(action_dim + state_dim + kTimeEmbeddingDim, x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      in.col(j).head(action_dim) = x.col(j);
      in.col(j).segment(action_dim, state_dim) = s.col(j);
      in.col(j).tail(kTimeEmbeddingDim) = time_embedding(t[j]);
    }
    return in;
  }

  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, const Eigen::MatrixXd& s, const Eigen::VectorXd& t) const {
    return nn::forward_batch(net.spec, net.params, inputs(x, s, t));
  }
};

inline nn::NetworkSpec denoiser_spec(int action_dim, int state_dim, std::vector<int> hidden) {
  nn::NetworkSpec spec;
  spec.input_dim = action_dim + state_dim + kTimeEmbeddingDim;
  spec.hidden = std::move(hidden);
  spec.output_dim = action_dim;
  spec.validate();
  return spec;
}

/// Zero output layer: the untrained model predicts no noise.
inline Denoiser make_denoiser(int action_dim, int state_dim, std::vector<int> hidden, Rng& rng) {
  return {nn::make_network(denoiser_spec(action_dim, state_dim, std::move(hidden)), rng, true), action_dim,
          state_dim};
}

struct DenoiserTraining {
  int steps = 1000;
  int batch = 256;
  TimeRange times;
  double final_lr_fraction = 1.0;  // cosine decay to this fraction of the initial rate; 1 keeps it constant
};

struct NoisedBatch {
  Eigen::MatrixXd x_t, states, eps;
  Eigen::VectorXd t;
};

inline NoisedBatch draw_noised_batch(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions, int batch,
                                     const TimeRange& times, Rng& rng) {
  const Eigen::Index n = actions.cols();
  NoisedBatch b;
  b.states.resize(states.rows(), batch);
  b.x_t.resize(actions.rows(), batch);
  b.t.resize(batch);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (int j = 0; j < batch; ++j) {
    const Eigen::Index i = pick(rng);
    b.states.col(j) = states.col(i);
    b.x_t.col(j) = actions.col(i);
    b.t[j] = uniform(rng, times.lo, times.hi);
  }
  b.eps = standard_normal(rng, actions.rows(), batch);
  for (int j = 0; j < batch; ++j) b.x_t.col(j) = alpha(b.t[j]) * b.x_t.col(j) + sigma(b.t[j]) * b.eps.col(j);
  return b;
}

/// Mean over the batch of ||eps_hat - eps||^2 (summed over action dims).
inline double denoising_loss(const Denoiser& d, const NoisedBatch& b) {
  return (d.predict(b.x_t, b.states, b.t) - b.eps).colwise().squaredNorm().mean();
}

/// Minibatch epsilon-matching with Adam. Returns the per-step loss.
inline std::vector<double> train_denoiser(Denoiser& d, nn::OptimizerState& opt, const Eigen::MatrixXd& states,
                                          const Eigen::MatrixXd& actions, const DenoiserTraining& cfg, Rng& rng) {
  require(actions.cols() > 0 && actions.cols() == states.cols(), errc::kShape,
          "denoiser training needs a non-empty dataset with matching state/action counts");
  require(cfg.batch > 0 && cfg.steps >= 0, errc::kConfig, "batch must be positive and steps non-negative");
  require(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0, errc::kConfig,
          "final_lr_fraction must lie in (0, 1]");
  cfg.times.validate();
  const double lr0 = opt.learning_rate;
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    const double f = cfg.final_lr_fraction;
    opt.learning_rate = lr0 * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * step / cfg.steps)));
    const auto b = draw_noised_batch(states, actions, cfg.batch, cfg.times, rng);
    const auto tr = nn::trace_forward(d.net.spec, d.net.params, d.inputs(b.x_t, b.states, b.t));
    const Eigen::MatrixXd resid = tr.output - b.eps;
    losses.push_back(resid.colwise().squaredNorm().mean());
    nn::ParamVector g;
    nn::backward(d.net.spec, d.net.params, tr, (2.0 / cfg.batch) * resid, &g, nullptr);
    nn::adam_step(opt, d.net.params, g, nn::Direction::minimize);
  }
  opt.learning_rate = lr0;
  return losses;
}

/// Behaviour score estimate -eps(alpha a | s, t) / sigma at a small time.
template <NoisePredictor P>
Eigen::VectorXd score_estimate(const P& pred, const Eigen::VectorXd& a, const Eigen::VectorXd& s, double t_eval) {
  require(t_eval > 0.0 && t_eval <= 0.1, errc::kDomain, "score evaluation time must lie in (0, 0.1]");
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(1, t_eval);
  const Eigen::MatrixXd eps = pred.predict(alpha(t_eval) * a, s, t);
  return -eps.col(0) / sigma(t_eval);
}

/// Ancestral sampling on a uniform grid from t = 1 down to times.lo, one model
/// evaluation per grid point. Each step predicts x0, clamps it to [-box, box]
/// and re-noises to the next grid time; the last step returns the clamped x0.
/// Model times are capped at times.hi, where alpha is still positive.
template <NoisePredictor P>
Eigen::MatrixXd ddpm_sample_batch(const P& pred, const Eigen::MatrixXd& states, int n_steps, const Eigen::VectorXd& box,
                                  Rng& rng, const TimeRange& times = {}) {
  require(n_steps >= 1, errc::kDomain, "n_steps must be >= 1");
  times.validate();
  const Eigen::Index dim = box.size(), batch = states.cols();
  Eigen::MatrixXd x = standard_normal(rng, dim, batch);
  for (int i = 0; i < n_steps; ++i) {
    const double grid_t = n_steps == 1 ? times.lo : 1.0 - (1.0 - times.lo) * i / (n_steps - 1);
    const double t = std::min(grid_t, times.hi);
    const Eigen::MatrixXd eps = pred.predict(x, states, Eigen::VectorXd::Constant(batch, t));
    Eigen::MatrixXd x0 = (x - sigma(t) * eps) / alpha(t);
    for (Eigen::Index j = 0; j < batch; ++j) x0.col(j) = x0.col(j).cwiseMax(-box).cwiseMin(box);
    if (i + 1 == n_steps) return x0;

    const double s = 1.0 - (1.0 - times.lo) * (i + 1) / (n_steps - 1);
    const double a_t = alpha(t), s_t = sigma(t), a_s = alpha(s), s_s = sigma(s);
    const double a_ts = a_t / a_s;
    const double var_ts = std::max(s_t * s_t - a_ts * a_ts * s_s * s_s, 0.0);
    const double cx = a_ts * s_s * s_s / (s_t * s_t);
    const double c0 = a_s * var_ts / (s_t * s_t);
    x = cx * x + c0 * x0 + std::sqrt(var_ts) * standard_normal(rng, dim, batch);
  }
  return x;
}

template <NoisePredictor P>
Eigen::VectorXd ddpm_sample(const P& pred, const Eigen::VectorXd& state, int n_steps, const Eigen::VectorXd& box,
                            Rng& rng, const TimeRange& times = {}) {
  return ddpm_sample_batch(pred, Eigen::MatrixXd(state), n_steps, box, rng, times).col(0);
}

}  // namespace rapid::diffusion
