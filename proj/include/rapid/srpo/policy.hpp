#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "rapid/core/error.hpp"
#include "rapid/core/rng.hpp"
#include "rapid/diffusion/prior.hpp"
#include "rapid/diffusion/schedule.hpp"
#include "rapid/iql/critic.hpp"
#include "rapid/nn/adam.hpp"
#include "rapid/nn/mlp.hpp"
#include "rapid/world/encoder.hpp"
#include "rapid/world/vehicle.hpp"

namespace rapid::srpo {

/// Deterministic policy over normalized states and actions. The output is
/// `box ⊙ tanh(z)`, and the last layer starts at zero so the initial policy
/// returns the normalized action mean.
inline nn::Network make_policy(int state_dim, const Eigen::VectorXd& box, const std::vector<int>& hidden, Rng& rng) {
  nn::NetworkSpec spec;
  spec.input_dim = state_dim;
  spec.hidden = hidden;
  spec.output_dim = static_cast<int>(box.size());
  spec.output_activation = nn::OutputActivation::bounded;
  spec.output_bound = box;
  spec.validate();
  return nn::make_network(spec, rng, true);
}

struct SrpoHyper {
  double beta = 0.05;
  double learning_rate = 3e-4;
  int score_samples = 1;
  diffusion::TimeRange times;

  void validate() const {
    require(beta > 0.0, errc::kConfig, "srpo beta must be positive");
    require(score_samples >= 1, errc::kConfig, "score_samples must be >= 1");
    require(learning_rate > 0.0, errc::kConfig, "srpo learning rate must be positive");
    times.validate();
  }
};

/// Weighting of the score term over diffusion time. Uniform.
inline double omega(double) { return 1.0; }

/// Score regularizer -(1/beta) E_{t,eps}[omega(t) (eps_hat(alpha a + sigma eps | s, t) - eps)],
/// averaged over `samples` draws per column.
template <diffusion::NoisePredictor P>
Eigen::MatrixXd score_term(const P& prior, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a, double beta,
                           int samples, const diffusion::TimeRange& times, Rng& rng) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd t(a.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j) t[j] = uniform(rng, times.lo, times.hi);
    const Eigen::MatrixXd eps = standard_normal(rng, a.rows(), a.cols());
    Eigen::MatrixXd a_t(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      a_t.col(j) = diffusion::alpha(t[j]) * a.col(j) + diffusion::sigma(t[j]) * eps.col(j);
    const Eigen::MatrixXd diff = prior.predict(a_t, s, t) - eps;
    for (Eigen::Index j = 0; j < a.cols(); ++j) acc.col(j) += omega(t[j]) * diff.col(j);
  }
  return (-1.0 / (beta * samples)) * acc;
}

struct SrpoDiagnostics {
  double q_term_norm = 0.0;      // mean over the batch of ||dQ/da||
  double score_term_norm = 0.0;  // mean over the batch of the score term norm
  double mean_q = 0.0;           // mean min-Q of the current policy actions
  int dropped = 0;               // samples with a non-finite upstream vector
};

struct SrpoGradient {
  nn::ParamVector grad;  // ascent direction for the policy parameters
  SrpoDiagnostics diag;
};

/// Surrogate gradient for a batch of states. `q_grad(s, a)` returns an
/// iql::QGradient (min-Q values and dQ/da). Pass beta = +inf to drop the
/// score term.
template <diffusion::NoisePredictor P, class QGrad>
SrpoGradient srpo_gradient(const nn::Network& policy, const QGrad& q_grad, const P& prior, const Eigen::MatrixXd& s,
                           const SrpoHyper& h, Rng& rng) {
  require(s.cols() > 0, errc::kDomain, "empty batch");
  const auto tr = nn::trace_forward(policy.spec, policy.params, s);
  const Eigen::MatrixXd& a = tr.output;
  const iql::QGradient q = q_grad(s, a);
  Eigen::MatrixXd g_score = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  if (std::isfinite(h.beta)) g_score = score_term(prior, s, a, h.beta, h.score_samples, h.times, rng);

  SrpoGradient out;
  const double n = static_cast<double>(s.cols());
  Eigen::MatrixXd up = q.grad + g_score;
  for (Eigen::Index j = 0; j < up.cols(); ++j) {
    if (!up.col(j).allFinite()) {
      up.col(j).setZero();
      ++out.diag.dropped;
      continue;
    }
    out.diag.q_term_norm += q.grad.col(j).norm() / n;
    out.diag.score_term_norm += g_score.col(j).norm() / n;
  }
  out.diag.mean_q = q.value.mean();
  nn::backward(policy.spec, policy.params, tr, up / n, &out.grad, nullptr);
  return out;
}

/// One ascent step on the policy only.
template <diffusion::NoisePredictor P, class QGrad>
SrpoDiagnostics srpo_update(nn::Network& policy, nn::OptimizerState& opt, const QGrad& q_grad, const P& prior,
                            const Eigen::MatrixXd& s, const SrpoHyper& h, Rng& rng) {
  auto g = srpo_gradient(policy, q_grad, prior, s, h, rng);
  nn::adam_step(opt, policy.params, g.grad, nn::Direction::maximize);
  return g.diag;
}

/// Step against a learned critic and prior, asserting neither changes.
inline SrpoDiagnostics srpo_step(nn::Network& policy, nn::OptimizerState& opt, const iql::CriticBundle& critic,
                                 const diffusion::Denoiser& prior, const Eigen::MatrixXd& s, const SrpoHyper& h,
                                 Rng& rng) {
  const auto critic_before = critic.hash();
  const auto prior_before = prior.net.param_hash();
  const auto q_grad = [&](const Eigen::MatrixXd& ss, const Eigen::MatrixXd& aa) {
    return iql::min_q_action_grad(critic, ss, aa);
  };
  const auto d = srpo_update(policy, opt, q_grad, prior, s, h, rng);
  require(critic.hash() == critic_before, errc::kHashMismatch, "critic parameters changed during policy extraction");
  require(prior.net.param_hash() == prior_before, errc::kHashMismatch,
          "prior parameters changed during policy extraction");
  return d;
}

struct Extraction {
  nn::Network policy;
  std::vector<SrpoDiagnostics> log;  // one entry per step
};

/// Starts from `init` and runs `steps` srpo_steps on minibatches of `states`
/// with a fresh optimizer. Zero steps return `init` unchanged.
inline Extraction extract_policy(const Eigen::MatrixXd& states, const iql::CriticBundle& critic,
                                 const diffusion::Denoiser& prior, nn::Network init, const SrpoHyper& h, int steps,
                                 int batch, Rng& rng) {
  h.validate();
  require(steps >= 0 && batch >= 1, errc::kConfig, "extraction needs steps >= 0 and batch >= 1");
  require(states.cols() > 0, errc::kDomain, "no states to extract on");
  const auto a_dim = init.spec.output_dim;
  require(init.spec.input_dim == states.rows() && critic.state_dim == states.rows() &&
              prior.state_dim == states.rows(),
          errc::kShape, "policy, critic, prior and dataset disagree on the state dimension");
  require(critic.action_dim == a_dim && prior.action_dim == a_dim, errc::kShape,
          "policy, critic and prior disagree on the action dimension");
  Extraction out{std::move(init), {}};
  auto opt = nn::OptimizerState::for_params(out.policy.params.size(), h.learning_rate);
  std::uniform_int_distribution<Eigen::Index> pick(0, states.cols() - 1);
  Eigen::MatrixXd s(states.rows(), batch);
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < batch; ++j) s.col(j) = states.col(pick(rng));
    out.log.push_back(srpo_step(out.policy, opt, critic, prior, s, h, rng));
  }
  return out;
}

/// Mean online min-Q of the policy's actions over `states`.
inline double mean_policy_q(const nn::Network& policy, const iql::CriticBundle& critic, const Eigen::MatrixXd& states) {
  return iql::min_q(critic, states, policy(states), false).mean();
}

/// Policy plus the normalization it was trained under.
struct DeployedPolicy {
  nn::Network net;
  world::FeatureStats state_stats;
  world::FeatureStats action_stats;
};

/// One forward pass: encode, act, de-normalize, map to world poses and pull
/// the result onto the per-step displacement bound.
inline world::Trajectory plan(const DeployedPolicy& p, const world::SceneContext& scene, const world::WorldConfig& wc) {
  const auto enc = world::encode_state(scene, wc, p.state_stats);
  const Eigen::VectorXd a = p.action_stats.denormalize(nn::forward(p.net.spec, p.net.params, enc.features));
  const auto origin = world::pose_of(scene.ego());
  return world::clamp_feasible(world::action_to_trajectory(a, origin, wc.dt), origin, wc);
}

}  // namespace rapid::srpo
