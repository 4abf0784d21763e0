#pragma once

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "rapid/core/error.hpp"
#include "rapid/core/hash.hpp"
#include "rapid/core/rng.hpp"
#include "rapid/nn/adam.hpp"
#include "rapid/nn/mlp.hpp"

namespace rapid::iql {

struct CriticHyper {
  double tau = 0.9;
  double gamma = 0.99;
  double beta_awr = 3.0;
  double awr_clip = 100.0;
  double polyak = 0.005;
  double lr_value = 3e-4;
  double lr_q = 3e-4;
  double lr_policy = 3e-4;

  void validate() const {
    require(tau > 0.5 && tau < 1.0, errc::kConfig, "expectile tau must lie in (0.5, 1)");
    require(gamma >= 0.0 && gamma < 1.0, errc::kConfig, "discount gamma must lie in [0, 1)");
    require(beta_awr >= 0.0 && awr_clip > 0.0, errc::kConfig, "beta_awr must be >= 0 and awr_clip > 0");
    require(polyak > 0.0 && polyak <= 1.0, errc::kConfig, "polyak rate must lie in (0, 1]");
    require(lr_value > 0 && lr_q > 0 && lr_policy > 0, errc::kConfig, "learning rates must be positive");
  }
};

/// Value net V(s), twin Q(s, a) nets and their Polyak-averaged targets.
struct CriticBundle {
  int state_dim = 0;
  int action_dim = 0;
  nn::Network value;
  nn::Network q1, q2;
  nn::ParamVector q1_target, q2_target;
  nn::OptimizerState value_opt, q1_opt, q2_opt;
  std::int64_t skipped_steps = 0;

  std::uint64_t value_hash() const { return value.param_hash(); }
  std::uint64_t q_hash() const {
    Fnv1a h;
    for (const auto* p : {&q1.params, &q2.params, &q1_target, &q2_target})
      h.f64s({p->data(), static_cast<std::size_t>(p->size())});
    return h.value();
  }
  std::uint64_t hash() const { return Fnv1a{}.u64(value_hash()).u64(q_hash()).value(); }
};

inline CriticBundle make_critic(int state_dim, int action_dim, const std::vector<int>& hidden, const CriticHyper& h,
                                Rng& rng) {
  nn::NetworkSpec vs;
  vs.input_dim = state_dim;
  vs.hidden = hidden;
  vs.output_dim = 1;
  nn::NetworkSpec qs = vs;
  qs.input_dim = state_dim + action_dim;
  CriticBundle b;
  b.state_dim = state_dim;
  b.action_dim = action_dim;
  b.value = nn::make_network(vs, rng);
  b.q1 = nn::make_network(qs, rng);
  b.q2 = nn::make_network(qs, rng);
  b.q1_target = b.q1.params;
  b.q2_target = b.q2.params;
  b.value_opt = nn::OptimizerState::for_params(b.value.params.size(), h.lr_value);
  b.q1_opt = nn::OptimizerState::for_params(b.q1.params.size(), h.lr_q);
  b.q2_opt = nn::OptimizerState::for_params(b.q2.params.size(), h.lr_q);
  return b;
}

inline Eigen::MatrixXd state_action(const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
  require(s.cols() == a.cols(), errc::kShape, "state and action batch sizes differ");
  Eigen::MatrixXd x(s.rows() + a.rows(), s.cols());
  x.topRows(s.rows()) = s;
  x.bottomRows(a.rows()) = a;
  return x;
}

/// |tau - 1[u < 0]| * u^2
inline double expectile_loss(double u, double tau) {
  const double w = u < 0.0 ? 1.0 - tau : tau;
  return w * u * u;
}

inline Eigen::VectorXd value_of(const CriticBundle& b, const Eigen::MatrixXd& s) {
  return b.value(s).row(0).transpose();
}

/// Elementwise min of the twin Qs, from the target copies or the online nets.
inline Eigen::VectorXd min_q(const CriticBundle& b, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                             bool target) {
  const auto x = state_action(s, a);
  const Eigen::MatrixXd q1 = nn::forward_batch(b.q1.spec, target ? b.q1_target : b.q1.params, x);
  const Eigen::MatrixXd q2 = nn::forward_batch(b.q2.spec, target ? b.q2_target : b.q2.params, x);
  return q1.cwiseMin(q2).row(0).transpose();
}

struct QGradient {
  Eigen::VectorXd value;  // min(Q1, Q2)
  Eigen::MatrixXd grad;   // d min(Q1, Q2) / d a, one column per sample
};

/// Online min-Q and its action gradient (the branch that attains the min).
inline QGradient min_q_action_grad(const CriticBundle& b, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
  const auto x = state_action(s, a);
  const auto t1 = nn::trace_forward(b.q1.spec, b.q1.params, x);
  const auto t2 = nn::trace_forward(b.q2.spec, b.q2.params, x);
  const Eigen::Index n = a.cols();
  Eigen::MatrixXd u1 = Eigen::MatrixXd::Zero(1, n), u2 = Eigen::MatrixXd::Zero(1, n);
  QGradient out{Eigen::VectorXd(n), Eigen::MatrixXd()};
  for (Eigen::Index j = 0; j < n; ++j) {
    if (t1.output(0, j) <= t2.output(0, j)) {
      u1(0, j) = 1.0;
      out.value[j] = t1.output(0, j);
    } else {
      u2(0, j) = 1.0;
      out.value[j] = t2.output(0, j);
    }
  }
  Eigen::MatrixXd g1, g2;
  nn::backward(b.q1.spec, b.q1.params, t1, u1, nullptr, &g1);
  nn::backward(b.q2.spec, b.q2.params, t2, u2, nullptr, &g2);
  out.grad = (g1 + g2).bottomRows(a.rows());
  return out;
}

/// One step on V: residual u = min target Q(s, a) - V(s), mean expectile loss.
inline double train_value_step(CriticBundle& b, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                               const CriticHyper& h) {
  require(s.cols() > 0, errc::kDomain, "empty batch");
  const Eigen::VectorXd q = min_q(b, s, a, true);
  const auto tr = nn::trace_forward(b.value.spec, b.value.params, s);
  const double n = static_cast<double>(s.cols());
  Eigen::MatrixXd up(1, s.cols());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const double u = q[j] - tr.output(0, j);
    loss += expectile_loss(u, h.tau);
    up(0, j) = -2.0 * (u < 0.0 ? 1.0 - h.tau : h.tau) * u / n;
  }
  loss /= n;
  if (!std::isfinite(loss)) {
    ++b.skipped_steps;
    return loss;
  }
  nn::ParamVector g;
  nn::backward(b.value.spec, b.value.params, tr, up, &g, nullptr);
  if (!nn::adam_step(b.value_opt, b.value.params, g)) ++b.skipped_steps;
  return loss;
}

inline void polyak_update(nn::ParamVector& target, const nn::ParamVector& online, double rho) {
  target = (1.0 - rho) * target + rho * online;
}

/// Both Qs regress onto y = r + gamma (1 - done) V(s'); targets then track
/// the online nets. Returns the summed mean squared errors.
inline double train_q_step(CriticBundle& b, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                           const Eigen::VectorXd& r, const Eigen::MatrixXd& s_next, const Eigen::VectorXd& done,
                           const CriticHyper& h) {
  require(s.cols() > 0, errc::kDomain, "empty batch");
  require(r.size() == s.cols() && done.size() == s.cols() && s_next.cols() == s.cols(), errc::kShape,
          "batch fields disagree on size");
  const Eigen::VectorXd v_next = value_of(b, s_next);
  const Eigen::VectorXd y = r + h.gamma * (Eigen::VectorXd::Ones(r.size()) - done).cwiseProduct(v_next);
  const auto x = state_action(s, a);
  const double n = static_cast<double>(s.cols());
  double total = 0.0;
  bool ok = true;
  nn::ParamVector g1, g2;
  for (auto [net, opt, grad] : {std::tuple{&b.q1, &b.q1_opt, &g1}, std::tuple{&b.q2, &b.q2_opt, &g2}}) {
    const auto tr = nn::trace_forward(net->spec, net->params, x);
    const Eigen::RowVectorXd resid = tr.output.row(0) - y.transpose();
    total += resid.squaredNorm() / n;
    nn::backward(net->spec, net->params, tr, (2.0 / n) * resid, grad, nullptr);
    ok = ok && grad->allFinite();
  }
  if (!std::isfinite(total) || !ok) {
    ++b.skipped_steps;
    return total;
  }
  nn::adam_step(b.q1_opt, b.q1.params, g1);
  nn::adam_step(b.q2_opt, b.q2.params, g2);
  polyak_update(b.q1_target, b.q1.params, h.polyak);
  polyak_update(b.q2_target, b.q2.params, h.polyak);
  return total;
}

/// Advantage weights clamp(exp(beta (min target Q - V)), 0, clip).
inline Eigen::VectorXd awr_weights(const CriticBundle& b, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                                   const CriticHyper& h) {
  const Eigen::VectorXd adv = min_q(b, s, a, true) - value_of(b, s);
  return (h.beta_awr * adv.array()).exp().min(h.awr_clip).max(0.0).matrix();
}

/// One weighted behaviour-cloning step on the policy; the critic is only read.
inline double awr_pretrain_step(nn::Network& policy, nn::OptimizerState& opt, const CriticBundle& b,
                                const Eigen::MatrixXd& s, const Eigen::MatrixXd& a, const CriticHyper& h) {
  require(s.cols() > 0, errc::kDomain, "empty batch");
  const Eigen::VectorXd w = awr_weights(b, s, a, h);
  const auto tr = nn::trace_forward(policy.spec, policy.params, s);
  const Eigen::MatrixXd diff = tr.output - a;
  const double n = static_cast<double>(s.cols());
  const double loss = w.dot(diff.colwise().squaredNorm().transpose()) / n;
  if (!std::isfinite(loss)) {
    ++opt.skipped;
    return loss;
  }
  Eigen::MatrixXd up = diff;
  for (Eigen::Index j = 0; j < up.cols(); ++j) up.col(j) *= 2.0 * w[j] / n;
  nn::ParamVector g;
  nn::backward(policy.spec, policy.params, tr, up, &g, nullptr);
  nn::adam_step(opt, policy.params, g);
  return loss;
}

}  // namespace rapid::iql
