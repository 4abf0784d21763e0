#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rapid/core/error.hpp"
#include "rapid/core/hash.hpp"
#include "rapid/core/rng.hpp"

namespace rapid::nn {

enum class Activation { tanh };
enum class OutputActivation { identity, bounded };

/// Architecture of a fully connected network. With `bounded` output the last
/// layer is squashed as `output_bound ⊙ tanh(z)`.
struct NetworkSpec {
  int input_dim = 1;
  std::vector<int> hidden{256, 256};
  int output_dim = 1;
  Activation activation = Activation::tanh;
  OutputActivation output_activation = OutputActivation::identity;
  Eigen::VectorXd output_bound;

  void validate() const {
    require(input_dim >= 1 && output_dim >= 1, errc::kShape, "network dims must be >= 1");
    for (int h : hidden) require(h >= 1, errc::kShape, "hidden widths must be >= 1");
    if (output_activation == OutputActivation::bounded) {
      require(output_bound.size() == output_dim, errc::kShape, "output_bound size must equal output_dim");
      require((output_bound.array() > 0.0).all() && output_bound.allFinite(), errc::kDomain,
              "output_bound entries must be positive and finite");
    }
  }

  int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
  int layer_in(int l) const { return l == 0 ? input_dim : hidden[l - 1]; }
  int layer_out(int l) const { return l == num_layers() - 1 ? output_dim : hidden[l]; }

  Eigen::Index param_count() const {
    Eigen::Index n = 0;
    for (int l = 0; l < num_layers(); ++l) n += static_cast<Eigen::Index>(layer_in(l)) * layer_out(l) + layer_out(l);
    return n;
  }

  std::uint64_t hash() const {
    Fnv1a h;
    h.u64(static_cast<std::uint64_t>(input_dim)).u64(hidden.size());
    for (int w : hidden) h.u64(static_cast<std::uint64_t>(w));
    h.u64(static_cast<std::uint64_t>(output_dim));
    h.u64(static_cast<std::uint64_t>(activation)).u64(static_cast<std::uint64_t>(output_activation));
    h.f64s({output_bound.data(), static_cast<std::size_t>(output_bound.size())});
    return h.value();
  }

  friend bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
    return a.input_dim == b.input_dim && a.hidden == b.hidden && a.output_dim == b.output_dim &&
           a.activation == b.activation && a.output_activation == b.output_activation &&
           a.output_bound.size() == b.output_bound.size() && a.output_bound == b.output_bound;
  }
};

/// Flat parameter storage. Layer l occupies [weight_offset, weight_offset + out*in)
/// as a column-major out×in matrix, followed by its bias of length out.
using ParamVector = Eigen::VectorXd;

struct LayerSlice {
  int in = 0;
  int out = 0;
  Eigen::Index weight_offset = 0;
  Eigen::Index bias_offset = 0;
};

inline std::vector<LayerSlice> layout(const NetworkSpec& spec) {
  std::vector<LayerSlice> slices;
  Eigen::Index off = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    LayerSlice s{spec.layer_in(l), spec.layer_out(l), off, 0};
    off += static_cast<Eigen::Index>(s.in) * s.out;
    s.bias_offset = off;
    off += s.out;
    slices.push_back(s);
  }
  return slices;
}

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using MatMap = Eigen::Map<Eigen::MatrixXd>;

inline ConstMatMap weight(const ParamVector& p, const LayerSlice& s) {
  return ConstMatMap(p.data() + s.weight_offset, s.out, s.in);
}
inline MatMap weight(ParamVector& p, const LayerSlice& s) { return MatMap(p.data() + s.weight_offset, s.out, s.in); }
inline auto bias(const ParamVector& p, const LayerSlice& s) { return p.segment(s.bias_offset, s.out); }
inline auto bias(ParamVector& p, const LayerSlice& s) { return p.segment(s.bias_offset, s.out); }

/// Weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)) (variance 1/fan_in), biases 0.
inline ParamVector init_params(const NetworkSpec& spec, Rng& rng, bool zero_final_layer = false) {
  spec.validate();
  ParamVector p = ParamVector::Zero(spec.param_count());
  const auto slices = layout(spec);
  for (std::size_t l = 0; l < slices.size(); ++l) {
    if (zero_final_layer && l + 1 == slices.size()) break;
    const double r = std::sqrt(3.0 / slices[l].in);
    std::uniform_real_distribution<double> u(-r, r);
    auto w = weight(p, slices[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
  }
  return p;
}

inline void check_params(const NetworkSpec& spec, const ParamVector& params) {
  require(params.size() == spec.param_count(), errc::kShape,
          "parameter vector has " + std::to_string(params.size()) + " entries, spec needs " +
              std::to_string(spec.param_count()));
}

/// Activations kept from a batched forward pass; columns are samples.
/// `layers[0]` is the input, `layers[l]` the post-activation output of hidden
/// layer l, and `pre_output` the last affine map before the output activation.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> layers;
  Eigen::MatrixXd pre_output;
  Eigen::MatrixXd output;
};

inline ForwardTrace trace_forward(const NetworkSpec& spec, const ParamVector& params, const Eigen::MatrixXd& input) {
  check_params(spec, params);
  require(input.rows() == spec.input_dim, errc::kShape,
          "input has " + std::to_string(input.rows()) + " rows, network expects " + std::to_string(spec.input_dim));
  require(input.allFinite(), errc::kNonFinite, "network input contains non-finite values");
  const auto slices = layout(spec);
  ForwardTrace tr;
  tr.layers.reserve(slices.size());
  tr.layers.push_back(input);
  for (std::size_t l = 0; l + 1 < slices.size(); ++l) {
    Eigen::MatrixXd z = weight(params, slices[l]) * tr.layers.back();
    z.colwise() += bias(params, slices[l]);
    tr.layers.push_back(z.array().tanh().matrix());
  }
  const auto& last = slices.back();
  tr.pre_output = weight(params, last) * tr.layers.back();
  tr.pre_output.colwise() += bias(params, last);
  if (spec.output_activation == OutputActivation::bounded)
    tr.output = (tr.pre_output.array().tanh().colwise() * spec.output_bound.array()).matrix();
  else
    tr.output = tr.pre_output;
  return tr;
}

inline Eigen::MatrixXd forward_batch(const NetworkSpec& spec, const ParamVector& params, const Eigen::MatrixXd& input) {
  return trace_forward(spec, params, input).output;
}

inline Eigen::VectorXd forward(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& input) {
  return trace_forward(spec, params, input).output.col(0);
}

/// Reverse pass for a recorded batch. `upstream` holds dL/d(output), one column
/// per sample. Parameter gradients are summed over the batch; input gradients
/// are per sample. Either output may be null.
inline void backward(const NetworkSpec& spec, const ParamVector& params, const ForwardTrace& tr,
                     const Eigen::MatrixXd& upstream, ParamVector* grad_params, Eigen::MatrixXd* grad_input) {
  require(upstream.rows() == spec.output_dim && upstream.cols() == tr.output.cols(), errc::kShape,
          "upstream gradient shape does not match network output");
  const auto slices = layout(spec);
  if (grad_params) {
    grad_params->setZero(spec.param_count());
  }

  Eigen::MatrixXd delta;
  if (spec.output_activation == OutputActivation::bounded) {
    const Eigen::ArrayXXd th = tr.pre_output.array().tanh();
    delta = (upstream.array().colwise() * spec.output_bound.array() * (1.0 - th.square())).matrix();
  } else {
    delta = upstream;
  }

  for (int l = static_cast<int>(slices.size()) - 1; l >= 0; --l) {
    const auto& s = slices[static_cast<std::size_t>(l)];
    const Eigen::MatrixXd& a_in = tr.layers[static_cast<std::size_t>(l)];
    if (grad_params) {
      weight(*grad_params, s).noalias() = delta * a_in.transpose();
      bias(*grad_params, s) = delta.rowwise().sum();
    }
    if (l == 0 && !grad_input) break;
    Eigen::MatrixXd back = weight(params, s).transpose() * delta;
    if (l == 0) {
      *grad_input = std::move(back);
      break;
    }
    delta = (back.array() * (1.0 - a_in.array().square())).matrix();
  }
}

inline ParamVector grad_params(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& input,
                               const Eigen::VectorXd& upstream) {
  const auto tr = trace_forward(spec, params, input);
  ParamVector g;
  backward(spec, params, tr, upstream, &g, nullptr);
  return g;
}

inline Eigen::VectorXd grad_input(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& input,
                                  const Eigen::VectorXd& upstream) {
  const auto tr = trace_forward(spec, params, input);
  Eigen::MatrixXd g;
  backward(spec, params, tr, upstream, nullptr, &g);
  return g.col(0);
}

/// Spec and parameters travelling together.
struct Network {
  NetworkSpec spec;
  ParamVector params;

  Eigen::MatrixXd operator()(const Eigen::MatrixXd& input) const { return forward_batch(spec, params, input); }
  std::uint64_t param_hash() const {
    return hash_doubles({params.data(), static_cast<std::size_t>(params.size())});
  }
};

inline Network make_network(const NetworkSpec& spec, Rng& rng, bool zero_final_layer = false) {
  return Network{spec, init_params(spec, rng, zero_final_layer)};
}

}  // namespace rapid::nn
