#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rapid/core/binary_io.hpp"
#include "rapid/core/error.hpp"
#include "rapid/nn/adam.hpp"
#include "rapid/nn/mlp.hpp"

namespace rapid::nn {

// Layout (all integers and floats little-endian):
//   "RAPIDCKP" | u32 version | str kind | str metadata
//   u64 n_networks, then per network:
//     str name | spec descriptor | u64 n_params | f64[n_params]
//     u8 has_optimizer [| i64 step | f64 lr, beta1, beta2, eps | i64 skipped | f64[n] m | f64[n] v]
//   u64 n_arrays, then per array: str name | u64 len | f64[len]
// Strings are u64 length + bytes. `metadata` is free-form text (JSON by convention).
inline constexpr char kCheckpointMagic[8] = {'R', 'A', 'P', 'I', 'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedNetwork {
  std::string name;
  Network net;
  std::optional<OptimizerState> optimizer;
};

struct Checkpoint {
  std::string kind;
  std::string metadata;
  std::vector<NamedNetwork> networks;
  std::map<std::string, std::vector<double>> arrays;

  const NamedNetwork& network(const std::string& name) const {
    for (const auto& n : networks)
      if (n.name == name) return n;
    throw Error(errc::kFormat, "checkpoint of kind '" + kind + "' has no network named '" + name + "'");
  }
  const std::vector<double>& array(const std::string& name) const {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw Error(errc::kFormat, "checkpoint of kind '" + kind + "' has no array '" + name + "'");
    return it->second;
  }
};

namespace detail {

inline void write_spec(io::Writer& w, const NetworkSpec& s) {
  w.u64(static_cast<std::uint64_t>(s.input_dim));
  w.u64(s.hidden.size());
  for (int h : s.hidden) w.u64(static_cast<std::uint64_t>(h));
  w.u64(static_cast<std::uint64_t>(s.output_dim));
  w.u8(static_cast<std::uint8_t>(s.activation));
  w.u8(static_cast<std::uint8_t>(s.output_activation));
  w.u64(static_cast<std::uint64_t>(s.output_bound.size()));
  w.f64s({s.output_bound.data(), static_cast<std::size_t>(s.output_bound.size())});
}

inline NetworkSpec read_spec(io::Reader& r) {
  NetworkSpec s;
  s.input_dim = static_cast<int>(r.u64("spec.input_dim"));
  const auto nh = r.u64("spec.hidden_count");
  require(nh < 64, errc::kFormat, "implausible hidden layer count " + std::to_string(nh));
  s.hidden.resize(nh);
  for (auto& h : s.hidden) h = static_cast<int>(r.u64("spec.hidden"));
  s.output_dim = static_cast<int>(r.u64("spec.output_dim"));
  const auto act = r.u8("spec.activation");
  const auto out_act = r.u8("spec.output_activation");
  require(act == 0 && out_act <= 1, errc::kFormat, "unknown activation code in spec");
  s.activation = static_cast<Activation>(act);
  s.output_activation = static_cast<OutputActivation>(out_act);
  const auto nb = r.u64("spec.bound_len");
  require(nb <= r.remaining() / 8, errc::kFormat, "spec bound length exceeds file");
  s.output_bound.resize(static_cast<Eigen::Index>(nb));
  r.f64s({s.output_bound.data(), nb}, "spec.output_bound");
  s.validate();
  return s;
}

}  // namespace detail

inline io::Writer serialize(const Checkpoint& ck) {
  io::Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(ck.kind);
  w.str(ck.metadata);
  w.u64(ck.networks.size());
  for (const auto& n : ck.networks) {
    check_params(n.net.spec, n.net.params);
    w.str(n.name);
    detail::write_spec(w, n.net.spec);
    w.u64(static_cast<std::uint64_t>(n.net.params.size()));
    w.f64s({n.net.params.data(), static_cast<std::size_t>(n.net.params.size())});
    w.u8(n.optimizer ? 1 : 0);
    if (n.optimizer) {
      const auto& o = *n.optimizer;
      w.i64(o.step);
      w.f64(o.learning_rate);
      w.f64(o.beta1);
      w.f64(o.beta2);
      w.f64(o.epsilon);
      w.i64(o.skipped);
      w.f64s({o.first_moment.data(), static_cast<std::size_t>(o.first_moment.size())});
      w.f64s({o.second_moment.data(), static_cast<std::size_t>(o.second_moment.size())});
    }
  }
  w.u64(ck.arrays.size());
  for (const auto& [name, values] : ck.arrays) {
    w.str(name);
    w.u64(values.size());
    w.f64s(values);
  }
  return w;
}

inline Checkpoint deserialize(io::Reader& r) {
  char magic[8];
  r.raw(magic, sizeof magic, "magic");
  require(std::equal(magic, magic + 8, kCheckpointMagic), errc::kFormat, "bad checkpoint magic");
  const auto version = r.u32("version");
  require(version == kCheckpointVersion, errc::kFormat,
          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = r.str("kind");
  ck.metadata = r.str("metadata");
  const auto n_nets = r.u64("network count");
  require(n_nets < 1024, errc::kFormat, "implausible network count");
  for (std::uint64_t i = 0; i < n_nets; ++i) {
    NamedNetwork n;
    n.name = r.str("network name");
    n.net.spec = detail::read_spec(r);
    const auto np = r.u64("param count");
    require(static_cast<Eigen::Index>(np) == n.net.spec.param_count(), errc::kFormat,
            "network '" + n.name + "' param count disagrees with its spec");
    require(np <= r.remaining() / 8, errc::kFormat, "network '" + n.name + "' params truncated");
    n.net.params.resize(static_cast<Eigen::Index>(np));
    r.f64s({n.net.params.data(), np}, "params");
    if (r.u8("optimizer flag")) {
      OptimizerState o;
      o.step = r.i64("optimizer.step");
      o.learning_rate = r.f64("optimizer.lr");
      o.beta1 = r.f64("optimizer.beta1");
      o.beta2 = r.f64("optimizer.beta2");
      o.epsilon = r.f64("optimizer.eps");
      o.skipped = r.i64("optimizer.skipped");
      require(2 * np <= r.remaining() / 8, errc::kFormat, "optimizer moments truncated");
      o.first_moment.resize(static_cast<Eigen::Index>(np));
      o.second_moment.resize(static_cast<Eigen::Index>(np));
      r.f64s({o.first_moment.data(), np}, "optimizer.m");
      r.f64s({o.second_moment.data(), np}, "optimizer.v");
      n.optimizer = std::move(o);
    }
    ck.networks.push_back(std::move(n));
  }
  const auto n_arrays = r.u64("array count");
  for (std::uint64_t i = 0; i < n_arrays; ++i) {
    auto name = r.str("array name");
    const auto len = r.u64("array length");
    require(len <= r.remaining() / 8, errc::kFormat, "array '" + name + "' truncated");
    std::vector<double> v(len);
    r.f64s(v, "array values");
    ck.arrays.emplace(std::move(name), std::move(v));
  }
  require(r.remaining() == 0, errc::kFormat, "trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) { serialize(ck).save(path); }

inline Checkpoint load_checkpoint(const std::string& path) {
  auto r = io::Reader::from_file(path);
  return deserialize(r);
}

}  // namespace rapid::nn
