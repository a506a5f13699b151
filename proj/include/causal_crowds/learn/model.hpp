#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>

#include "causal_crowds/learn/features.hpp"
#include "causal_crowds/random.hpp"

namespace causal_crowds::learn {

struct ModelDims {
  int input = kInputDim;
  int hidden = 64;
  int latent = 32;
  int projection = 8;
  int output = kOutputDim;
  bool operator==(const ModelDims&) const = default;
};

/// Encoder W1, W2; projection head Wp; decoder Wd.
struct Params {
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b2;
  Eigen::MatrixXd Wp;
  Eigen::VectorXd bp;
  Eigen::MatrixXd Wd;
  Eigen::VectorXd bd;

  static Params zeros(const ModelDims& d) {
    Params p;
    p.W1 = Eigen::MatrixXd::Zero(d.hidden, d.input);
    p.b1 = Eigen::VectorXd::Zero(d.hidden);
    p.W2 = Eigen::MatrixXd::Zero(d.latent, d.hidden);
    p.b2 = Eigen::VectorXd::Zero(d.latent);
    p.Wp = Eigen::MatrixXd::Zero(d.projection, d.latent);
    p.bp = Eigen::VectorXd::Zero(d.projection);
    p.Wd = Eigen::MatrixXd::Zero(d.output, d.latent);
    p.bd = Eigen::VectorXd::Zero(d.output);
    return p;
  }

  ModelDims dims() const {
    return {static_cast<int>(W1.cols()), static_cast<int>(W1.rows()), static_cast<int>(W2.rows()),
            static_cast<int>(Wp.rows()), static_cast<int>(Wd.rows())};
  }

  template <class Fn>
  void for_each(Fn&& fn) {
    fn(W1);
    fn(b1);
    fn(W2);
    fn(b2);
    fn(Wp);
    fn(bp);
    fn(Wd);
    fn(bd);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    const_cast<Params*>(this)->for_each([&](auto& m) { fn(static_cast<const std::decay_t<decltype(m)>&>(m)); });
  }

  Eigen::Index size() const {
    Eigen::Index n = 0;
    for_each([&](const auto& m) { n += m.size(); });
    return n;
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(size());
    Eigen::Index at = 0;
    for_each([&](const auto& m) {
      v.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
      at += m.size();
    });
    return v;
  }

  static Params unflatten(const ModelDims& d, const Eigen::VectorXd& v) {
    Params p = zeros(d);
    if (v.size() != p.size()) throw Error(ErrorCode::DimensionMismatch, "parameter vector size mismatch");
    Eigen::Index at = 0;
    p.for_each([&](auto& m) {
      Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = v.segment(at, m.size());
      at += m.size();
    });
    return p;
  }

  bool operator==(const Params& o) const { return dims() == o.dims() && flatten() == o.flatten(); }
};

/// Glorot-uniform weights and zero biases; the decoder starts at zero so an
/// untrained model predicts constant velocity.
inline Params init_params(const ModelDims& d, std::uint64_t seed) {
  Params p = Params::zeros(d);
  Rng rng(hash_combine({seed, 0x70a7ull}));
  auto fill = [&](Eigen::MatrixXd& m) {
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  };
  fill(p.W1);
  fill(p.W2);
  fill(p.Wp);
  return p;
}

struct Forward {
  Eigen::VectorXd x;       // normalized input
  Eigen::VectorXd h;       // hidden activations
  Eigen::VectorXd z;       // latent
  Eigen::VectorXd p;       // projection
  Eigen::VectorXd y;       // predicted future, ego frame
};

inline Forward forward(const Params& w, const Eigen::VectorXd& x, const Eigen::VectorXd& cv) {
  Forward f;
  f.x = x;
  f.h = (w.W1 * x + w.b1).array().tanh().matrix();
  f.z = w.W2 * f.h + w.b2;
  f.p = (w.Wp * f.z + w.bp).array().tanh().matrix();
  f.y = cv + w.Wd * f.z + w.bd;
  return f;
}

/// Accumulates into `grad` the parameter gradient of a loss whose partials
/// with respect to this pass's outputs are dp and dy (either may be empty).
inline void backward(const Params& w, const Forward& f, const Eigen::VectorXd& dp, const Eigen::VectorXd& dy,
                     Params& grad) {
  Eigen::VectorXd dz = Eigen::VectorXd::Zero(f.z.size());
  if (dy.size() > 0) {
    grad.Wd.noalias() += dy * f.z.transpose();
    grad.bd += dy;
    dz.noalias() += w.Wd.transpose() * dy;
  }
  if (dp.size() > 0) {
    const Eigen::VectorXd dpre = dp.cwiseProduct((1.0 - f.p.array().square()).matrix());
    grad.Wp.noalias() += dpre * f.z.transpose();
    grad.bp += dpre;
    dz.noalias() += w.Wp.transpose() * dpre;
  }
  grad.W2.noalias() += dz * f.h.transpose();
  grad.b2 += dz;
  const Eigen::VectorXd dh = w.W2.transpose() * dz;
  const Eigen::VectorXd dhpre = dh.cwiseProduct((1.0 - f.h.array().square()).matrix());
  grad.W1.noalias() += dhpre * f.x.transpose();
  grad.b1 += dhpre;
}

}  // namespace causal_crowds::learn
