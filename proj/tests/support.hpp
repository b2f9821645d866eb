#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "koopgait/fgcore.hpp"
#include "koopgait/koopman.hpp"
#include "koopgait/skeleton.hpp"
#include "koopgait/state_binding.hpp"
#include "koopgait/stgcn.hpp"

namespace testsupport {

using namespace koopgait;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::Vector3d random_vector(std::mt19937_64& rng, double scale) {
  return {uniform(rng, -scale, scale), uniform(rng, -scale, scale), uniform(rng, -scale, scale)};
}

/// Random rotation with angle below `max_angle`.
inline skeleton::Rotation random_rotation(std::mt19937_64& rng, double max_angle = 3.0) {
  Eigen::Vector3d axis = random_vector(rng, 1.0);
  while (axis.norm() < 1e-3) axis = random_vector(rng, 1.0);
  return skeleton::so3_exp(axis.normalized() * uniform(rng, 0.0, max_angle));
}

/// Root a few meters in front of the camera so every joint projects.
inline skeleton::GaitState random_state(std::mt19937_64& rng) {
  skeleton::GaitState s;
  s.root = {uniform(rng, -1.0, 1.0), uniform(rng, -0.5, 0.5), uniform(rng, 3.0, 8.0)};
  for (auto& r : s.rotations) r = random_rotation(rng);
  return s;
}

/// A successor keyframe: root moved by up to 0.2 m per axis, each rotation
/// by up to `max_angle`, so relative rotations stay away from pi.
inline skeleton::GaitState random_successor(std::mt19937_64& rng, const skeleton::GaitState& s,
                                            double max_angle = 1.0) {
  skeleton::GaitState n = s;
  n.root += random_vector(rng, 0.2);
  for (auto& r : n.rotations) r = r * random_rotation(rng, max_angle);
  return n;
}

inline skeleton::LinkLengths random_lengths(std::mt19937_64& rng) {
  std::array<double, skeleton::kNumLinks> l{};
  for (auto& v : l) v = uniform(rng, 0.3, 0.6);
  return skeleton::LinkLengths(l);
}

/// Values holding keyframes `first`..`first + states.size() - 1` and the lengths.
inline fg::Values make_values(const std::vector<skeleton::GaitState>& states, const skeleton::LinkLengths& lengths,
                              int first = 0) {
  fg::Values v;
  for (std::size_t i = 0; i < states.size(); ++i) binding::insert_state(v, first + static_cast<int>(i), states[i]);
  binding::insert_lengths(v, lengths);
  return v;
}

/// ||A - N||_F / ||N||_F, absolute when N vanishes.
inline double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  const double diff = (analytic - numeric).norm();
  const double ref = numeric.norm();
  return ref > 1e-8 ? diff / ref : diff;
}

/// Central differences of the raw residual along each key's tangent space,
/// stacked horizontally in key order.
inline Eigen::MatrixXd numeric_jacobian(const fg::Factor& f, const fg::Values& values, double h = 1e-6) {
  Eigen::VectorXd r0;
  f.evaluate(values, r0, nullptr);
  int cols = 0;
  for (const auto& k : f.keys()) cols += k.tangent_dim();
  Eigen::MatrixXd j(r0.size(), cols);
  int c = 0;
  for (const auto& key : f.keys()) {
    for (int i = 0; i < key.tangent_dim(); ++i, ++c) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(key.tangent_dim());
      d(i) = h;
      fg::Values plus = values, minus = values;
      plus.retract(key, d);
      minus.retract(key, -d);
      Eigen::VectorXd rp, rm;
      f.evaluate(plus, rp, nullptr);
      f.evaluate(minus, rm, nullptr);
      j.col(c) = (rp - rm) / (2.0 * h);
    }
  }
  return j;
}

inline Eigen::MatrixXd analytic_jacobian(const fg::Factor& f, const fg::Values& values) {
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> blocks;
  f.evaluate(values, r, &blocks);
  int cols = 0;
  for (const auto& b : blocks) cols += static_cast<int>(b.cols());
  Eigen::MatrixXd j(r.size(), cols);
  int c = 0;
  for (const auto& b : blocks) {
    j.middleCols(c, b.cols()) = b;
    c += static_cast<int>(b.cols());
  }
  return j;
}

inline double factor_jacobian_error(const fg::Factor& f, const fg::Values& values) {
  return relative_error(analytic_jacobian(f, values), numeric_jacobian(f, values));
}

/// Analytic joint Jacobian of forward kinematics as a 3 x 27 matrix
/// (root, six rotations, six lengths) next to its central-difference twin.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> fk_jacobians(const skeleton::GaitState& state,
                                                                const skeleton::LinkLengths& lengths, int joint,
                                                                double h = 1e-6) {
  using namespace skeleton;
  const auto jj = joint_jacobians(state, lengths, joint);
  Eigen::MatrixXd a(3, 27);
  a.leftCols(3) = jj.root;
  for (int l = 0; l < kNumLinks; ++l) {
    a.middleCols(3 + 3 * l, 3) = jj.rotation[l];
    a.col(21 + l) = jj.length[l];
  }
  Eigen::MatrixXd n(3, 27);
  auto eval = [&](const GaitState& s, const LinkLengths& len) { return forward_kinematics(s, len)[joint]; };
  for (int i = 0; i < 3; ++i) {
    GaitState p = state, m = state;
    p.root(i) += h;
    m.root(i) -= h;
    n.col(i) = (eval(p, lengths) - eval(m, lengths)) / (2 * h);
  }
  for (int l = 0; l < kNumLinks; ++l) {
    for (int i = 0; i < 3; ++i) {
      Eigen::Vector3d d = Eigen::Vector3d::Zero();
      d(i) = h;
      GaitState p = state, m = state;
      p.rotations[l] = state.rotations[l].retract(d);
      m.rotations[l] = state.rotations[l].retract(-d);
      n.col(3 + 3 * l + i) = (eval(p, lengths) - eval(m, lengths)) / (2 * h);
    }
    auto lp = lengths.values(), lm = lengths.values();
    lp[l] += h;
    lm[l] -= h;
    n.col(21 + l) = (eval(state, LinkLengths(lp)) - eval(state, LinkLengths(lm))) / (2 * h);
  }
  return {a, n};
}

/// Bank with random matrices; any K exercises the Koopman factor's chain rule.
inline koopman::KoopmanBank random_bank(std::mt19937_64& rng, bool per_coordinate = false) {
  koopman::KoopmanBank bank(koopman::enumerate_basis(skeleton::kNumJoints, 1), skeleton::NormalizationParams(-1.5, 1.5),
                            1e-8, per_coordinate);
  const int m = bank.basis().observable_size();
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(double(m)));
  for (int a = 0; a < kNumActivities; ++a) {
    std::vector<Eigen::MatrixXd> ks;
    for (int i = 0; i < (per_coordinate ? 3 : 1); ++i) {
      Eigen::MatrixXd k(m, m);
      for (int c = 0; c < m; ++c)
        for (int r = 0; r < m; ++r) k(r, c) = g(rng);
      ks.push_back(k);
    }
    bank.set(activity_from_index(a), ks);
  }
  return bank;
}

using PartitionWeights = std::array<Eigen::MatrixXd, stgcn::kNumPartitions>;

inline stgcn::Tensor random_tensor(std::mt19937_64& rng, int b, int c, int n, int t) {
  stgcn::Tensor x(b, c, n, t);
  for (auto& v : x.data()) v = uniform(rng, -1, 1);
  return x;
}

/// Random labeled tree with a random root.
inline stgcn::Graph random_tree(std::mt19937_64& rng, int n) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  stgcn::Graph g;
  g.num_nodes = n;
  for (int i = 1; i < n; ++i) {
    const int parent = std::uniform_int_distribution<int>(0, i - 1)(rng);
    g.edges.emplace_back(perm[parent], perm[i]);
  }
  g.root = perm[std::uniform_int_distribution<int>(0, n - 1)(rng)];
  return g;
}

inline PartitionWeights random_weights(std::mt19937_64& rng, int cin, int cout) {
  PartitionWeights w;
  for (auto& m : w) {
    m.resize(cin, cout);
    for (int i = 0; i < m.size(); ++i) m(i) = uniform(rng, -1, 1);
  }
  return w;
}

/// Infinite on a shape mismatch.
inline double max_abs_diff(const stgcn::Tensor& a, const stgcn::Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testsupport
