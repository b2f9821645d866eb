#include <doctest.h>

#include <numbers>

#include <Eigen/Geometry>

#include "koopgait/error.hpp"
#include "koopgait/skeleton.hpp"
#include "support.hpp"

using namespace koopgait;
using namespace koopgait::skeleton;

TEST_CASE("so3_exp and so3_log basics") {
  CHECK(so3_exp(Eigen::Vector3d::Zero()).matrix().isApprox(Eigen::Matrix3d::Identity(), 0.0));
  const Eigen::Vector3d e3 = so3_exp({std::numbers::pi / 2, 0, 0}) * Eigen::Vector3d(0, 0, 1);
  CHECK((e3 - Eigen::Vector3d(0, -1, 0)).norm() < 1e-15);
  CHECK(so3_log(Rotation()).norm() == 0.0);
  CHECK((so3_log(so3_exp({0, 0, std::numbers::pi / 2})) - Eigen::Vector3d(0, 0, std::numbers::pi / 2)).norm() < 1e-15);
  CHECK_THROWS_AS(so3_exp({std::nan(""), 0, 0}), ConfigError);
}

TEST_CASE("so3 round trip over random vectors") {
  std::mt19937_64 rng(1);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    Eigen::Vector3d w = testsupport::random_vector(rng, 1.0);
    if (w.norm() < 1e-12) continue;
    w = w.normalized() * testsupport::uniform(rng, 0.0, std::numbers::pi - 1e-3);
    worst = std::max(worst, (so3_log(so3_exp(w)) - w).norm());
  }
  CHECK(worst < 1e-9);
  // Small-angle branch.
  const Eigen::Vector3d tiny(1e-10, -2e-10, 3e-10);
  CHECK((so3_log(so3_exp(tiny)) - tiny).norm() < 1e-20);
}

TEST_CASE("so3_log near pi against a quaternion oracle") {
  const double angle = std::numbers::pi - 1e-6;
  const Eigen::Matrix3d m = Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitX()).toRotationMatrix();
  const Eigen::AngleAxisd oracle{Eigen::Quaterniond(m)};
  const Eigen::Vector3d w = so3_log(Rotation::project(m));
  CHECK(std::abs(w.norm() - oracle.angle()) < 1e-6);
  CHECK(std::abs(w.norm() - angle) < 1e-6);
  CHECK(std::abs(std::abs(w.normalized().dot(oracle.axis())) - 1.0) < 1e-9);
}

TEST_CASE("Rotation rejects non-orthonormal matrices") {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 1) = 1e-6;
  CHECK_THROWS_AS(Rotation{m}, ConfigError);
  CHECK_THROWS_AS(Rotation{Eigen::Matrix3d(-Eigen::Matrix3d::Identity())}, ConfigError);
  CHECK_NOTHROW(Rotation::project(m));
}

TEST_CASE("retraction stays on SO(3)") {
  std::mt19937_64 rng(2);
  Rotation r = testsupport::random_rotation(rng);
  for (int i = 0; i < 1000; ++i) r = r.retract(testsupport::random_vector(rng, 0.5));
  const Eigen::Matrix3d& m = r.matrix();
  CHECK((m.transpose() * m - Eigen::Matrix3d::Identity()).norm() < 1e-10);
  CHECK(std::abs(m.determinant() - 1.0) < 1e-10);
}

TEST_CASE("right Jacobian inverse") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d w = testsupport::random_vector(rng, 1.5);
    CHECK((right_jacobian(w) * right_jacobian_inverse(w) - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  }
}

TEST_CASE("skeleton topology") {
  const auto& m = SkeletonModel::lower_body();
  CHECK(m.joint_names()[0] == "sternum");
  CHECK(m.right_foot() == 3);
  CHECK(m.left_foot() == 6);
  CHECK(m.links()[2].parent == 2);
  CHECK(m.links()[2].child == 3);
  CHECK(m.links()[3].parent == 0);
  CHECK(m.links()[3].child == 4);
  CHECK(m.chain(3) == std::vector<int>{0, 1, 2});
  CHECK(m.depth(0) == 0);
  CHECK(m.depth(6) == 3);
  CHECK(m.parent_link(0) == -1);
}

TEST_CASE("forward kinematics") {
  GaitState s;
  const LinkLengths half({0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  const auto j = forward_kinematics(s, half);
  CHECK((j[1] - Eigen::Vector3d(0, 0, 0.5)).norm() == 0.0);
  CHECK((j[4] - Eigen::Vector3d(0, 0, 0.5)).norm() == 0.0);
  CHECK((j[3] - Eigen::Vector3d(0, 0, 1.5)).norm() == 0.0);

  s.root = {1, 2, 3};
  const auto shifted = forward_kinematics(s, half);
  for (int i = 0; i < kNumJoints; ++i) CHECK((shifted[i] - j[i] - Eigen::Vector3d(1, 2, 3)).norm() < 1e-15);

  std::mt19937_64 rng(4);
  double worst = 0;
  for (int n = 0; n < 100; ++n) {
    const auto st = testsupport::random_state(rng);
    const auto len = testsupport::random_lengths(rng);
    const auto js = forward_kinematics(st, len);
    for (int l = 0; l < kNumLinks; ++l) {
      const auto& link = SkeletonModel::lower_body().links()[l];
      worst = std::max(worst, std::abs((js[link.child] - js[link.parent]).norm() - len[l]));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("joint Jacobians") {
  GaitState s;
  const LinkLengths unit({1, 1, 1, 1, 1, 1});
  const auto root = joint_jacobians(s, unit, 0);
  for (const auto& b : root.rotation) CHECK(b.isZero(0.0));
  CHECK(root.root.isIdentity(0.0));

  // Identity rotation, unit length: columns (-e2, e1, 0).
  const auto hip = joint_jacobians(s, unit, 1);
  Eigen::Matrix3d expected = Eigen::Matrix3d::Zero();
  expected.col(0) = -Eigen::Vector3d::UnitY();
  expected.col(1) = Eigen::Vector3d::UnitX();
  CHECK((hip.rotation[0] - expected).norm() < 1e-15);
  CHECK(hip.rotation[3].isZero(0.0));
  CHECK((hip.length[0] - Eigen::Vector3d::UnitZ()).norm() < 1e-15);

  std::mt19937_64 rng(5);
  double worst = 0;
  for (int n = 0; n < 100; ++n) {
    const auto st = testsupport::random_state(rng);
    const auto len = testsupport::random_lengths(rng);
    for (int j = 0; j < kNumJoints; ++j) {
      const auto [a, num] = testsupport::fk_jacobians(st, len, j);
      worst = std::max(worst, testsupport::relative_error(a, num));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("normalization") {
  const NormalizationParams p(-1, 1);
  JointSet x;
  for (auto& v : x.positions) v = {0.3, -0.2, 4.0};
  x[3] = {1, 2, 3};
  const auto n = normalize(x, p);
  CHECK((n[3] - Eigen::Vector3d(0.5, 0.5, 0.5)).norm() == 0.0);

  // joints = foot + range * u + c_min -> u
  const NormalizationParams q(-0.4, 1.1);
  JointSet y;
  std::mt19937_64 rng(6);
  std::array<Eigen::Vector3d, kNumJoints> u;
  const Eigen::Vector3d foot(0.2, 0.9, 5.0);
  for (int j = 0; j < kNumJoints; ++j) {
    u[j] = j == 3 ? Eigen::Vector3d::Constant(0.4 / 1.5) : Eigen::Vector3d(testsupport::random_vector(rng, 1.0));
    y[j] = foot + q.range() * u[j] + Eigen::Vector3d::Constant(q.c_min());
  }
  y[3] = foot;
  const auto yn = normalize(y, q);
  for (int j = 0; j < kNumJoints; ++j) CHECK((yn[j] - u[j]).norm() < 1e-14);

  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto js = forward_kinematics(testsupport::random_state(rng), testsupport::random_lengths(rng));
    const auto back = denormalize(normalize(js, q), q, js[3]);
    for (int j = 0; j < kNumJoints; ++j) worst = std::max(worst, (back[j] - js[j]).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-12);

  JointSet zero;
  for (auto& v : zero.positions) v.setZero();
  const Eigen::Vector3d anchor(1, -2, 7);
  const auto d = denormalize(zero, NormalizationParams(0, 1), anchor);
  for (int j = 0; j < kNumJoints; ++j) CHECK((d[j] - anchor).norm() == 0.0);

  CHECK_THROWS_AS(NormalizationParams(1, 1), ConfigError);
}

TEST_CASE("vertical rotation commutes with normalization") {
  std::mt19937_64 rng(7);
  const NormalizationParams p(-1.2, 1.2);
  for (int i = 0; i < 20; ++i) {
    const auto js = forward_kinematics(testsupport::random_state(rng), testsupport::random_lengths(rng));
    const double angle = testsupport::uniform(rng, -3, 3);
    const auto a = normalize(rotate_about_vertical(js, angle, js[3]), p);
    // The pivot only translates the result, which normalization removes.
    const auto b = normalize(rotate_about_vertical(js, angle, testsupport::random_vector(rng, 3.0)), p);
    const auto c = rotate_about_vertical(normalize(js, p), angle, normalize(js, p)[3]);
    for (int j = 0; j < kNumJoints; ++j) {
      CHECK((a[j] - b[j]).norm() < 1e-12);
      CHECK((a[j] - c[j]).norm() < 1e-12);
    }
  }
}

TEST_CASE("flatten layout") {
  JointSet x;
  for (int j = 0; j < kNumJoints; ++j) x[j] = Eigen::Vector3d(j, 10 + j, 20 + j);
  const Vector21 f = x.flatten();
  CHECK(f(3) == 1.0);
  CHECK(f(4) == 11.0);
  CHECK(x.coordinate(2)(6) == 26.0);
  const auto y = JointSet::unflatten(f);
  for (int j = 0; j < kNumJoints; ++j) CHECK(y[j] == x[j]);
}
