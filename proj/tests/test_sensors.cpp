#include <doctest.h>

#include <numbers>

#include "koopgait/error.hpp"
#include "koopgait/sensors.hpp"
#include "support.hpp"

using namespace koopgait;
using namespace koopgait::sensors;
using skeleton::Rotation;
using skeleton::so3_exp;
using skeleton::so3_log;

namespace {

ImuStream constant_stream(const Eigen::Vector3d& w, double duration, double rate = 120.0, int link = 1) {
  ImuStream s;
  const int n = static_cast<int>(std::lround(duration * rate));
  for (int i = 0; i < n; ++i) s.push_back({i / rate, w, Eigen::Vector3d(0, -kGravity, 0), link});
  return s;
}

}  // namespace

TEST_CASE("rotation preintegration") {
  const auto still = constant_stream(Eigen::Vector3d::Zero(), 1.0);
  CHECK(preintegrate_rotation(still, 0.0, 1.0).delta.matrix().isIdentity(1e-15));

  const Eigen::Vector3d w(0, 0, std::numbers::pi / 2);
  const auto spin = constant_stream(w, 1.0);
  const auto p = preintegrate_rotation(spin, 0.0, 1.0);
  CHECK_FALSE(p.empty);
  CHECK((p.delta.matrix() - so3_exp(w).matrix()).norm() < 1e-6);

  // Composition at any interior sample and at an arbitrary interior time.
  std::mt19937_64 rng(21);
  ImuStream varied;
  for (int i = 0; i < 120; ++i) varied.push_back({i / 120.0, testsupport::random_vector(rng, 3.0), {}, 1});
  const auto whole = preintegrate_rotation(varied, 0.0, 1.0);
  for (double split : {10 / 120.0, 61 / 120.0, 0.4321}) {
    const auto a = preintegrate_rotation(varied, 0.0, split);
    const auto b = preintegrate_rotation(varied, split, 1.0);
    CHECK(((a.delta * b.delta).matrix() - whole.delta.matrix()).norm() < 1e-12);
  }

  const auto none = preintegrate_rotation(varied, 5.0, 6.0);
  CHECK(none.empty);
  CHECK(none.delta.matrix().isIdentity(0.0));
  CHECK(preintegrate_rotation({}, 0.0, 1.0).empty);
}

TEST_CASE("IMU residual") {
  std::mt19937_64 rng(22);
  const Rotation rk = testsupport::random_rotation(rng), d = testsupport::random_rotation(rng, 0.5);
  PreintegratedRotation m;
  m.delta = d;
  CHECK(imu_factor_residual(rk, rk * d, m).residual.norm() < 1e-14);
  CHECK(imu_factor_residual(rk, rk, PreintegratedRotation{}).residual.norm() < 1e-14);
}

TEST_CASE("image residual") {
  Keypoint2D kp{{0.25, 0.5}, 0, 0, true};
  CHECK(image_factor_residual({1, 2, 4}, kp)->residual.norm() == 0.0);
  Keypoint2D kp2{{0.1, 0.0}, 0, 0, true};
  const auto r = image_factor_residual({0, 0, 1}, kp2);
  CHECK((r->residual - Eigen::Vector2d(-0.1, 0)).norm() < 1e-15);
  CHECK_FALSE(image_factor_residual({0, 0, 0.05}, kp2).has_value());
}

TEST_CASE("depth and contact residuals") {
  DepthMeasurement m{5.2, 0, 0, true};
  CHECK(std::abs(depth_factor_residual({0, 0, 5.0}, m).residual + 0.2) < 1e-14);
  CHECK(depth_factor_residual({1, 1, 5.2}, m).residual == 0.0);
  CHECK((depth_factor_residual({1, 1, 5.2}, m).d_joint - Eigen::RowVector3d(0, 0, 1)).norm() == 0.0);

  CHECK(contact_factor_residual({1, 2, 3}, {1, 2, 3}).residual.norm() == 0.0);
  CHECK((contact_factor_residual({0, 0, 0}, {0.1, 0, 0}).residual - Eigen::Vector3d(0.1, 0, 0)).norm() == 0.0);
}

TEST_CASE("sensor factor Jacobians match finite differences") {
  std::mt19937_64 rng(23);
  double worst = 0;
  for (int n = 0; n < 100; ++n) {
    const auto s0 = testsupport::random_state(rng);
    const auto s1 = testsupport::random_successor(rng, s0);
    const auto len = testsupport::random_lengths(rng);
    const auto v = testsupport::make_values({s0, s1}, len, 4);
    const int joint = n % 7;
    const int link = n % 6;
    PreintegratedRotation pre;
    pre.delta = testsupport::random_rotation(rng, 0.5);
    pre.link = link;
    ImuFactor imu(4, pre, 0.01);
    ImageFactor img(Keypoint2D{{0.1, -0.2}, joint, 5, true}, 0.01);
    DepthFactor dep(DepthMeasurement{5.0, joint, 4, true}, 0.05);
    ContactFactor con(4, n % 2 ? 3 : 6, 0.005);
    TwistGaugeFactor tw(4, link, 0.05);
    for (const fg::Factor* f : std::initializer_list<const fg::Factor*>{&imu, &img, &dep, &con, &tw}) {
      const double e = testsupport::factor_jacobian_error(*f, v);
      CHECK_MESSAGE(e < 1e-5, f->name());
      worst = std::max(worst, e);
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("image factor skipped behind the camera") {
  skeleton::GaitState s;
  s.root = {0, 0, -2};
  const auto v = testsupport::make_values({s}, skeleton::LinkLengths());
  ImageFactor img(Keypoint2D{{0.1, 0.1}, 0, 0, true}, 0.01);
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> j;
  img.evaluate(v, r, &j);
  CHECK(r.isZero(0.0));
  for (const auto& b : j) CHECK(b.isZero(0.0));
}

TEST_CASE("IMU features") {
  ImuStreams streams;
  for (int link : kImuLinks) {
    auto s = constant_stream(Eigen::Vector3d::Zero(), 1.0, 120.0, link);
    for (auto& x : s) x.accel = so3_exp({0.3 * link, 0.1, 0}).inverse() * Eigen::Vector3d(0, kGravity, 0);
    streams[link] = s;
  }
  CHECK(imu_feature_vector(streams, 0.5).norm() < 1e-12);

  // A larger swing raises only that link's gyro feature.
  double prev = 0.0;
  for (double amp : {0.5, 1.0, 2.0, 4.0}) {
    auto swung = streams;
    for (auto& x : swung[1]) x.gyro = Eigen::Vector3d(amp * std::sin(2 * std::numbers::pi * x.timestamp), 0, 0);
    const auto f = imu_feature_vector(swung, 0.5);
    CHECK(f(0) > prev);
    CHECK(f(2) == 0.0);
    prev = f(0);
  }

  auto missing = streams;
  missing.erase(4);
  try {
    imu_feature_vector(missing, 0.5);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("4") != std::string::npos);
  }
}

TEST_CASE("logistic regression") {
  LogisticClassifier zero{Eigen::VectorXd::Zero(8), 0.0};
  CHECK(zero.probability(Eigen::VectorXd::Random(8)) == 0.5);

  // Separable along the first feature.
  std::mt19937_64 rng(24);
  Eigen::MatrixXd x(200, 8);
  std::vector<int> y(200);
  for (int i = 0; i < 200; ++i) {
    for (int c = 0; c < 8; ++c) x(i, c) = testsupport::uniform(rng, -1, 1);
    y[i] = i % 2;
    x(i, 0) = (y[i] ? 1.0 : -1.0) * testsupport::uniform(rng, 0.2, 1.5);
  }
  ContactTrainingConfig cfg;
  int iters = 0;
  double gnorm = 0;
  const auto clf = fit_logistic(x, y, cfg, &iters, &gnorm);
  int correct = 0;
  for (int i = 0; i < 200; ++i) correct += (clf.probability(x.row(i).transpose()) > 0.5) == (y[i] == 1);
  CHECK(correct == 200);
  CHECK(gnorm < cfg.gradient_tolerance);

  std::vector<int> single(200, 1);
  CHECK_THROWS_AS(fit_logistic(x, single, cfg), DataError);
}

TEST_CASE("contact model training and serialization") {
  std::mt19937_64 rng(25);
  const int n = 300;
  Eigen::MatrixXd f(n, 8);
  std::vector<std::array<bool, 2>> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = {i % 2 == 0, i % 3 != 0};
    for (int c = 0; c < 8; ++c) f(i, c) = testsupport::uniform(rng, 0, 2) + 3.0 * c;
    f(i, 0) += labels[i][0] ? 0.0 : 4.0;
    f(i, 4) += labels[i][1] ? 0.0 : 4.0;
  }
  ContactTrainingReport report;
  const auto model = train_contact_model(f, labels, {}, &report);
  Eigen::MatrixXd z(n, 8);
  for (int i = 0; i < n; ++i) z.row(i) = model.standardize(f.row(i).transpose()).transpose();
  const Eigen::RowVectorXd mean = z.colwise().mean();
  const Eigen::RowVectorXd sd = ((z.rowwise() - mean).array().square().colwise().mean()).sqrt();
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-10);
  CHECK((sd.array() - 1.0).abs().maxCoeff() < 1e-10);
  CHECK(report.train_accuracy[0] == 1.0);
  CHECK(report.train_accuracy[1] == 1.0);

  const auto back = ContactModel::from_json(model.to_json());
  CHECK(back.to_json() == model.to_json());
  CHECK(back.feet()[1].weights == model.feet()[1].weights);
  CHECK(back.mean() == model.mean());
  CHECK_THROWS_AS(ContactModel::from_json("{\"format\":\"other\"}"), DataError);
}
