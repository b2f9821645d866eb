#include <doctest.h>

#include <numbers>
#include <sstream>

#include "koopgait/error.hpp"
#include "koopgait/stgcn.hpp"
#include "support.hpp"

using namespace koopgait;
using namespace koopgait::stgcn;

using testsupport::max_abs_diff;
using testsupport::random_tensor;
using testsupport::random_tree;
using testsupport::random_weights;
using Weights = testsupport::PartitionWeights;

TEST_CASE("partitions of the lower body") {
  const auto g = Graph::from_skeleton(skeleton::SkeletonModel::lower_body());
  CHECK(g.num_nodes == 7);
  CHECK(g.root == 0);
  CHECK(hop_distances(g) == std::vector<int>{0, 1, 2, 3, 1, 2, 3});

  const auto labels = partition_labels(g);
  CHECK(labels(2, 2) == 0);
  CHECK(labels(2, 1) == 1);
  CHECK(labels(2, 3) == 2);
  CHECK(labels(2, 0) == -1);
  for (int j = 0; j < 7; ++j) CHECK(labels(0, j) != 1);

  const auto p = build_partitions(g);
  CHECK(p.adjacency[1].row(0).sum() == 0.0);
  CHECK(p.degree[2](0) == doctest::Approx(2.001).epsilon(1e-15));
  CHECK(p.degree[0](3) == doctest::Approx(1.001).epsilon(1e-15));

  Graph cyclic{3, {{0, 1}, {1, 2}, {2, 0}}, 0};
  CHECK_THROWS_AS(hop_distances(cyclic), ConfigError);
  Graph split{4, {{0, 1}, {2, 3}, {3, 2}}, 0};
  CHECK_THROWS_AS(hop_distances(split), ConfigError);
}

TEST_CASE("spatial convolution special cases") {
  std::mt19937_64 rng(41);
  const Graph single{1, {}, 0};
  const auto parts = build_partitions(single);
  const Tensor x = random_tensor(rng, 2, 3, 1, 4);
  Weights eye;
  for (auto& w : eye) w = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, 1);
  const Tensor y = spatial_conv(x, parts, eye, ones);
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(std::abs(y.data()[i] - x.data()[i] / 1.001) < 1e-15);

  const auto lower = build_partitions(skeleton::SkeletonModel::lower_body());
  const Tensor z = random_tensor(rng, 2, 3, 7, 5);
  const Tensor masked = spatial_conv(z, lower, random_weights(rng, 3, 4), Eigen::MatrixXd::Zero(7, 7));
  for (double v : masked.data()) CHECK(v == 0.0);
}

TEST_CASE("two-node path by hand") {
  const Graph path{2, {{0, 1}}, 0};
  const double a = kDefaultAlpha;
  Weights w;
  w[0] = Eigen::MatrixXd::Constant(1, 1, 0.7);
  w[1] = Eigen::MatrixXd::Constant(1, 1, -1.3);
  w[2] = Eigen::MatrixXd::Constant(1, 1, 2.1);
  Eigen::MatrixXd m(2, 2);
  m << 0.9, 0.4, 1.6, 1.1;
  Tensor x(1, 1, 2, 1);
  x(0, 0, 0, 0) = 0.25;
  x(0, 0, 1, 0) = -0.8;
  // Node 1 sees node 0 as centripetal, node 0 sees node 1 as centrifugal;
  // the off-center degree of each one-sided partition is alpha alone.
  const double f0 = 0.25, f1 = -0.8;
  const double cross = 1.0 / std::sqrt((1 + a) * a);
  const double out0 = 0.9 * f0 * 0.7 / (1 + a) + 0.4 * f1 * 2.1 * cross;
  const double out1 = 1.1 * f1 * 0.7 / (1 + a) + 1.6 * f0 * -1.3 * cross;
  const Tensor y = spatial_conv(x, build_partitions(path), w, m);
  const Tensor r = spatial_conv_reference(x, partition_labels(path), w, m);
  CHECK(std::abs(y(0, 0, 0, 0) - out0) < 1e-12);
  CHECK(std::abs(y(0, 0, 1, 0) - out1) < 1e-12);
  CHECK(max_abs_diff(y, r) < 1e-12);
}

TEST_CASE("tensor form equals the per-node form on random trees") {
  std::mt19937_64 rng(42);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 8;
    const Graph g = random_tree(rng, n);
    const int cin = 1 + trial % 3, cout = 1 + (trial / 3) % 4;
    const Tensor x = random_tensor(rng, 2, cin, n, 3);
    const auto w = random_weights(rng, cin, cout);
    Eigen::MatrixXd mask(n, n);
    for (int i = 0; i < mask.size(); ++i) mask(i) = testsupport::uniform(rng, 0, 2);
    worst = std::max(worst, max_abs_diff(spatial_conv(x, build_partitions(g), w, mask),
                                         spatial_conv_reference(x, partition_labels(g), w, mask)));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("temporal convolution") {
  std::mt19937_64 rng(43);
  const Tensor x = random_tensor(rng, 2, 3, 4, 9);
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(5, 3);
  delta.row(2).setOnes();
  CHECK(max_abs_diff(temporal_conv(x, delta, Eigen::VectorXd::Zero(3)), x) == 0.0);

  Tensor c(1, 1, 1, 9);
  for (auto& v : c.data()) v = 2.0;
  Eigen::MatrixXd k(5, 1);
  k << 0.1, 0.2, 0.3, 0.4, 0.5;
  const Tensor yc = temporal_conv(c, k, Eigen::VectorXd::Zero(1));
  for (int t = 2; t < 7; ++t) CHECK(std::abs(yc(0, 0, 0, t) - 2.0 * 1.5) < 1e-14);
  CHECK(yc(0, 0, 0, 0) < 2.0 * 1.5);

  Eigen::MatrixXd kr(5, 3);
  for (int i = 0; i < kr.size(); ++i) kr(i) = testsupport::uniform(rng, -1, 1);
  const Eigen::Vector3d bias(0.1, -0.2, 0.3);
  const Tensor y = temporal_conv(x, kr, bias);
  double worst = 0;
  for (int b = 0; b < 2; ++b)
    for (int ch = 0; ch < 3; ++ch)
      for (int v = 0; v < 4; ++v)
        for (int t = 0; t < 9; ++t) {
          double s = bias(ch);
          for (int g = 0; g < 5; ++g) {
            const int src = t + g - 2;
            if (src >= 0 && src < 9) s += kr(g, ch) * x(b, ch, v, src);
          }
          worst = std::max(worst, std::abs(s - y(b, ch, v, t)));
        }
  CHECK(worst < 1e-12);

  // Permuting nodes commutes with the per-node filter.
  const std::vector<int> perm{2, 0, 3, 1};
  Tensor xp(2, 3, 4, 9);
  for (int b = 0; b < 2; ++b)
    for (int ch = 0; ch < 3; ++ch)
      for (int v = 0; v < 4; ++v)
        for (int t = 0; t < 9; ++t) xp(b, ch, perm[v], t) = x(b, ch, v, t);
  const Tensor yp = temporal_conv(xp, kr, bias);
  for (int v = 0; v < 4; ++v)
    for (int t = 0; t < 9; ++t) CHECK(std::abs(yp(1, 2, perm[v], t) - y(1, 2, v, t)) < 1e-12);

  CHECK_THROWS_AS(temporal_conv(x, Eigen::MatrixXd::Zero(4, 3), bias), ConfigError);
}

namespace {

StgcnModel tiny_model(std::uint64_t seed) {
  StgcnConfig cfg;
  cfg.in_channels = 2;
  cfg.channels = {3};
  cfg.kernel = 3;
  Graph g{3, {{0, 1}, {1, 2}}, 0};
  return StgcnModel(cfg, g, skeleton::NormalizationParams(-1, 1), seed);
}

}  // namespace

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(44);
  auto model = tiny_model(7);
  for (auto& layer : model.parameters().layers) {
    for (int i = 0; i < layer.mask.size(); ++i) layer.mask(i) = testsupport::uniform(rng, 0.5, 1.5);
  }
  Eigen::MatrixXd mean(2, 3), sd(2, 3);
  mean << 0.1, 0.2, 0.3, -0.1, 0, 0.4;
  sd << 1.2, 0.8, 1, 0.5, 2, 1.1;
  model.set_input_standardization(mean, sd);
  const Tensor x = random_tensor(rng, 4, 2, 3, 5);
  const std::vector<int> labels{0, 3, 4, 1};
  Eigen::VectorXd w(5);
  w << 1.0, 0.5, 2.0, 1.5, 0.7;

  StgcnParameters grad;
  model.loss(x, labels, w, &grad);
  auto params = model.parameters().views();
  const auto gviews = grad.views();
  REQUIRE(params.size() == gviews.size());
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Eigen::VectorXd num(params[p].size());
    for (Eigen::Index i = 0; i < params[p].size(); ++i) {
      const double orig = params[p](i);
      params[p](i) = orig + 1e-6;
      const double lp = model.loss(x, labels, w, nullptr);
      params[p](i) = orig - 1e-6;
      const double lm = model.loss(x, labels, w, nullptr);
      params[p](i) = orig;
      num(i) = (lp - lm) / 2e-6;
    }
    worst = std::max(worst, testsupport::relative_error(gviews[p], num));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("forward pass properties") {
  std::mt19937_64 rng(45);
  auto model = tiny_model(3);
  model.parameters().fc_weight.setZero();
  model.parameters().fc_bias.setZero();
  const Eigen::MatrixXd p = model.probabilities(random_tensor(rng, 3, 2, 3, 7));
  CHECK((p.array() - 0.2).abs().maxCoeff() < 1e-15);

  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto m = tiny_model(100 + i);
    const Eigen::MatrixXd q = m.probabilities(random_tensor(rng, 1, 2, 3, 5));
    worst = std::max(worst, std::abs(q.sum() - 1.0));
    CHECK((q.array() > 0.0).all());
  }
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(model.logits(random_tensor(rng, 1, 3, 3, 5)), ConfigError);
}

TEST_CASE("small dataset is memorized") {
  std::mt19937_64 rng(46);
  auto model = tiny_model(5);
  std::vector<LabeledWindow> data;
  for (int c = 0; c < kNumActivities; ++c) data.push_back({random_tensor(rng, 1, 2, 3, 5), activity_from_index(c)});
  StgcnTrainingConfig cfg;
  cfg.epochs = 300;
  cfg.batch_size = 5;
  cfg.learning_rate = 0.05;
  cfg.test_fraction = 0.0;
  cfg.rotations = 1;
  cfg.standardize_inputs = false;
  StgcnTrainingReport report;
  model = train(std::move(model), data, cfg, &report);
  CHECK(report.epochs.back().loss < 0.05);
  CHECK(accuracy(model, data) == 1.0);

  std::ostringstream csv;
  write_training_csv(csv, report);
  CHECK(csv.str().rfind("epoch,loss,train_accuracy,test_accuracy\n", 0) == 0);

  data.pop_back();
  CHECK_THROWS_AS(train(tiny_model(5), data, cfg), DataError);
}

TEST_CASE("training is deterministic given the seed") {
  std::mt19937_64 rng(47);
  std::vector<LabeledWindow> data;
  for (int i = 0; i < 40; ++i) data.push_back({random_tensor(rng, 1, 2, 3, 5), activity_from_index(i % 5)});
  StgcnTrainingConfig cfg;
  cfg.epochs = 3;
  cfg.rotations = 1;
  cfg.seed = 9;
  const auto a = train(tiny_model(1), data, cfg);
  const auto b = train(tiny_model(1), data, cfg);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("windows and rotation") {
  std::mt19937_64 rng(48);
  std::vector<skeleton::JointSet> frames;
  skeleton::GaitState s = testsupport::random_state(rng);
  const skeleton::LinkLengths len;
  for (int k = 0; k < 20; ++k) {
    s = testsupport::random_successor(rng, s, 0.1);
    frames.push_back(skeleton::forward_kinematics(s, len));
  }
  const auto norm = window_normalization({frames});
  const Tensor w0 = window_tensor(frames, 0, norm);
  CHECK(w0.shape() == std::array<int, 4>{1, 3, 7, kWindowLength});
  for (int t = 0; t <= kHalfWindow; ++t)
    for (int v = 0; v < 7; ++v) CHECK(w0(0, 0, v, t) == w0(0, 0, v, kHalfWindow));

  const Tensor single = window_tensor({frames[3]}, 0, norm);
  for (int t = 1; t < kWindowLength; ++t) CHECK(single(0, 2, 5, t) == single(0, 2, 5, 0));

  const double angle = 0.7;
  std::vector<skeleton::JointSet> rotated;
  for (const auto& f : frames) rotated.push_back(skeleton::rotate_about_vertical(f, angle, frames[9][3]));
  const Tensor a = rotate_window(window_tensor(frames, 9, norm), angle, norm);
  const Tensor b = window_tensor(rotated, 9, norm);
  CHECK(max_abs_diff(a, b) < 1e-12);

  const std::vector<Activity> labels(20, Activity::Sitting);
  CHECK(make_windows(frames, labels, norm, 4).size() == 5);
  CHECK_THROWS_AS(window_tensor(frames, 20, norm), DataError);
}

TEST_CASE("model serialization round-trips bit-exactly") {
  std::mt19937_64 rng(49);
  StgcnConfig cfg;
  cfg.channels = {4, 6};
  StgcnModel model(cfg, Graph::from_skeleton(skeleton::SkeletonModel::lower_body()),
                   skeleton::NormalizationParams(-1.1, 0.9), 3);
  Eigen::MatrixXd mean(3, 7), sd(3, 7);
  for (int i = 0; i < 21; ++i) {
    mean(i) = testsupport::uniform(rng, -1, 1);
    sd(i) = testsupport::uniform(rng, 0.1, 1);
  }
  model.set_input_standardization(mean, sd);
  const std::string text = model.to_json();
  const auto back = StgcnModel::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.input_stddev() == sd);
  const auto pa = model.parameters().views();
  const auto pb = back.parameters().views();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
  const Tensor x = random_tensor(rng, 2, 3, 7, 13);
  CHECK(model.logits(x) == back.logits(x));
  CHECK_THROWS_AS(StgcnModel::from_json("{\"format\":\"koopgait-koopman-bank\"}"), DataError);
}

TEST_CASE("classify_frames agrees with classify_frame") {
  std::mt19937_64 rng(50);
  StgcnConfig cfg;
  cfg.channels = {4};
  const StgcnModel model(cfg, Graph::from_skeleton(skeleton::SkeletonModel::lower_body()),
                         skeleton::NormalizationParams(-1, 1), 11);
  std::vector<skeleton::JointSet> frames;
  for (int k = 0; k < 15; ++k)
    frames.push_back(skeleton::forward_kinematics(testsupport::random_state(rng), skeleton::LinkLengths()));
  const std::vector<int> ks{0, 4, 14};
  const auto batch = classify_frames(model, frames, ks);
  for (std::size_t i = 0; i < ks.size(); ++i) CHECK(batch[i] == classify_frame(model, frames, ks[i]));
  CHECK_NOTHROW(classify_frame(model, {frames[0]}, 0));
}
