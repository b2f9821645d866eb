#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "koopgait/config.hpp"
#include "koopgait/error.hpp"
#include "koopgait/estimator.hpp"
#include "koopgait/evaluation.hpp"
#include "support.hpp"

using namespace koopgait;
namespace fs = std::filesystem;

namespace {

gaitsim::ActivityScript short_walk(double walk_seconds) {
  gaitsim::ActivityScript s;
  gaitsim::Segment stand;
  stand.activity = Activity::Standing;
  stand.duration = 0.5;
  gaitsim::Segment walk;
  walk.activity = Activity::Walking;
  walk.duration = walk_seconds;
  walk.speed = 0.8;
  s.segments = {stand, walk, stand};
  return s;
}

EstimatorConfig truth_driven(EstimatorConfig c) {
  c.contact_source = "ground_truth";
  c.activity_source = "ground_truth";
  return c;
}

std::vector<skeleton::JointSet> truth_joints(const gaitsim::SimulatedRecording& rec) {
  std::vector<skeleton::JointSet> out;
  for (const auto& kf : rec.keyframes) out.push_back(kf.joints);
  return out;
}

koopman::KoopmanBank identity_bank() {
  koopman::KoopmanBank bank(koopman::enumerate_basis(7, 1), skeleton::NormalizationParams(-1.2, 1.2), 1e-8, false);
  for (int a = 0; a < kNumActivities; ++a)
    bank.set(activity_from_index(a), {Eigen::MatrixXd::Identity(135, 135)});
  return bank;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("koopgait_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("estimator config") {
  const EstimatorConfig d;
  CHECK(d.window == 10);
  CHECK(d.sigmas.image == 0.01);
  CHECK(d.sigmas.imu == 0.01);
  CHECK(d.sigmas.contact == 0.005);
  CHECK(d.sigmas.koopman == 0.05);
  CHECK(d.contact_threshold == 0.5);
  CHECK(d.initial_length == 0.45);

  const auto v = EstimatorConfig::vision_only();
  CHECK((v.use_image && v.use_depth && !v.use_imu && !v.use_contact && !v.use_koopman));
  const auto b = EstimatorConfig::baseline();
  CHECK((b.use_imu && b.use_contact && !b.use_koopman));

  EstimatorConfig c;
  c.window = 7;
  c.sigmas.koopman = 0.02;
  c.koopman_bank = "bank.json";
  const auto back = EstimatorConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(EstimatorConfig::from_json("{\"window\": 4}").window == 4);
  CHECK_THROWS_AS(EstimatorConfig::from_json("{\"windw\": 4}"), ConfigError);
  CHECK_THROWS_AS(EstimatorConfig::from_json("{\"sigmas\": {\"imu\": \"x\"}}"), ConfigError);
  CHECK_THROWS_AS(EstimatorConfig::from_json("[1"), ConfigError);

  CHECK_THROWS_AS(EstimatorConfig{}.validate(), ConfigError);  // learned factors without model paths
  auto none = truth_driven(EstimatorConfig{});
  none.use_imu = none.use_image = none.use_depth = none.use_contact = none.use_koopman = false;
  CHECK_THROWS_AS(none.validate(), ConfigError);
  auto neg = truth_driven(EstimatorConfig::baseline());
  neg.sigmas.depth_sigma0 = 0.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  auto src = truth_driven(EstimatorConfig::baseline());
  src.contact_source = "oracle";
  CHECK_THROWS_AS(src.validate(), ConfigError);
  CHECK_NOTHROW(truth_driven(EstimatorConfig::baseline()).validate());
}

TEST_CASE("evaluation metrics") {
  skeleton::JointSet a;
  for (int j = 0; j < 7; ++j) a[j] = Eigen::Vector3d(0.1 * j, -0.2 * j, 3.0 + 0.05 * j);
  skeleton::JointSet b = a;
  b[2].x() += 0.1;
  const auto rep = evaluate({a, b}, {a, a});
  REQUIRE(rep.errors.size() == 2);
  for (int j = 0; j < 7; ++j) CHECK(rep.errors[0][j] < 1e-15);
  CHECK(std::abs(rep.errors[1][2] - 0.1 * 6.0 / 7.0) < 1e-15);
  for (int j = 0; j < 7; ++j)
    if (j != 2) CHECK(std::abs(rep.errors[1][j] - 0.1 / 7.0) < 1e-15);

  // A constant offset leaves centered errors at zero.
  auto shifted = b;
  for (auto& p : shifted.positions) p += Eigen::Vector3d(1, 2, 3);
  const auto off = evaluate({shifted}, {b});
  for (double e : off.errors[0]) CHECK(e < 1e-14);

  const std::vector<skeleton::JointSet> same{a, b, a};
  const auto self = evaluate(same, same);
  CHECK(self.error_percentiles.max == 0.0);
  CHECK(self.smoothness == self.truth_smoothness);
  CHECK_THROWS_AS(evaluate({a}, {a, b}), DataError);

  const auto p = percentiles({4, 1, 3, 2, 5});
  CHECK(p.p50 == 3.0);
  CHECK(p.p90 == doctest::Approx(4.6).epsilon(1e-14));
  CHECK(p.max == 5.0);
  CHECK(p.p50 <= p.p90);
  CHECK_THROWS_AS(percentiles({}), DataError);
  CHECK(second_difference_rms({1, 2, 4}) == 1.0);
  CHECK(second_difference_rms({1, 2}) == 0.0);

  auto withc = rep;
  add_confusion(withc, {Activity::Walking, Activity::Sitting}, {Activity::Walking, Activity::Standing});
  CHECK(withc.confusion(0, 0) == 1);
  CHECK(withc.confusion(1, 2) == 1);
  const auto back = report_from_json(report_to_json(withc));
  CHECK(report_to_json(back) == report_to_json(withc));
  CHECK(back.confusion == withc.confusion);
}

TEST_CASE("report outputs") {
  const auto dir = scratch_dir("report");
  std::mt19937_64 rng(61);
  std::vector<skeleton::JointSet> est, truth;
  for (int k = 0; k < 30; ++k) {
    const auto s = testsupport::random_state(rng);
    truth.push_back(skeleton::forward_kinematics(s, skeleton::LinkLengths()));
    auto e = truth.back();
    for (auto& p : e.positions) p += testsupport::random_vector(rng, 0.05);
    est.push_back(e);
  }
  const auto rep = evaluate(est, truth, "run_a");
  write_report({rep}, dir);
  std::set<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files.insert(e.path().filename().string());
  CHECK(files == std::set<std::string>{"errors.csv", "boxplot.svg", "depth_traj.svg", "summary.json"});

  const auto csv = read_errors_csv(slurp(dir / "errors.csv"));
  REQUIRE(csv.size() == 1);
  CHECK(csv[0].first == "run_a");
  const auto p = percentiles(csv[0].second);
  CHECK(p.p50 == rep.error_percentiles.p50);
  CHECK(p.p95 == rep.error_percentiles.p95);
  CHECK(p.max == rep.error_percentiles.max);
  CHECK(slurp(dir / "boxplot.svg").find("<svg") != std::string::npos);
  CHECK(nlohmann::json::parse(slurp(dir / "summary.json")).is_array());

  CHECK_THROWS_AS(write_report({}, dir), DataError);
  EvaluationReport empty;
  CHECK_THROWS_AS(write_report({empty}, dir), DataError);
  CHECK_THROWS_AS(write_report({rep}, "/proc/koopgait/nope"), ConfigError);
}

TEST_CASE("noiseless estimation recovers the ground truth") {
  const auto rec = gaitsim::simulate(short_walk(4.0), gaitsim::subject_params(0), gaitsim::SensorNoiseConfig::zero());
  const auto res = estimate(rec, truth_driven(EstimatorConfig::baseline()), Models{});
  REQUIRE(res.joints.size() == rec.keyframes.size());
  CHECK(evaluate(res.joints, truth_joints(rec)).joint_rmse < 0.01);
  for (int l = 0; l < 6; ++l) CHECK(std::abs(res.lengths[l] - rec.lengths[l]) < 1e-3);
  CHECK(res.activities.size() == rec.keyframes.size());
  CHECK(res.solves.size() == rec.keyframes.size());

  const auto back = estimate_from_json(estimate_to_json(res));
  CHECK(estimate_to_json(back) == estimate_to_json(res));
  CHECK(back.joints[5][3] == res.joints[5][3]);

  // Vision-only covers the same keyframes with the same output shape.
  const auto vis = estimate(rec, EstimatorConfig::vision_only(), Models{});
  CHECK(vis.joints.size() == res.joints.size());
  CHECK(evaluate(vis.joints, truth_joints(rec)).joint_rmse < 0.01);
}

TEST_CASE("sliding window agrees with a batch solve") {
  const auto rec = gaitsim::simulate(short_walk(4.0), gaitsim::subject_params(1), gaitsim::SensorNoiseConfig::zero());
  auto cfg = truth_driven(EstimatorConfig::baseline());
  const auto windowed = estimate(rec, cfg, Models{});
  cfg.window = static_cast<int>(rec.keyframes.size());
  const auto batch = estimate(rec, cfg, Models{});
  CHECK(evaluate(windowed.joints, batch.joints).joint_rmse < 0.02);
}

TEST_CASE("a negligible Koopman weight reproduces the baseline") {
  gaitsim::SensorNoiseConfig noise;
  noise.seed = 3;
  const auto rec = gaitsim::simulate(short_walk(4.0), gaitsim::subject_params(2), noise);
  const auto base = estimate(rec, truth_driven(EstimatorConfig::baseline()), Models{});
  auto cfg = truth_driven(EstimatorConfig{});
  cfg.sigmas.koopman = 1e6;
  cfg.koopman_bank = "unused";
  Models m;
  m.bank = identity_bank();
  const auto with = estimate(rec, cfg, m);
  CHECK(evaluate(with.joints, base.joints).joint_rmse < 1e-5);

  // Enabling the factor at full weight changes the estimate but not its shape.
  cfg.sigmas.koopman = 0.05;
  const auto strong = estimate(rec, cfg, m);
  CHECK(strong.joints.size() == base.joints.size());
  CHECK(evaluate(strong.joints, base.joints).joint_rmse > 1e-5);
}

TEST_CASE("estimation is deterministic") {
  gaitsim::SensorNoiseConfig noise;
  noise.seed = 8;
  const auto rec = gaitsim::simulate(short_walk(4.0), gaitsim::subject_params(4), noise);
  const auto cfg = truth_driven(EstimatorConfig::baseline());
  const auto a = evaluate(estimate(rec, cfg, Models{}).joints, truth_joints(rec), "a");
  const auto b = evaluate(estimate(rec, cfg, Models{}).joints, truth_joints(rec), "a");
  CHECK(errors_csv({a}) == errors_csv({b}));
}

TEST_CASE("contact dataset") {
  const auto rec = gaitsim::simulate(short_walk(4.0), gaitsim::subject_params(0), gaitsim::SensorNoiseConfig{});
  const auto ds = contact_dataset({rec});
  CHECK(ds.features.rows() == static_cast<Eigen::Index>(rec.keyframes.size()));
  CHECK(ds.features.cols() == 8);
  CHECK(ds.labels[3] == rec.keyframes[3].contact);
}

#ifdef KOOPGAIT_CLI
namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(KOOPGAIT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("command line exit codes") {
  const auto dir = scratch_dir("cli");
  const std::string d = dir.string() + "/";
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("simulate --out " + d + "r.jsonl --walk-away 3 7 --speed 0.8 --seed 1") == 0);
  CHECK(run("simulate --out " + d + "r2.jsonl --walk-away 3 7 --speed 0.8 --seed 1") == 0);
  CHECK(slurp(d + "r.jsonl") == slurp(d + "r2.jsonl"));
  CHECK(run("simulate --out " + d + "x.jsonl --walk-away 5 4") == 2);

  const std::string est = "estimate --recording " + d + "r.jsonl --out " + d + "e.json ";
  CHECK(run(est + "--factors image,depth") == 0);
  CHECK(run(est + "--factors image,laser") == 2);
  CHECK(run(est + "--factors image,depth,koopman --activity-source ground_truth") == 2);
  CHECK(run(est + "--config " + d + "missing.json") == 2);
  {
    std::ofstream(d + "bad.jsonl") << "{\"format\":\"koopgait-recording\"\n";
  }
  CHECK(run("estimate --recording " + d + "bad.jsonl --out " + d + "e2.json --factors image,depth") == 3);
  CHECK(run("estimate --recording " + d + "none.jsonl --out " + d + "e2.json --factors image,depth") == 3);

  // Overflowing Koopman matrices make the residual non-finite.
  koopman::KoopmanBank huge(koopman::enumerate_basis(7, 1), skeleton::NormalizationParams(-1, 1), 1e-8, false);
  for (int a = 0; a < kNumActivities; ++a)
    huge.set(activity_from_index(a), {Eigen::MatrixXd::Constant(135, 135, 1e308)});
  {
    std::ofstream(d + "huge.json") << huge.to_json();
  }
  CHECK(run(est + "--factors image,depth,koopman --activity-source ground_truth --koopman-bank " + d + "huge.json") ==
        4);

  // Config file from the environment.
  {
    std::ofstream(d + "cfg.json") << "{\"factors\": {\"imu\": false, \"contact\": false, \"koopman\": false}}";
  }
  CHECK(run("estimate --recording " + d + "r.jsonl --out " + d + "e3.json") == 2);
  ::setenv(kConfigEnvVar, (d + "cfg.json").c_str(), 1);
  CHECK(run("estimate --recording " + d + "r.jsonl --out " + d + "e3.json") == 0);
  ::unsetenv(kConfigEnvVar);
  CHECK(slurp(d + "e.json") == slurp(d + "e3.json"));

  CHECK(run("evaluate --estimate " + d + "e.json --recording " + d + "r.jsonl --name vis --out " + d +
            "ev.json --report-dir " + d + "rep") == 0);
  CHECK(fs::exists(d + "rep/errors.csv"));
  CHECK(run("report --evaluations " + d + "ev.json " + d + "ev.json --out " + d + "rep2") == 0);
  CHECK(fs::exists(d + "rep2/depth_traj.svg"));
  CHECK(run("report --evaluations " + d + "e.json --out " + d + "rep3") == 3);
}
#endif
