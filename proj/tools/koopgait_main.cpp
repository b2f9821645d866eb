// koopgait command line: simulate, train the learned components, estimate and
// evaluate.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "koopgait/config.hpp"
#include "koopgait/error.hpp"
#include "koopgait/estimator.hpp"
#include "koopgait/evaluation.hpp"
#include "koopgait/gaitsim.hpp"
#include "koopgait/koopman.hpp"
#include "koopgait/runtime.hpp"
#include "koopgait/sensors.hpp"
#include "koopgait/stgcn.hpp"

namespace fs = std::filesystem;
using namespace koopgait;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

// Directories expand to their *.jsonl files in name order.
std::vector<gaitsim::SimulatedRecording> load_recordings(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.path().extension() == ".jsonl") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  if (files.empty()) throw ConfigError("no recordings given");
  std::vector<gaitsim::SimulatedRecording> out;
  for (const auto& f : files) out.push_back(gaitsim::import_recording(f));
  return out;
}

struct NoiseFlags {
  gaitsim::SensorNoiseConfig noise;
  bool noiseless = false;

  void add(CLI::App* app) {
    app->add_option("--keypoint-sigma", noise.keypoint_sigma, "Keypoint noise (normalized image units)");
    app->add_option("--depth-sigma0", noise.depth_sigma0, "Depth noise constant term (m)");
    app->add_option("--depth-kappa", noise.depth_kappa, "Depth noise quadratic term (1/m)");
    app->add_option("--gyro-sigma", noise.gyro_sigma, "Gyroscope noise (rad/s)");
    app->add_option("--accel-sigma", noise.accel_sigma, "Accelerometer noise (m/s^2)");
    app->add_flag("--noiseless", noiseless, "Disable all sensor noise");
  }

  gaitsim::SensorNoiseConfig get(std::uint64_t seed) const {
    auto n = noiseless ? gaitsim::SensorNoiseConfig::zero() : noise;
    n.seed = seed;
    n.validate();
    return n;
  }
};

struct EstimateFlags {
  std::string config_path;
  std::string factors;
  int window = 0;
  std::string koopman_bank, stgcn_model, contact_model;
  std::string contact_source, activity_source;
  std::optional<double> s_image, s_imu, s_contact, s_koopman, s_twist, s_depth0, s_kappa;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, std::string("Estimator config JSON (default: $") + kConfigEnvVar + ")");
    app->add_option("--factors", factors, "Comma-separated enabled factors: imu,image,depth,contact,koopman");
    app->add_option("--window", window, "Sliding window size in keyframes");
    app->add_option("--koopman-bank", koopman_bank, "Koopman bank file");
    app->add_option("--stgcn-model", stgcn_model, "ST-GCN model file");
    app->add_option("--contact-model", contact_model, "Contact detector file");
    app->add_option("--contact-source", contact_source, "detector or ground_truth");
    app->add_option("--activity-source", activity_source, "classifier or ground_truth");
    app->add_option("--sigma-image", s_image, "Image factor sigma");
    app->add_option("--sigma-depth0", s_depth0, "Depth factor sigma constant term");
    app->add_option("--sigma-depth-kappa", s_kappa, "Depth factor sigma quadratic term");
    app->add_option("--sigma-imu", s_imu, "IMU factor sigma (rad)");
    app->add_option("--sigma-contact", s_contact, "Contact factor sigma (m)");
    app->add_option("--sigma-koopman", s_koopman, "Koopman factor sigma (m)");
    app->add_option("--sigma-twist", s_twist, "Twist gauge sigma (rad)");
  }

  EstimatorConfig get() const {
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv(kConfigEnvVar)) path = env;
    }
    EstimatorConfig c = path.empty() ? EstimatorConfig{} : EstimatorConfig::from_json(slurp(path));
    if (!factors.empty()) {
      c.use_imu = c.use_image = c.use_depth = c.use_contact = c.use_koopman = false;
      std::stringstream ss(factors);
      std::string f;
      while (std::getline(ss, f, ',')) {
        if (f == "imu") c.use_imu = true;
        else if (f == "image") c.use_image = true;
        else if (f == "depth") c.use_depth = true;
        else if (f == "contact") c.use_contact = true;
        else if (f == "koopman") c.use_koopman = true;
        else throw ConfigError("unknown factor '" + f + "'");
      }
    }
    if (window > 0) c.window = window;
    if (!koopman_bank.empty()) c.koopman_bank = koopman_bank;
    if (!stgcn_model.empty()) c.stgcn_model = stgcn_model;
    if (!contact_model.empty()) c.contact_model = contact_model;
    if (!contact_source.empty()) c.contact_source = contact_source;
    if (!activity_source.empty()) c.activity_source = activity_source;
    if (s_image) c.sigmas.image = *s_image;
    if (s_depth0) c.sigmas.depth_sigma0 = *s_depth0;
    if (s_kappa) c.sigmas.depth_kappa = *s_kappa;
    if (s_imu) c.sigmas.imu = *s_imu;
    if (s_contact) c.sigmas.contact = *s_contact;
    if (s_koopman) c.sigmas.koopman = *s_koopman;
    if (s_twist) c.sigmas.twist = *s_twist;
    c.validate();
    return c;
  }
};

std::vector<Activity> truth_labels(const gaitsim::SimulatedRecording& rec) {
  std::vector<Activity> out;
  for (const auto& kf : rec.keyframes) out.push_back(kf.label);
  return out;
}

std::vector<skeleton::JointSet> truth_joints(const gaitsim::SimulatedRecording& rec) {
  std::vector<skeleton::JointSet> out;
  for (const auto& kf : rec.keyframes) out.push_back(kf.joints);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Lower-body gait estimation with a Koopman prediction factor"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed")->capture_default_str();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate recordings");
  std::string sim_out, sim_script;
  bool sim_campaign = false;
  std::vector<double> walk_away;
  double sim_speed = 1.0, sim_x = 0.0;
  int sim_subject = 0;
  NoiseFlags sim_noise;
  sim->add_option("--out", sim_out, "Output file (or directory with --campaign)")->required();
  auto* o_script = sim->add_option("--script", sim_script, "Activity script JSON");
  auto* o_campaign = sim->add_flag("--campaign", sim_campaign, "Default 5-subject campaign");
  auto* o_walk = sim->add_option("--walk-away", walk_away, "Walk away from the camera: START_DEPTH END_DEPTH")
                     ->expected(2);
  o_script->excludes(o_campaign)->excludes(o_walk);
  o_campaign->excludes(o_walk);
  sim->add_option("--speed", sim_speed, "Walking speed for --walk-away (m/s)");
  sim->add_option("--x-offset", sim_x, "Lateral offset for --walk-away (m)");
  sim->add_option("--subject", sim_subject, "Subject parameters 0..4")->check(CLI::Range(0, 4));
  sim->add_option("--seed", seed, "Random seed");
  sim_noise.add(sim);

  // train-contact
  auto* tc = app.add_subcommand("train-contact", "Train the IMU contact detector");
  std::vector<std::string> tc_in;
  std::string tc_out;
  sensors::ContactTrainingConfig tc_cfg;
  tc->add_option("--recordings", tc_in, "Recording files or directories")->required();
  tc->add_option("--out", tc_out, "Model output")->required();
  tc->add_option("--l2", tc_cfg.l2, "L2 regularization");
  tc->add_option("--seed", seed, "Random seed");

  // train-koopman
  auto* tk = app.add_subcommand("train-koopman", "Fit per-activity Koopman matrices by EDMD");
  std::vector<std::string> tk_in;
  std::string tk_out;
  koopman::KoopmanTrainingConfig tk_cfg;
  tk->add_option("--recordings", tk_in, "Recording files or directories")->required();
  tk->add_option("--out", tk_out, "Bank output")->required();
  tk->add_option("--order", tk_cfg.order, "Fourier order n");
  tk->add_option("--ridge", tk_cfg.ridge, "Ridge regularization");
  tk->add_option("--rotations", tk_cfg.rotations, "Augmentation rotations about the vertical");
  tk->add_flag("--per-coordinate", tk_cfg.per_coordinate, "One matrix per coordinate axis");
  tk->add_option("--seed", seed, "Random seed");

  // train-stgcn
  auto* ts = app.add_subcommand("train-stgcn", "Train the ST-GCN activity classifier");
  std::vector<std::string> ts_in;
  std::string ts_out, ts_log;
  stgcn::StgcnTrainingConfig ts_cfg;
  stgcn::StgcnConfig ts_net;
  int ts_stride = 1;
  ts->add_option("--recordings", ts_in, "Recording files or directories")->required();
  ts->add_option("--out", ts_out, "Model output")->required();
  ts->add_option("--log", ts_log, "Per-epoch CSV log");
  ts->add_option("--epochs", ts_cfg.epochs, "Training epochs");
  ts->add_option("--batch-size", ts_cfg.batch_size, "Minibatch size");
  ts->add_option("--lr", ts_cfg.learning_rate, "Learning rate");
  ts->add_option("--momentum", ts_cfg.momentum, "SGD momentum");
  ts->add_option("--test-fraction", ts_cfg.test_fraction, "Held-out fraction per class");
  ts->add_option("--rotations", ts_cfg.rotations, "Augmentation rotations about the vertical");
  ts->add_option("--max-per-class", ts_cfg.max_train_per_class, "Cap on training windows per class (0: all)");
  ts->add_option("--stride", ts_stride, "Window stride in keyframes");
  ts->add_option("--channels", ts_net.channels, "Channels per ST-GCN layer");
  ts->add_option("--seed", seed, "Random seed");

  // estimate
  auto* est = app.add_subcommand("estimate", "Run the sliding-window estimator on a recording");
  std::string est_in, est_out;
  EstimateFlags est_flags;
  bool est_print = false;
  est->add_option("--recording", est_in, "Recording file")->required();
  est->add_option("--out", est_out, "Estimate output JSON")->required();
  est->add_flag("--print-config", est_print, "Print the effective config");
  est->add_option("--seed", seed, "Random seed (estimation is deterministic)");
  est_flags.add(est);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Compare an estimate with the recording's ground truth");
  std::string ev_est, ev_rec, ev_out, ev_name = "estimate", ev_dir;
  ev->add_option("--estimate", ev_est, "Estimate JSON")->required();
  ev->add_option("--recording", ev_rec, "Recording with ground truth")->required();
  ev->add_option("--name", ev_name, "Report name");
  ev->add_option("--out", ev_out, "Evaluation JSON output")->required();
  ev->add_option("--report-dir", ev_dir, "Also write CSV and SVG outputs here");
  ev->add_option("--seed", seed, "Random seed");

  // report
  auto* rep = app.add_subcommand("report", "Write CSV tables and SVG plots for evaluations");
  std::vector<std::string> rep_in;
  std::string rep_dir;
  rep->add_option("--evaluations", rep_in, "Evaluation JSON files")->required();
  rep->add_option("--out", rep_dir, "Output directory")->required();
  rep->add_option("--seed", seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      const auto noise = sim_noise.get(seed);
      if (sim_campaign) {
        const auto entries = gaitsim::default_campaign(seed, noise);
        fs::create_directories(sim_out);
        for (const auto& e : entries) {
          char name[64];
          std::snprintf(name, sizeof name, "s%d_t%02d.jsonl", e.subject, e.trajectory);
          gaitsim::export_recording(gaitsim::simulate(e.script, e.params, e.noise), fs::path(sim_out) / name);
        }
        std::cout << "wrote " << entries.size() << " recordings to " << sim_out << "\n";
      } else {
        gaitsim::ActivityScript script;
        if (!walk_away.empty()) {
          script = gaitsim::walk_away_script(walk_away[0], walk_away[1], sim_speed, sim_x);
        } else if (!sim_script.empty()) {
          script = gaitsim::script_from_json(slurp(sim_script));
        } else {
          throw ConfigError("simulate needs --script, --campaign or --walk-away");
        }
        const auto rec = gaitsim::simulate(script, gaitsim::subject_params(sim_subject), noise);
        gaitsim::export_recording(rec, sim_out);
        std::cout << "wrote " << rec.keyframes.size() << " keyframes to " << sim_out << "\n";
      }
    } else if (tc->parsed()) {
      tc_cfg.seed = seed;
      const auto ds = contact_dataset(load_recordings(tc_in));
      sensors::ContactTrainingReport report;
      const auto model = sensors::train_contact_model(ds.features, ds.labels, tc_cfg, &report);
      dump(tc_out, model.to_json());
      std::cout << "samples " << ds.labels.size() << ", train accuracy right " << report.train_accuracy[0]
                << " left " << report.train_accuracy[1] << "\n";
    } else if (tk->parsed()) {
      std::vector<koopman::LabeledTrajectory> data;
      for (const auto& r : load_recordings(tk_in)) data.push_back({truth_joints(r), truth_labels(r)});
      const auto bank = koopman::train_bank(data, tk_cfg);
      dump(tk_out, bank.to_json());
      std::cout << "trained bank with observable size " << bank.basis().observable_size() << "\n";
    } else if (ts->parsed()) {
      ts_cfg.seed = seed;
      const auto recs = load_recordings(ts_in);
      std::vector<std::vector<skeleton::JointSet>> trajs;
      for (const auto& r : recs) trajs.push_back(truth_joints(r));
      const auto norm = stgcn::window_normalization(trajs);
      std::vector<stgcn::LabeledWindow> windows;
      for (const auto& r : recs) {
        auto w = stgcn::make_windows(truth_joints(r), truth_labels(r), norm, ts_stride);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
      }
      stgcn::StgcnModel model(ts_net, stgcn::Graph::from_skeleton(skeleton::SkeletonModel::lower_body()), norm,
                              seed);
      stgcn::StgcnTrainingReport report;
      model = stgcn::train(std::move(model), windows, ts_cfg, &report);
      dump(ts_out, model.to_json());
      if (!ts_log.empty()) {
        std::ostringstream csv;
        stgcn::write_training_csv(csv, report);
        dump(ts_log, csv.str());
      }
      std::cout << "train windows " << report.train_size << ", test windows " << report.test_size
                << ", test accuracy " << report.test_accuracy << "\n";
    } else if (est->parsed()) {
      const auto config = est_flags.get();
      if (est_print) std::cout << config.to_json() << "\n";
      const auto rec = gaitsim::import_recording(est_in);
      const auto result = estimate(rec, config, Models::load(config));
      dump(est_out, estimate_to_json(result));
      std::cout << "estimated " << result.states.size() << " keyframes\n";
    } else if (ev->parsed()) {
      const auto result = estimate_from_json(slurp(ev_est));
      const auto rec = gaitsim::import_recording(ev_rec);
      auto report = evaluate(result.joints, truth_joints(rec), ev_name);
      add_confusion(report, result.activities, truth_labels(rec));
      dump(ev_out, report_to_json(report));
      if (!ev_dir.empty()) write_report({report}, ev_dir);
      const auto& p = report.error_percentiles;
      std::cout << ev_name << ": p50 " << p.p50 << " p90 " << p.p90 << " p95 " << p.p95 << " max " << p.max
                << " rmse " << report.joint_rmse << " smoothness " << report.smoothness << "\n";
    } else if (rep->parsed()) {
      std::vector<EvaluationReport> reports;
      for (const auto& f : rep_in) reports.push_back(report_from_json(slurp(f)));
      write_report(reports, rep_dir);
      std::cout << "wrote report for " << reports.size() << " evaluations to " << rep_dir << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
