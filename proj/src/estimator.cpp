#include "koopgait/estimator.hpp"

#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "koopgait/error.hpp"
#include "koopgait/state_binding.hpp"

namespace koopgait {

using fg::VariableKey;
using skeleton::kNumJoints;
using skeleton::kNumLinks;

namespace {

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Links whose twist no sensor observes; they get a gauge factor.
std::vector<int> gauge_links(bool imu) {
  if (!imu) return {0, 1, 2, 3, 4, 5};
  return {0, 3};
}

constexpr double kGaugeRotationSigma = 1.0;  // rad, on the first keyframe
constexpr double kIsolatedSigma = 1.0;       // keyframes without any measurement

skeleton::GaitState state_from_joints(const skeleton::JointSet& j) {
  const auto& model = skeleton::SkeletonModel::lower_body();
  skeleton::GaitState s;
  s.root = j[model.root()];
  const Eigen::Vector3d lateral = j[1] - j[4];
  for (int l = 0; l < kNumLinks; ++l) {
    const auto& link = model.links()[l];
    s.rotations[l] = skeleton::Rotation::from_axes(j[link.child] - j[link.parent], lateral);
  }
  return s;
}

}  // namespace

Models Models::load(const EstimatorConfig& config) {
  Models m;
  if (config.use_koopman) {
    m.bank = koopman::KoopmanBank::from_json(read_file(config.koopman_bank, "Koopman bank"));
  }
  if (!config.stgcn_model.empty() && config.use_koopman && config.activity_source == "classifier") {
    m.classifier = stgcn::StgcnModel::from_json(read_file(config.stgcn_model, "ST-GCN model"));
  }
  if (config.use_contact && config.contact_source == "detector") {
    m.contact = sensors::ContactModel::from_json(read_file(config.contact_model, "contact model"));
  }
  return m;
}

std::optional<skeleton::JointSet> vision_joints(const gaitsim::KeyframeRecord& keyframe) {
  skeleton::JointSet j;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& kp = keyframe.keypoints[i];
    const auto& d = keyframe.depths[i];
    if (!kp.valid || !d.valid) return std::nullopt;
    j[i] = Eigen::Vector3d(kp.uv.x() * d.depth, kp.uv.y() * d.depth, d.depth);
  }
  return j;
}

EstimateResult estimate(const gaitsim::SimulatedRecording& recording, const EstimatorConfig& config,
                        const Models& models) {
  config.validate();
  const int n = static_cast<int>(recording.keyframes.size());
  if (n == 0) throw DataError("recording has no keyframes");

  const bool classify = config.use_koopman && config.activity_source == "classifier";
  if (config.use_koopman && !models.bank) throw ConfigError("Koopman factor enabled but no bank loaded");
  if (classify && !models.classifier) throw ConfigError("activity classifier required but not loaded");
  const bool detect_contact = config.use_contact && config.contact_source == "detector";
  if (detect_contact && !models.contact) throw ConfigError("contact detector required but not loaded");

  const auto& model = skeleton::SkeletonModel::lower_body();
  const auto& sig = config.sigmas;

  EstimateResult out;
  out.states.resize(n);
  out.joints.resize(n);
  out.activities.resize(n);
  out.contacts.resize(n);
  for (int k = 0; k < n; ++k) {
    const auto& kf = recording.keyframes[k];
    out.activities[k] = kf.label;
    if (config.contact_source == "ground_truth") {
      out.contacts[k] = kf.contact;
    } else if (models.contact) {
      const auto f = sensors::imu_feature_vector(recording.imu, kf.timestamp);
      for (int foot = 0; foot < 2; ++foot) {
        out.contacts[k][foot] = models.contact->probability(f, foot) > config.contact_threshold;
      }
    } else {
      out.contacts[k] = {false, false};
    }
  }

  std::optional<skeleton::JointSet> first;
  for (int k = 0; k < n && !first; ++k) first = vision_joints(recording.keyframes[k]);
  if (!first) throw DataError("no keyframe has a complete set of valid vision measurements");

  fg::SlidingWindow window(config.window, config.anchoring);
  for (const auto& key : binding::length_keys()) window.add_global(key, config.initial_length);

  std::map<int, std::shared_ptr<koopman::KoopmanFactor>> koopman_factors;
  skeleton::GaitState previous;

  auto finalize = [&](const fg::Values& values, int k) {
    out.states[k] = binding::gait_state(values, k);
  };

  for (int k = 0; k < n; ++k) {
    const auto& kf = recording.keyframes[k];
    fg::SlidingWindow::Keyframe frame;
    frame.index = k;

    skeleton::GaitState init;
    if (k == 0) {
      init = state_from_joints(*first);
    } else {
      init = previous;
    }

    if (k > 0 && config.use_imu) {
      const double t0 = recording.keyframes[k - 1].timestamp;
      for (int link : sensors::kImuLinks) {
        auto it = recording.imu.find(link);
        if (it == recording.imu.end() || it->second.empty()) continue;
        auto meas = sensors::preintegrate_rotation(it->second, t0, kf.timestamp);
        if (meas.empty) continue;
        meas.link = link;
        init.rotations[link] = init.rotations[link] * meas.delta;
        frame.factors.push_back(std::make_shared<sensors::ImuFactor>(k - 1, meas, sig.imu));
      }
    }
    binding::insert_state(frame.initial, k, init);

    int measurements = 0;
    for (int j = 0; j < kNumJoints; ++j) {
      auto kp = kf.keypoints[j];
      kp.keyframe = k;
      kp.joint = j;
      if (config.use_image && kp.valid) {
        frame.factors.push_back(std::make_shared<sensors::ImageFactor>(kp, sig.image));
        ++measurements;
      }
      auto d = kf.depths[j];
      d.keyframe = k;
      d.joint = j;
      if (config.use_depth && d.valid) {
        const double sigma = sig.depth_sigma0 + sig.depth_kappa * d.depth * d.depth;
        frame.factors.push_back(std::make_shared<sensors::DepthFactor>(d, sigma));
        ++measurements;
      }
    }

    if (k > 0) {
      for (int link : gauge_links(config.use_imu)) {
        frame.factors.push_back(std::make_shared<sensors::TwistGaugeFactor>(k - 1, link, sig.twist));
      }
      if (config.use_contact) {
        const std::array<int, 2> feet{model.right_foot(), model.left_foot()};
        for (int foot = 0; foot < 2; ++foot) {
          if (out.contacts[k - 1][foot] && out.contacts[k][foot]) {
            frame.factors.push_back(std::make_shared<sensors::ContactFactor>(k - 1, feet[foot], sig.contact));
          }
        }
      }
      if (config.use_koopman) {
        auto f = std::make_shared<koopman::KoopmanFactor>(k - 1, *models.bank, out.activities[k - 1], sig.koopman);
        koopman_factors[k - 1] = f;
        frame.factors.push_back(f);
      }
    } else {
      for (int l = 0; l < kNumLinks; ++l) {
        frame.factors.push_back(std::make_shared<fg::RotationPrior>(VariableKey::rotation(0, l), init.rotations[l],
                                                                    kGaugeRotationSigma, "gauge"));
      }
    }

    // Without measurements a keyframe can only hang off its neighbours
    // through the dynamic factors; keep the graph well posed regardless.
    if (measurements == 0) {
      frame.factors.push_back(
          std::make_shared<fg::PositionPrior>(VariableKey::root(k), init.root, kIsolatedSigma, "isolated"));
      if (k > 0 && !config.use_imu && !config.use_koopman) {
        for (int l = 0; l < kNumLinks; ++l) {
          frame.factors.push_back(std::make_shared<fg::RotationPrior>(VariableKey::rotation(k, l),
                                                                      init.rotations[l], kIsolatedSigma, "isolated"));
        }
      }
    }

    const auto lengths_now = binding::link_lengths(window.estimate());
    if (auto dropped = window.slide(std::move(frame))) {
      const int old = dropped->entries().begin()->first.keyframe;
      finalize(*dropped, old);
      out.joints[old] = skeleton::forward_kinematics(out.states[old], lengths_now, model);
      koopman_factors.erase(old);
    }

    if (classify) {
      // Reclassify the recent frames now that k is known.
      std::vector<skeleton::JointSet> frames(out.joints.begin(), out.joints.begin() + k + 1);
      const auto lengths = binding::link_lengths(window.estimate());
      const int lo = std::max(0, k - stgcn::kHalfWindow);
      for (int j : window.graph().keyframes()) {
        frames[j] = skeleton::forward_kinematics(binding::gait_state(window.estimate(), j), lengths, model);
      }
      std::vector<int> ks;
      for (int j = lo; j <= k; ++j) ks.push_back(j);
      const auto labels = stgcn::classify_frames(*models.classifier, frames, ks);
      for (std::size_t i = 0; i < ks.size(); ++i) {
        out.activities[ks[i]] = labels[i];
        auto it = koopman_factors.find(ks[i]);
        if (it != koopman_factors.end()) it->second->set_activity(labels[i]);
      }
    }

    fg::SolveResult result;
    try {
      result = fg::solve_lm(window.graph(), window.estimate(), config.solver);
    } catch (const Error& e) {
      throw SolverError("keyframe " + std::to_string(k) + ": " + e.what());
    }
    window.set_estimate(result.estimate);
    out.solves.push_back({k, result.initial_cost, result.final_cost, result.iterations, result.termination});
    previous = binding::gait_state(window.estimate(), k);
  }

  out.lengths = binding::link_lengths(window.estimate());
  for (int k : window.graph().keyframes()) {
    finalize(window.estimate(), k);
    out.joints[k] = skeleton::forward_kinematics(out.states[k], out.lengths, model);
  }
  return out;
}

namespace {

using nlohmann::json;

json vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

Eigen::Vector3d vec3_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw DataError("expected 3 numbers");
  return {v[0], v[1], v[2]};
}

}  // namespace

std::string estimate_to_json(const EstimateResult& r) {
  json j;
  j["format"] = "koopgait-estimate";
  j["version"] = 1;
  j["lengths"] = r.lengths.values();
  json frames = json::array();
  for (std::size_t k = 0; k < r.states.size(); ++k) {
    json rots = json::array();
    for (const auto& rot : r.states[k].rotations) {
      const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> m = rot.matrix();
      rots.push_back(std::vector<double>(m.data(), m.data() + 9));
    }
    json joints = json::array();
    for (int i = 0; i < kNumJoints; ++i) joints.push_back(vec3(r.joints[k][i]));
    frames.push_back({{"index", k},
                      {"root", vec3(r.states[k].root)},
                      {"rotations", rots},
                      {"joints", joints},
                      {"activity", activity_name(r.activities[k])},
                      {"contact", r.contacts[k]}});
  }
  j["keyframes"] = frames;
  json solves = json::array();
  for (const auto& s : r.solves) {
    solves.push_back({{"keyframe", s.keyframe},
                      {"initial_cost", s.initial_cost},
                      {"final_cost", s.final_cost},
                      {"iterations", s.iterations},
                      {"termination", s.termination}});
  }
  j["solves"] = solves;
  return j.dump() + "\n";
}

EstimateResult estimate_from_json(const std::string& text) {
  EstimateResult r;
  try {
    const json j = json::parse(text);
    if (j.at("format") != "koopgait-estimate") throw DataError("not an estimate file");
    if (j.at("version") != 1) throw DataError("unsupported estimate version " + j.at("version").dump());
    r.lengths = skeleton::LinkLengths(j.at("lengths").get<std::array<double, kNumLinks>>());
    for (const auto& f : j.at("keyframes")) {
      if (f.at("index").get<std::size_t>() != r.states.size()) throw DataError("keyframes out of order");
      skeleton::GaitState s;
      s.root = vec3_from(f.at("root"));
      const auto& rots = f.at("rotations");
      if (rots.size() != kNumLinks) throw DataError("expected 6 rotations");
      for (int l = 0; l < kNumLinks; ++l) {
        const auto v = rots[l].get<std::vector<double>>();
        if (v.size() != 9) throw DataError("rotation needs 9 numbers");
        s.rotations[l] = skeleton::Rotation(Eigen::Matrix<double, 3, 3, Eigen::RowMajor>(v.data()));
      }
      skeleton::JointSet js;
      const auto& joints = f.at("joints");
      if (joints.size() != kNumJoints) throw DataError("expected 7 joints");
      for (int i = 0; i < kNumJoints; ++i) js[i] = vec3_from(joints[i]);
      r.states.push_back(s);
      r.joints.push_back(js);
      r.activities.push_back(activity_from_name(f.at("activity").get<std::string>()));
      r.contacts.push_back(f.at("contact").get<std::array<bool, 2>>());
    }
    for (const auto& s : j.at("solves")) {
      r.solves.push_back({s.at("keyframe"), s.at("initial_cost"), s.at("final_cost"), s.at("iterations"),
                          s.at("termination")});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed estimate: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed estimate: ") + e.what());
  }
  return r;
}

ContactDataset contact_dataset(const std::vector<gaitsim::SimulatedRecording>& recordings) {
  ContactDataset ds;
  long total = 0;
  for (const auto& r : recordings) total += static_cast<long>(r.keyframes.size());
  ds.features.resize(total, sensors::kNumContactFeatures);
  ds.labels.reserve(total);
  long row = 0;
  for (const auto& r : recordings) {
    for (const auto& kf : r.keyframes) {
      ds.features.row(row++) = sensors::imu_feature_vector(r.imu, kf.timestamp).transpose();
      ds.labels.push_back(kf.contact);
    }
  }
  return ds;
}

}  // namespace koopgait
