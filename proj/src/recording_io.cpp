#include <fstream>
#include <sstream>

#include <json.hpp>

#include "koopgait/error.hpp"
#include "koopgait/gaitsim.hpp"

namespace koopgait::gaitsim {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "koopgait-recording";

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

template <int N>
Eigen::Matrix<double, N, 1> fixed(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<int>(v.size()) != N) throw DataError("expected " + std::to_string(N) + " numbers");
  return Eigen::Map<const Eigen::Matrix<double, N, 1>>(v.data());
}

json script_json(const ActivityScript& s) {
  json segs = json::array();
  for (const auto& g : s.segments) {
    segs.push_back({{"activity", activity_name(g.activity)},
                    {"duration", g.duration},
                    {"speed", g.speed},
                    {"heading", g.heading},
                    {"chair_height", g.chair_height}});
  }
  return {{"start", {s.start.x(), s.start.y()}}, {"camera_height", s.camera_height}, {"segments", segs}};
}

ActivityScript script_from(const json& j) {
  ActivityScript s;
  const auto start = j.at("start").get<std::vector<double>>();
  if (start.size() != 2) throw DataError("script start needs two numbers");
  s.start = Eigen::Vector2d(start[0], start[1]);
  s.camera_height = j.at("camera_height");
  for (const auto& g : j.at("segments")) {
    Segment seg;
    seg.activity = activity_from_name(g.at("activity").get<std::string>());
    seg.duration = g.at("duration");
    seg.speed = g.at("speed");
    seg.heading = g.at("heading");
    seg.chair_height = g.at("chair_height");
    s.segments.push_back(seg);
  }
  return s;
}

json gait_json(const GaitParams& p) {
  return {{"lengths", p.lengths},         {"hip_width", p.hip_width},
          {"frequency", p.frequency},     {"duty_cycle", p.duty_cycle},
          {"hip_amplitude", p.hip_amplitude}, {"knee_amplitude", p.knee_amplitude},
          {"step_height", p.step_height}, {"stand_extension", p.stand_extension}};
}

GaitParams gait_from(const json& j) {
  GaitParams p;
  p.lengths = j.at("lengths").get<std::array<double, skeleton::kNumLinks>>();
  p.hip_width = j.at("hip_width");
  p.frequency = j.at("frequency");
  p.duty_cycle = j.at("duty_cycle");
  p.hip_amplitude = j.at("hip_amplitude");
  p.knee_amplitude = j.at("knee_amplitude");
  p.step_height = j.at("step_height");
  p.stand_extension = j.at("stand_extension");
  return p;
}

json noise_json(const SensorNoiseConfig& n) {
  return {{"keypoint_sigma", n.keypoint_sigma}, {"depth_sigma0", n.depth_sigma0}, {"depth_kappa", n.depth_kappa},
          {"gyro_sigma", n.gyro_sigma},         {"accel_sigma", n.accel_sigma},   {"seed", n.seed}};
}

SensorNoiseConfig noise_from(const json& j) {
  SensorNoiseConfig n;
  n.keypoint_sigma = j.at("keypoint_sigma");
  n.depth_sigma0 = j.at("depth_sigma0");
  n.depth_kappa = j.at("depth_kappa");
  n.gyro_sigma = j.at("gyro_sigma");
  n.accel_sigma = j.at("accel_sigma");
  n.seed = j.at("seed").get<std::uint64_t>();
  return n;
}

json keyframe_json(const KeyframeRecord& k) {
  json rotations = json::array();
  for (const auto& r : k.state.rotations) {
    const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> m = r.matrix();
    rotations.push_back(std::vector<double>(m.data(), m.data() + 9));
  }
  json kps = json::array();
  json depths = json::array();
  for (int j = 0; j < skeleton::kNumJoints; ++j) {
    kps.push_back({k.keypoints[j].uv.x(), k.keypoints[j].uv.y(), k.keypoints[j].valid});
    depths.push_back({k.depths[j].depth, k.depths[j].valid});
  }
  return {{"type", "keyframe"},
          {"index", k.index},
          {"t", k.timestamp},
          {"label", activity_name(k.label)},
          {"contact", {k.contact[0], k.contact[1]}},
          {"root", vec(k.state.root)},
          {"rotations", rotations},
          {"joints", vec(k.joints.flatten())},
          {"keypoints", kps},
          {"depths", depths}};
}

KeyframeRecord keyframe_from(const json& j) {
  KeyframeRecord k;
  k.index = j.at("index");
  k.timestamp = j.at("t");
  k.label = activity_from_name(j.at("label").get<std::string>());
  const auto contact = j.at("contact").get<std::vector<bool>>();
  if (contact.size() != 2) throw DataError("contact needs two flags");
  k.contact = {contact[0], contact[1]};
  k.state.root = fixed<3>(j.at("root"));
  const auto& rots = j.at("rotations");
  if (rots.size() != skeleton::kNumLinks) throw DataError("expected 6 rotations");
  for (int l = 0; l < skeleton::kNumLinks; ++l) {
    const Eigen::Matrix<double, 9, 1> v = fixed<9>(rots[l]);
    k.state.rotations[l] = skeleton::Rotation(Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(v.data()));
  }
  k.joints = skeleton::JointSet::unflatten(fixed<skeleton::kJointVectorSize>(j.at("joints")));
  const auto& kps = j.at("keypoints");
  const auto& depths = j.at("depths");
  if (kps.size() != skeleton::kNumJoints || depths.size() != skeleton::kNumJoints) {
    throw DataError("expected 7 keypoints and 7 depths");
  }
  for (int n = 0; n < skeleton::kNumJoints; ++n) {
    auto& kp = k.keypoints[n];
    kp.uv = Eigen::Vector2d(kps[n].at(0).get<double>(), kps[n].at(1).get<double>());
    kp.valid = kps[n].at(2).get<bool>();
    kp.joint = n;
    kp.keyframe = k.index;
    auto& d = k.depths[n];
    d.depth = depths[n].at(0).get<double>();
    d.valid = depths[n].at(1).get<bool>();
    d.joint = n;
    d.keyframe = k.index;
  }
  return k;
}

json imu_json(int link, const sensors::ImuStream& stream) {
  std::vector<double> t, gyro, accel;
  for (const auto& s : stream) {
    t.push_back(s.timestamp);
    gyro.insert(gyro.end(), s.gyro.data(), s.gyro.data() + 3);
    accel.insert(accel.end(), s.accel.data(), s.accel.data() + 3);
  }
  return {{"type", "imu"}, {"link", link}, {"t", t}, {"gyro", gyro}, {"accel", accel}};
}

sensors::ImuStream imu_from(const json& j, int& link) {
  link = j.at("link");
  const auto t = j.at("t").get<std::vector<double>>();
  const auto gyro = j.at("gyro").get<std::vector<double>>();
  const auto accel = j.at("accel").get<std::vector<double>>();
  if (gyro.size() != 3 * t.size() || accel.size() != 3 * t.size()) throw DataError("IMU arrays differ in length");
  sensors::ImuStream s(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    s[i].timestamp = t[i];
    s[i].link = link;
    s[i].gyro = Eigen::Vector3d(gyro[3 * i], gyro[3 * i + 1], gyro[3 * i + 2]);
    s[i].accel = Eigen::Vector3d(accel[3 * i], accel[3 * i + 1], accel[3 * i + 2]);
    if (i > 0 && !(t[i] > t[i - 1])) throw DataError("IMU timestamps must increase");
  }
  return s;
}

}  // namespace

std::string recording_to_jsonl(const SimulatedRecording& rec) {
  const auto& model = skeleton::SkeletonModel::lower_body();
  json links = json::array();
  for (const auto& l : model.links()) links.push_back({l.parent, l.child});
  std::vector<int> imu_links;
  for (const auto& [link, stream] : rec.imu) imu_links.push_back(link);
  json header = {{"type", "header"},
                 {"format", kFormat},
                 {"version", kRecordingVersion},
                 {"keyframe_rate", rec.keyframe_rate},
                 {"imu_rate", rec.imu_rate},
                 {"joint_names", model.joint_names()},
                 {"links", links},
                 {"lengths", rec.lengths.values()},
                 {"num_keyframes", rec.keyframes.size()},
                 {"imu_links", imu_links},
                 {"gait", gait_json(rec.params)},
                 {"noise", noise_json(rec.noise)},
                 {"script", script_json(rec.script)}};
  std::ostringstream out;
  out << header.dump() << '\n';
  for (const auto& k : rec.keyframes) out << keyframe_json(k).dump() << '\n';
  for (const auto& [link, stream] : rec.imu) out << imu_json(link, stream).dump() << '\n';
  return out.str();
}

SimulatedRecording recording_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto next = [&](const std::string& expected) {
    if (!std::getline(in, line)) {
      throw DataError("line " + std::to_string(line_no + 1) + ": expected " + expected + ", found end of file");
    }
    ++line_no;
    try {
      auto j = json::parse(line);
      if (!j.is_object() || j.value("type", "") != expected) {
        throw DataError("record type is not '" + expected + "'");
      }
      return j;
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    } catch (const Error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  };
  auto guarded = [&](auto&& fn) {
    try {
      return fn();
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  };

  SimulatedRecording rec;
  const json header = next("header");
  std::size_t num_keyframes = 0;
  std::vector<int> imu_links;
  guarded([&] {
    if (header.at("format") != kFormat) throw DataError("not a koopgait recording");
    const int version = header.at("version");
    if (version != kRecordingVersion) {
      throw DataError("unsupported recording version " + std::to_string(version) + " (expected " +
                      std::to_string(kRecordingVersion) + ")");
    }
    rec.keyframe_rate = header.at("keyframe_rate");
    rec.imu_rate = header.at("imu_rate");
    rec.lengths = skeleton::LinkLengths(header.at("lengths").get<std::array<double, skeleton::kNumLinks>>());
    num_keyframes = header.at("num_keyframes");
    imu_links = header.at("imu_links").get<std::vector<int>>();
    rec.params = gait_from(header.at("gait"));
    rec.noise = noise_from(header.at("noise"));
    rec.script = script_from(header.at("script"));
    return 0;
  });
  for (std::size_t k = 0; k < num_keyframes; ++k) {
    const json j = next("keyframe");
    guarded([&] {
      rec.keyframes.push_back(keyframe_from(j));
      if (rec.keyframes.back().index != static_cast<int>(k)) throw DataError("keyframe index out of sequence");
      return 0;
    });
  }
  for (int expected : imu_links) {
    const json j = next("imu");
    guarded([&] {
      int link = -1;
      auto stream = imu_from(j, link);
      if (link != expected) throw DataError("IMU stream for link " + std::to_string(link) + " out of order");
      rec.imu[link] = std::move(stream);
      return 0;
    });
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty()) throw DataError("line " + std::to_string(line_no) + ": unexpected trailing record");
  }
  return rec;
}

void export_recording(const SimulatedRecording& rec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write recording " + path.string());
  out << recording_to_jsonl(rec);
  if (!out) throw DataError("failed writing recording " + path.string());
}

SimulatedRecording import_recording(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open recording " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return recording_from_jsonl(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string script_to_json(const ActivityScript& script) { return script_json(script).dump(2) + "\n"; }

ActivityScript script_from_json(const std::string& text) {
  ActivityScript s;
  try {
    s = script_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed script: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("malformed script: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace koopgait::gaitsim
