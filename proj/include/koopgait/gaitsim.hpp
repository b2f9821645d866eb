#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "koopgait/activity.hpp"
#include "koopgait/sensors.hpp"
#include "koopgait/skeleton.hpp"

namespace koopgait::gaitsim {

inline constexpr double kKeyframeRate = 30.0;
inline constexpr double kImuRate = 120.0;
inline constexpr int kRecordingVersion = 1;

struct Segment {
  Activity activity = Activity::Standing;
  double duration = 1.0;       // s
  double speed = 0.0;          // m/s, walking only; mean over the segment
  double heading = 0.0;        // rad about the vertical, 0 = +z (away from the camera)
  double chair_height = 0.45;  // m, seat height for sit/stand segments
};

struct ActivityScript {
  std::vector<Segment> segments;
  Eigen::Vector2d start{0.0, 3.0};  // ground point (x, z) under the sternum at t = 0
  double camera_height = 1.0;       // m; the ground plane is y = camera_height

  double duration() const;
  /// Throws ConfigError on nonpositive durations, incompatible transitions,
  /// heading changes, or mismatched chair heights within one sit block.
  void validate() const;
};

struct GaitParams {
  // Sternum-hip, thigh, shank per side, indexed like SkeletonModel::links().
  std::array<double, skeleton::kNumLinks> lengths{0.45, 0.45, 0.45, 0.45, 0.45, 0.45};
  double hip_width = 0.1;        // lateral hip offset from the sternum (m)
  double frequency = 1.0;        // strides per second (Hz)
  double duty_cycle = 0.6;       // stance fraction of a stride
  double hip_amplitude = 0.9;    // rad, cap on thigh excursion from vertical while walking
  double knee_amplitude = 1.4;   // rad, cap on knee flexion while walking
  double step_height = 0.08;     // m, swing clearance for a full-length step
  double stand_extension = 0.98; // hip-foot distance over leg length when standing

  void validate() const;
};

struct SensorNoiseConfig {
  double keypoint_sigma = 0.005;  // normalized image units
  double depth_sigma0 = 0.01;     // m
  double depth_kappa = 0.004;     // 1/m
  double gyro_sigma = 0.01;       // rad/s
  double accel_sigma = 0.05;      // m/s^2
  std::uint64_t seed = 0;

  double depth_sigma(double depth) const { return depth_sigma0 + depth_kappa * depth * depth; }
  void validate() const;
  static SensorNoiseConfig zero();
};

/// Continuous-time ground truth of a script.
class Trajectory {
 public:
  Trajectory(ActivityScript script, GaitParams params);

  double duration() const { return duration_; }
  const ActivityScript& script() const { return script_; }
  const GaitParams& params() const { return params_; }
  const skeleton::LinkLengths& lengths() const { return lengths_; }

  /// Times outside [0, duration] clamp to the ends.
  skeleton::GaitState state(double t) const;
  skeleton::JointSet joints(double t) const;
  /// Label at t; the motionless tail of a walking segment counts as standing.
  Activity activity(double t) const;
  /// Ground contact of (right, left) foot.
  std::array<bool, 2> contact(double t) const;

 private:
  struct Stance {
    double start;
    double end;
    Eigen::Vector3d position;
  };
  struct Plan {
    Segment segment;
    double t0 = 0.0;
    Eigen::Vector3d root_start;   // ground point under the sternum
    Eigen::Vector3d forward;
    Eigen::Vector3d right;
    std::array<Eigen::Vector3d, 2> feet_start;  // standing footprints
    double cruise = 0.0;          // walking cruise speed
    double ramp = 0.0;
    double settle = 0.0;
    double rest_time = 0.0;       // walking: time after which nothing moves
    std::array<std::vector<Stance>, 2> stances;  // per foot
  };

  struct Pose {
    Eigen::Vector3d sternum;
    std::array<Eigen::Vector3d, 2> feet;
    std::array<bool, 2> contact{true, true};
    bool moving = false;
  };

  const Plan& plan_at(double t) const;
  Pose pose(double t) const;
  Pose walking_pose(const Plan& p, double tau) const;
  double walk_distance(const Plan& p, double tau) const;
  double walk_speed(const Plan& p, double tau) const;
  Eigen::Vector3d seated_sternum(const Plan& p) const;
  Eigen::Vector3d standing_sternum(const Plan& p) const;
  skeleton::GaitState solve_state(const Pose& pose, const Eigen::Vector3d& forward, const Eigen::Vector3d& right) const;

  ActivityScript script_;
  GaitParams params_;
  skeleton::LinkLengths lengths_;
  std::vector<Plan> plans_;
  double duration_ = 0.0;
  double stand_height_ = 0.0;               // sternum above ground when standing
  std::array<double, 2> pelvis_drop_{};     // vertical sternum-hip offset per side
  std::array<double, 2> reach_{};           // longest hip-foot distance allowed while walking
};

/// Ground truth sampled at the keyframe rate.
struct GroundTruth {
  std::vector<double> timestamps;
  std::vector<skeleton::GaitState> states;
  std::vector<skeleton::JointSet> joints;
  std::vector<Activity> labels;
  std::vector<std::array<bool, 2>> contacts;
  skeleton::LinkLengths lengths;
};

GroundTruth generate_trajectory(const Trajectory& trajectory);
GroundTruth generate_trajectory(const ActivityScript& script, const GaitParams& params);

/// 120 Hz gyro/accelerometer streams for the thigh and shank links.
/// Gyro: Log(R(t)^T R(t + dt)) / dt. Accel: specific force R^T (a - g) at the
/// link midpoint, with g = (0, 9.81, 0) in the camera frame (y down).
sensors::ImuStreams simulate_imu(const Trajectory& trajectory, const SensorNoiseConfig& noise, std::uint64_t seed);

struct CameraFrame {
  std::array<sensors::Keypoint2D, skeleton::kNumJoints> keypoints;
  std::array<sensors::DepthMeasurement, skeleton::kNumJoints> depths;
};

std::vector<CameraFrame> simulate_camera(const GroundTruth& truth, const SensorNoiseConfig& noise, std::uint64_t seed);

struct KeyframeRecord {
  int index = 0;
  double timestamp = 0.0;
  skeleton::GaitState state;
  skeleton::JointSet joints;
  std::array<sensors::Keypoint2D, skeleton::kNumJoints> keypoints;
  std::array<sensors::DepthMeasurement, skeleton::kNumJoints> depths;
  Activity label = Activity::Standing;
  std::array<bool, 2> contact{true, true};
};

struct SimulatedRecording {
  ActivityScript script;
  GaitParams params;
  SensorNoiseConfig noise;
  double keyframe_rate = kKeyframeRate;
  double imu_rate = kImuRate;
  skeleton::LinkLengths lengths;
  std::vector<KeyframeRecord> keyframes;
  sensors::ImuStreams imu;

  GroundTruth ground_truth() const;
};

/// Ground truth plus camera and IMU simulation, all seeded from noise.seed.
SimulatedRecording simulate(const ActivityScript& script, const GaitParams& params, const SensorNoiseConfig& noise);

/// JSON-Lines: header line, one line per keyframe, one trailing line per IMU
/// stream.
void export_recording(const SimulatedRecording& rec, const std::filesystem::path& path);
SimulatedRecording import_recording(const std::filesystem::path& path);
std::string recording_to_jsonl(const SimulatedRecording& rec);
SimulatedRecording recording_from_jsonl(const std::string& text);

/// Script files use the same layout as the recording header's "script".
std::string script_to_json(const ActivityScript& script);
/// Throws ConfigError on malformed input.
ActivityScript script_from_json(const std::string& text);

struct CampaignEntry {
  int subject = 0;
  int trajectory = 0;
  ActivityScript script;
  GaitParams params;
  SensorNoiseConfig noise;
};

/// 5 subjects x 13 scripts mixing all five activities.
std::vector<CampaignEntry> default_campaign(std::uint64_t seed, const SensorNoiseConfig& noise);

/// Parameters of campaign subject `subject` (0..4).
GaitParams subject_params(int subject);

/// Standing start, then a walk straight away from the camera covering
/// `start_depth` to `end_depth`.
ActivityScript walk_away_script(double start_depth, double end_depth, double speed, double x_offset = 0.0);

}  // namespace koopgait::gaitsim
