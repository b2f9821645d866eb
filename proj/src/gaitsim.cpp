#include "koopgait/gaitsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "koopgait/error.hpp"

namespace koopgait::gaitsim {

using Eigen::Vector3d;
using skeleton::kNumJoints;
using skeleton::kNumLinks;
using skeleton::kUp;

namespace {

const Vector3d kDown{0.0, 1.0, 0.0};

// Walking keeps each hip-foot distance below this fraction of the leg length.
constexpr double kWalkReach = 0.99;
// Width of the smooth minimum on the sternum height (m).
constexpr double kHeightBlend = 0.008;

// Polynomial smooth minimum: C1, never above min(a, b), equal to it once the
// arguments differ by more than k.
double smooth_min(double a, double b, double k) {
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - 0.25 * h * h * k;
}

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

bool seated_activity(Activity a) { return a == Activity::Sitting || a == Activity::StandingUp; }

// Posture before the segment may run, and posture after it.
bool starts_seated(Activity a) { return seated_activity(a); }
bool ends_seated(Activity a) { return a == Activity::Sitting || a == Activity::SittingDown; }

int keyframe_count(double duration) {
  if (duration <= 0.0) return 0;
  return static_cast<int>(std::floor(duration * kKeyframeRate + 1e-9)) + 1;
}

}  // namespace

double ActivityScript::duration() const {
  double d = 0.0;
  for (const auto& s : segments) d += s.duration;
  return d;
}

void ActivityScript::validate() const {
  if (!(camera_height > 0.0)) throw ConfigError("camera height must be positive");
  if (!start.allFinite()) throw ConfigError("script start must be finite");
  bool seated = !segments.empty() && starts_seated(segments.front().activity);
  double chair = segments.empty() ? 0.0 : segments.front().chair_height;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    const std::string where = "segment " + std::to_string(i) + " (" + std::string(activity_name(s.activity)) + ")";
    if (!(s.duration > 0.0) || !std::isfinite(s.duration)) throw ConfigError(where + ": duration must be positive");
    if (s.heading != segments.front().heading) throw ConfigError(where + ": heading changes are not supported");
    if (starts_seated(s.activity) != seated) {
      throw ConfigError(where + ": incompatible transition from a " + (seated ? "seated" : "standing") + " posture");
    }
    if (s.activity == Activity::Walking && !(s.speed > 0.0)) throw ConfigError(where + ": walking speed must be positive");
    if (s.activity == Activity::SittingDown) chair = s.chair_height;
    if (seated_activity(s.activity) || s.activity == Activity::SittingDown) {
      if (s.chair_height != chair) throw ConfigError(where + ": chair height changes while seated");
    }
    seated = ends_seated(s.activity);
  }
}

void GaitParams::validate() const {
  for (double l : lengths) {
    if (!(l >= 0.3 && l <= 0.6)) throw ConfigError("link lengths must lie in [0.3, 0.6] m");
  }
  if (!(frequency >= 0.5 && frequency <= 1.5)) throw ConfigError("stride frequency must lie in [0.5, 1.5] Hz");
  if (!(duty_cycle > 0.5 && duty_cycle < 0.8)) throw ConfigError("duty cycle must lie in (0.5, 0.8)");
  if (!(hip_width > 0.0 && hip_width < 0.5 * std::min(lengths[0], lengths[3]))) {
    throw ConfigError("hip width must be positive and below half the sternum-hip length");
  }
  if (!(hip_amplitude > 0.0 && hip_amplitude < std::numbers::pi / 2)) throw ConfigError("hip amplitude out of range");
  if (!(knee_amplitude > 0.0 && knee_amplitude < std::numbers::pi)) throw ConfigError("knee amplitude out of range");
  if (!(step_height >= 0.0 && step_height < 0.3)) throw ConfigError("step height out of range");
  if (!(stand_extension > 0.8 && stand_extension < 1.0)) throw ConfigError("stand extension must lie in (0.8, 1)");
}

void SensorNoiseConfig::validate() const {
  if (keypoint_sigma < 0.0 || depth_sigma0 < 0.0 || depth_kappa < 0.0 || gyro_sigma < 0.0 || accel_sigma < 0.0) {
    throw ConfigError("noise parameters must be nonnegative");
  }
}

SensorNoiseConfig SensorNoiseConfig::zero() {
  SensorNoiseConfig n;
  n.keypoint_sigma = n.depth_sigma0 = n.depth_kappa = n.gyro_sigma = n.accel_sigma = 0.0;
  return n;
}

Trajectory::Trajectory(ActivityScript script, GaitParams params)
    : script_(std::move(script)), params_(params), lengths_(params.lengths) {
  script_.validate();
  params_.validate();
  const auto& L = params_.lengths;
  const double w = params_.hip_width;
  pelvis_drop_ = {std::sqrt(L[0] * L[0] - w * w), std::sqrt(L[3] * L[3] - w * w)};
  const double ext = params_.stand_extension;
  stand_height_ = std::min(pelvis_drop_[0] + ext * (L[1] + L[2]), pelvis_drop_[1] + ext * (L[4] + L[5]));
  reach_ = {kWalkReach * (L[1] + L[2]), kWalkReach * (L[4] + L[5])};
  const double reach = std::min(reach_[0], reach_[1]);

  const double heading = script_.segments.empty() ? 0.0 : script_.segments.front().heading;
  const Vector3d forward(std::sin(heading), 0.0, std::cos(heading));
  const Vector3d right = forward.cross(kUp);
  Vector3d ground(script_.start.x(), script_.camera_height, script_.start.y());

  double t0 = 0.0;
  for (const auto& seg : script_.segments) {
    Plan p;
    p.segment = seg;
    p.t0 = t0;
    p.root_start = ground;
    p.forward = forward;
    p.right = right;
    p.feet_start = {ground + w * right, ground - w * right};
    if (seg.activity == Activity::SittingDown || seated_activity(seg.activity)) {
      const double hc = seg.chair_height;
      for (int s = 0; s < 2; ++s) {
        const double a = L[1 + 3 * s], b = L[2 + 3 * s];
        if (!(hc > 0.25 && std::abs(hc - b) < 0.9 * a)) throw ConfigError("chair height incompatible with leg lengths");
      }
    }
    if (seg.activity == Activity::Walking) {
      const double f = params_.frequency;
      const double d = params_.duty_cycle;
      p.ramp = 0.5 / f;
      p.settle = 1.0 / f;
      if (seg.duration < 2.0 * p.ramp + p.settle + 0.5 / f) {
        throw ConfigError("walking segment shorter than " + std::to_string(2.5 / f) + " s");
      }
      p.cruise = seg.speed * seg.duration / (seg.duration - p.settle - p.ramp);
      if (p.cruise * d / (2.0 * f) >= 0.95 * reach) throw ConfigError("walking speed too high for the leg lengths");
      const double stop = seg.duration;
      for (int s = 0; s < 2; ++s) {
        const double phase0 = d + 0.5 * s;  // right foot lifts first
        const Vector3d lateral = (s == 0 ? w : -w) * right;
        for (int n = static_cast<int>(std::floor(phase0)) - 1;; ++n) {
          Stance st;
          st.start = (n - phase0) / f;
          st.end = st.start + d / f;
          if (st.end <= 0.0 || st.start <= 0.0) {
            st.position = p.feet_start[s];
          } else {
            const double mid = std::min(0.5 * (st.start + st.end), stop);
            st.position = ground + walk_distance(p, mid) * forward + lateral;
          }
          p.stances[s].push_back(st);
          if (st.start > stop) break;
        }
      }
      p.rest_time = seg.duration - p.settle;
      for (const auto& st : p.stances) {
        for (std::size_t i = 1; i < st.size(); ++i) {
          if ((st[i].position - st[i - 1].position).norm() > 1e-12) p.rest_time = std::max(p.rest_time, st[i].start);
        }
      }
      p.rest_time = std::min(p.rest_time, seg.duration);
      ground += walk_distance(p, seg.duration) * forward;
    }
    plans_.push_back(std::move(p));
    t0 += seg.duration;
  }
  duration_ = t0;

  // Validate the walking caps on a fine grid.
  for (const auto& p : plans_) {
    if (p.segment.activity != Activity::Walking) continue;
    for (double tau = 0.0; tau <= p.segment.duration; tau += 1.0 / 120.0) {
      const auto s = solve_state(walking_pose(p, tau), p.forward, p.right);
      for (int side = 0; side < 2; ++side) {
        const Vector3d thigh = s.rotations[1 + 3 * side].matrix().col(2);
        const Vector3d shank = s.rotations[2 + 3 * side].matrix().col(2);
        if (std::acos(std::clamp(thigh.dot(kDown), -1.0, 1.0)) > params_.hip_amplitude + 1e-9) {
          throw ConfigError("walking exceeds the hip amplitude");
        }
        if (std::acos(std::clamp(thigh.dot(shank), -1.0, 1.0)) > params_.knee_amplitude + 1e-9) {
          throw ConfigError("walking exceeds the knee amplitude");
        }
      }
    }
  }
}

double Trajectory::walk_speed(const Plan& p, double tau) const {
  const double t3 = p.segment.duration - p.settle;
  const double t2 = t3 - p.ramp;
  if (tau <= 0.0) return 0.0;
  if (tau < p.ramp) return p.cruise * tau / p.ramp;
  if (tau < t2) return p.cruise;
  if (tau < t3) return p.cruise * (t3 - tau) / p.ramp;
  return 0.0;
}

double Trajectory::walk_distance(const Plan& p, double tau) const {
  const double t3 = p.segment.duration - p.settle;
  const double t2 = t3 - p.ramp;
  const double total = p.cruise * (t3 - p.ramp);
  if (tau <= 0.0) return 0.0;
  if (tau < p.ramp) return p.cruise * tau * tau / (2.0 * p.ramp);
  if (tau < t2) return p.cruise * (0.5 * p.ramp + tau - p.ramp);
  if (tau < t3) return total - p.cruise * (t3 - tau) * (t3 - tau) / (2.0 * p.ramp);
  return total;
}

Vector3d Trajectory::standing_sternum(const Plan& p) const { return p.root_start + stand_height_ * kUp; }

Vector3d Trajectory::seated_sternum(const Plan& p) const {
  const auto& L = params_.lengths;
  const double hc = p.segment.chair_height;
  const double a = L[1], b = L[2];
  const double back = 0.95 * std::sqrt(a * a - (hc - b) * (hc - b));
  return p.root_start - back * p.forward + (hc + pelvis_drop_[0]) * kUp;
}

Trajectory::Pose Trajectory::walking_pose(const Plan& p, double tau) const {
  Pose out;
  const double stride = p.cruise / params_.frequency;
  for (int s = 0; s < 2; ++s) {
    const auto& st = p.stances[s];
    out.feet[s] = st.back().position;
    for (std::size_t i = 0; i < st.size(); ++i) {
      if (tau < st[i].start) {
        // Swing between stance i-1 and i.
        const auto& a = st[i - 1];
        const auto& b = st[i];
        const double u = (tau - a.end) / (b.start - a.end);
        const Vector3d step = b.position - a.position;
        const double len = step.norm();
        if (len <= 1e-12) {
          out.feet[s] = a.position;
          break;
        }
        const double lift = params_.step_height * std::min(1.0, len / stride) * std::pow(std::sin(std::numbers::pi * u), 2);
        out.feet[s] = a.position + smoothstep(u) * step + lift * kUp;
        out.contact[s] = false;
        out.moving = true;
        break;
      }
      if (tau < st[i].end) {
        out.feet[s] = st[i].position;
        break;
      }
    }
  }
  if (tau < p.rest_time) out.moving = true;

  // Standing height unless a foot is out of reach; the smooth minimum lowers
  // the sternum around double support.
  const Vector3d base = p.root_start + walk_distance(p, tau) * p.forward;
  double height = stand_height_;
  for (int s = 0; s < 2; ++s) {
    const Vector3d hip = base + (s == 0 ? 1.0 : -1.0) * params_.hip_width * p.right;
    Vector3d v = out.feet[s] - hip;
    const double lift = (out.feet[s] - p.root_start).dot(kUp);
    v -= v.dot(kUp) * kUp;
    const double r2 = reach_[s] * reach_[s] - v.squaredNorm();
    if (r2 <= 0.0) throw ConfigError("foot target out of reach while walking");
    height = smooth_min(height, pelvis_drop_[s] + lift + std::sqrt(r2), kHeightBlend);
  }
  out.sternum = base + height * kUp;
  return out;
}

const Trajectory::Plan& Trajectory::plan_at(double t) const {
  if (plans_.empty()) throw DataError("trajectory has no segments");
  for (const auto& p : plans_) {
    if (t < p.t0 + p.segment.duration) return p;
  }
  return plans_.back();
}

Trajectory::Pose Trajectory::pose(double t) const {
  t = std::clamp(t, 0.0, duration_);
  const Plan& p = plan_at(t);
  const double tau = std::min(t - p.t0, p.segment.duration);
  Pose out;
  out.feet = p.feet_start;
  switch (p.segment.activity) {
    case Activity::Walking:
      return walking_pose(p, tau);
    case Activity::Standing:
      out.sternum = standing_sternum(p);
      break;
    case Activity::Sitting:
      out.sternum = seated_sternum(p);
      break;
    case Activity::SittingDown:
    case Activity::StandingUp: {
      double u = smoothstep(tau / p.segment.duration);
      if (p.segment.activity == Activity::StandingUp) u = 1.0 - u;
      out.sternum = standing_sternum(p) + u * (seated_sternum(p) - standing_sternum(p));
      out.moving = true;
      break;
    }
  }
  return out;
}

skeleton::GaitState Trajectory::solve_state(const Pose& pose, const Vector3d& forward, const Vector3d& right) const {
  const auto& L = params_.lengths;
  const double w = params_.hip_width;
  std::array<Vector3d, kNumJoints> j;
  j[0] = pose.sternum;
  for (int s = 0; s < 2; ++s) {
    const int hip = 1 + 3 * s;
    const double a = L[hip], b = L[hip + 1];
    const Vector3d h = pose.sternum + (s == 0 ? w : -w) * right + pelvis_drop_[s] * kDown;
    const Vector3d f = pose.feet[s];
    const Vector3d hf = f - h;
    const double d = hf.norm();
    if (d > (a + b) * (1.0 - 1e-12) || d < std::abs(a - b) + 1e-9) {
      throw ConfigError("leg cannot reach its foot target");
    }
    const Vector3d u = hf / d;
    const double along = (a * a - b * b + d * d) / (2.0 * d);
    const double across = std::sqrt(std::max(0.0, a * a - along * along));
    Vector3d perp = forward - forward.dot(u) * u;
    if (perp.norm() < 1e-9) throw ConfigError("degenerate knee plane");
    perp.normalize();
    j[hip] = h;
    j[hip + 1] = h + along * u + across * perp;
    j[hip + 2] = f;
  }
  skeleton::GaitState state;
  state.root = j[0];
  const auto& model = skeleton::SkeletonModel::lower_body();
  for (int l = 0; l < kNumLinks; ++l) {
    const auto& link = model.links()[l];
    state.rotations[l] = skeleton::Rotation::from_axes(j[link.child] - j[link.parent], right);
  }
  return state;
}

skeleton::GaitState Trajectory::state(double t) const {
  const Plan& p = plan_at(std::clamp(t, 0.0, duration_));
  return solve_state(pose(t), p.forward, p.right);
}

skeleton::JointSet Trajectory::joints(double t) const { return skeleton::forward_kinematics(state(t), lengths_); }

Activity Trajectory::activity(double t) const {
  t = std::clamp(t, 0.0, duration_);
  const Plan& p = plan_at(t);
  if (p.segment.activity == Activity::Walking && t - p.t0 >= p.rest_time) return Activity::Standing;
  return p.segment.activity;
}

std::array<bool, 2> Trajectory::contact(double t) const { return pose(t).contact; }

GroundTruth generate_trajectory(const Trajectory& trajectory) {
  GroundTruth g;
  g.lengths = trajectory.lengths();
  const int n = keyframe_count(trajectory.duration());
  for (int k = 0; k < n; ++k) {
    const double t = k / kKeyframeRate;
    g.timestamps.push_back(t);
    g.states.push_back(trajectory.state(t));
    g.joints.push_back(skeleton::forward_kinematics(g.states.back(), g.lengths));
    g.labels.push_back(trajectory.activity(t));
    g.contacts.push_back(trajectory.contact(t));
  }
  return g;
}

GroundTruth generate_trajectory(const ActivityScript& script, const GaitParams& params) {
  return generate_trajectory(Trajectory(script, params));
}

sensors::ImuStreams simulate_imu(const Trajectory& trajectory, const SensorNoiseConfig& noise, std::uint64_t seed) {
  noise.validate();
  sensors::ImuStreams streams;
  if (trajectory.duration() <= 0.0) return streams;
  const int n = static_cast<int>(std::floor(trajectory.duration() * kImuRate + 1e-9)) + 1;
  const double dt = 1.0 / kImuRate;
  constexpr double h = 1e-3;  // accelerometer differencing step
  const Vector3d gravity(0.0, sensors::kGravity, 0.0);
  const auto& model = skeleton::SkeletonModel::lower_body();
  const auto& lengths = trajectory.lengths();

  auto midpoints = [&](double t) {
    const auto j = skeleton::forward_kinematics(trajectory.state(t), lengths);
    std::array<Vector3d, kNumLinks> m;
    for (int l = 0; l < kNumLinks; ++l) m[l] = 0.5 * (j[model.links()[l].parent] + j[model.links()[l].child]);
    return m;
  };

  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](double sigma) {
    Vector3d v(normal(rng), normal(rng), normal(rng));
    return Vector3d(sigma * v);
  };

  skeleton::GaitState current = trajectory.state(0.0);
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    const skeleton::GaitState next = trajectory.state((i + 1) * dt);
    const auto m0 = midpoints(t - h);
    const auto m1 = midpoints(t);
    const auto m2 = midpoints(t + h);
    for (int link : sensors::kImuLinks) {
      sensors::ImuSample s;
      s.timestamp = t;
      s.link = link;
      const auto& r = current.rotations[link];
      s.gyro = skeleton::so3_log(r.inverse() * next.rotations[link]) / dt + draw(noise.gyro_sigma);
      const Vector3d accel = (m2[link] - 2.0 * m1[link] + m0[link]) / (h * h);
      s.accel = r.matrix().transpose() * (accel - gravity) + draw(noise.accel_sigma);
      streams[link].push_back(s);
    }
    current = next;
  }
  return streams;
}

std::vector<CameraFrame> simulate_camera(const GroundTruth& truth, const SensorNoiseConfig& noise, std::uint64_t seed) {
  noise.validate();
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<CameraFrame> frames;
  for (std::size_t k = 0; k < truth.joints.size(); ++k) {
    CameraFrame f;
    for (int j = 0; j < kNumJoints; ++j) {
      const Vector3d& p = truth.joints[k][j];
      const double nu = normal(rng), nv = normal(rng), nd = normal(rng);
      const bool visible = p.z() > sensors::kDefaultMinDepth;
      auto& kp = f.keypoints[j];
      kp.joint = j;
      kp.keyframe = static_cast<int>(k);
      kp.valid = visible;
      if (visible) kp.uv = Eigen::Vector2d(p.x() / p.z() + noise.keypoint_sigma * nu, p.y() / p.z() + noise.keypoint_sigma * nv);
      auto& dm = f.depths[j];
      dm.joint = j;
      dm.keyframe = static_cast<int>(k);
      dm.depth = p.z() + noise.depth_sigma(p.z()) * nd;
      dm.valid = visible && dm.depth > sensors::kDefaultMinDepth;
      if (!dm.valid) dm.depth = 0.0;
    }
    frames.push_back(f);
  }
  return frames;
}

GroundTruth SimulatedRecording::ground_truth() const {
  GroundTruth g;
  g.lengths = lengths;
  for (const auto& k : keyframes) {
    g.timestamps.push_back(k.timestamp);
    g.states.push_back(k.state);
    g.joints.push_back(k.joints);
    g.labels.push_back(k.label);
    g.contacts.push_back(k.contact);
  }
  return g;
}

SimulatedRecording simulate(const ActivityScript& script, const GaitParams& params, const SensorNoiseConfig& noise) {
  noise.validate();
  SimulatedRecording rec;
  rec.script = script;
  rec.params = params;
  rec.noise = noise;
  rec.lengths = skeleton::LinkLengths(params.lengths);
  if (script.segments.empty()) {
    script.validate();
    params.validate();
    return rec;
  }
  const Trajectory traj(script, params);
  const GroundTruth truth = generate_trajectory(traj);
  const auto camera = simulate_camera(truth, noise, noise.seed);
  rec.imu = simulate_imu(traj, noise, noise.seed);
  for (std::size_t k = 0; k < truth.states.size(); ++k) {
    KeyframeRecord r;
    r.index = static_cast<int>(k);
    r.timestamp = truth.timestamps[k];
    r.state = truth.states[k];
    r.joints = truth.joints[k];
    r.keypoints = camera[k].keypoints;
    r.depths = camera[k].depths;
    r.label = truth.labels[k];
    r.contact = truth.contacts[k];
    rec.keyframes.push_back(r);
  }
  return rec;
}

GaitParams subject_params(int subject) {
  struct Row {
    double pelvis, thigh, shank, width, freq, duty;
  };
  static constexpr std::array<Row, 5> kSubjects{{
      {0.45, 0.45, 0.45, 0.10, 1.00, 0.60},
      {0.42, 0.42, 0.43, 0.09, 1.10, 0.62},
      {0.48, 0.48, 0.47, 0.11, 0.90, 0.60},
      {0.44, 0.40, 0.41, 0.10, 1.05, 0.58},
      {0.50, 0.50, 0.49, 0.12, 0.95, 0.61},
  }};
  if (subject < 0 || subject >= static_cast<int>(kSubjects.size())) throw ConfigError("subject index out of range");
  const Row& r = kSubjects[subject];
  GaitParams p;
  p.lengths = {r.pelvis, r.thigh, r.shank, r.pelvis, r.thigh, r.shank};
  p.hip_width = r.width;
  p.frequency = r.freq;
  p.duty_cycle = r.duty;
  return p;
}

std::vector<CampaignEntry> default_campaign(std::uint64_t seed, const SensorNoiseConfig& noise) {
  using A = Activity;
  // (activity, nominal duration); walking speed and chair height are drawn per entry.
  using Template = std::vector<std::pair<A, double>>;
  const std::array<Template, 13> templates{{
      {{A::Standing, 2.0}, {A::Walking, 8.0}, {A::Standing, 2.0}},
      {{A::Sitting, 2.0}, {A::StandingUp, 2.0}, {A::Standing, 1.5}, {A::Walking, 8.0}, {A::Standing, 1.5}},
      {{A::Standing, 1.5}, {A::SittingDown, 2.0}, {A::Sitting, 3.0}, {A::StandingUp, 2.0}, {A::Standing, 1.5}},
      {{A::Walking, 10.0}, {A::Standing, 2.0}, {A::SittingDown, 2.0}, {A::Sitting, 2.0}},
      {{A::Sitting, 3.0}, {A::StandingUp, 2.5}, {A::Standing, 2.0}, {A::SittingDown, 2.5}, {A::Sitting, 2.0}},
      {{A::Standing, 1.0}, {A::Walking, 6.0}, {A::Standing, 1.0}, {A::Walking, 6.0}, {A::Standing, 1.0}},
      {{A::Standing, 3.0}, {A::Walking, 9.0}, {A::Standing, 3.0}},
      {{A::Sitting, 1.5}, {A::StandingUp, 2.0}, {A::Walking, 7.0}, {A::Standing, 1.0}},
      {{A::Standing, 2.0}, {A::SittingDown, 2.0}, {A::Sitting, 2.0}, {A::StandingUp, 2.0}, {A::Walking, 8.0},
       {A::Standing, 2.0}},
      {{A::Walking, 11.0}, {A::Standing, 2.0}},
      {{A::Standing, 1.0}, {A::Walking, 5.0}, {A::Standing, 1.0}, {A::SittingDown, 2.0}, {A::Sitting, 2.0},
       {A::StandingUp, 2.0}, {A::Standing, 1.0}},
      {{A::Standing, 2.0}, {A::SittingDown, 3.0}, {A::Sitting, 4.0}, {A::StandingUp, 3.0}, {A::Standing, 2.0}},
      {{A::Walking, 8.0}, {A::Standing, 2.0}, {A::Walking, 6.0}, {A::Standing, 1.0}},
  }};
  const std::array<double, 5> headings{0.0, 0.3, -0.3, 0.6, -0.6};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<CampaignEntry> out;
  for (int s = 0; s < 5; ++s) {
    for (int i = 0; i < static_cast<int>(templates.size()); ++i) {
      CampaignEntry e;
      e.subject = s;
      e.trajectory = i;
      e.params = subject_params(s);
      e.noise = noise;
      e.noise.seed = seed * 1000 + s * 100 + i;
      const double speed = 0.6 + 0.4 * unit(rng);
      const double chair = 0.42 + 0.08 * unit(rng);
      const double heading = headings[(s + i) % headings.size()];
      for (const auto& [a, d] : templates[i]) {
        Segment seg;
        seg.activity = a;
        seg.duration = d * (0.85 + 0.3 * unit(rng));
        seg.speed = a == A::Walking ? speed : 0.0;
        seg.heading = heading;
        seg.chair_height = chair;
        e.script.segments.push_back(seg);
      }
      e.script.start = Eigen::Vector2d(-0.5 + unit(rng), 3.0 + unit(rng));
      out.push_back(std::move(e));
    }
  }
  return out;
}

ActivityScript walk_away_script(double start_depth, double end_depth, double speed, double x_offset) {
  if (!(end_depth > start_depth) || !(speed > 0.0)) throw ConfigError("walk-away script needs end > start and speed > 0");
  ActivityScript s;
  s.start = Eigen::Vector2d(x_offset, start_depth);
  Segment stand;
  stand.activity = Activity::Standing;
  stand.duration = 1.0;
  Segment walk;
  walk.activity = Activity::Walking;
  walk.speed = speed;
  walk.duration = (end_depth - start_depth) / speed;
  Segment rest = stand;
  rest.duration = 0.5;
  s.segments = {stand, walk, rest};
  return s;
}

}  // namespace koopgait::gaitsim
