#include "koopgait/koopman.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <json.hpp>

#include "koopgait/error.hpp"
#include "koopgait/state_binding.hpp"

namespace koopgait::koopman {

using skeleton::JointSet;
using skeleton::kNumJoints;
using skeleton::kNumLinks;

FourierBasis::FourierBasis(int dim, int order) : dim_(dim), order_(order) {
  if (dim < 1 || order < 0) throw ConfigError("Fourier basis needs dim >= 1 and order >= 0");
  long count = 1;
  for (int i = 0; i < dim; ++i) {
    count *= order + 1;
    if (count > kMaxFunctions) throw ConfigError("Fourier basis exceeds 10^6 functions");
  }
  coefficients_.resize(dim, count);
  for (long idx = 0; idx < count; ++idx) {
    long rem = idx;
    for (int c = dim - 1; c >= 0; --c) {
      coefficients_(c, idx) = static_cast<double>(rem % (order + 1));
      rem /= order + 1;
    }
  }
}

FourierBasis enumerate_basis(int dim, int order) { return FourierBasis(dim, order); }

Eigen::VectorXd eval_observables(const Eigen::VectorXd& x, const FourierBasis& basis) {
  if (x.size() != basis.dim()) throw ConfigError("observable input has wrong dimension");
  Eigen::VectorXd psi(basis.observable_size());
  psi.head(basis.dim()) = x;
  psi.tail(basis.size()) = (std::numbers::pi * (basis.coefficients().transpose() * x)).array().cos().matrix();
  return psi;
}

Eigen::MatrixXd observables_jacobian(const Eigen::VectorXd& x, const FourierBasis& basis) {
  Eigen::MatrixXd d(basis.observable_size(), basis.dim());
  d.topRows(basis.dim()).setIdentity();
  const Eigen::ArrayXd s = -(std::numbers::pi * (basis.coefficients().transpose() * x)).array().sin();
  d.bottomRows(basis.size()) =
      (std::numbers::pi * basis.coefficients().transpose()).array().colwise() * s;
  return d;
}

EdmdAccumulator::EdmdAccumulator(const FourierBasis& basis)
    : basis_(&basis),
      gram_(Eigen::MatrixXd::Zero(basis.observable_size(), basis.observable_size())),
      cross_(Eigen::MatrixXd::Zero(basis.observable_size(), basis.observable_size())) {}

void EdmdAccumulator::add(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double weight) {
  const Eigen::VectorXd px = eval_observables(x, *basis_);
  const Eigen::VectorXd py = eval_observables(y, *basis_);
  gram_.noalias() += weight * px * px.transpose();
  cross_.noalias() += weight * py * px.transpose();
  total_weight_ += weight;
  ++count_;
}

void EdmdAccumulator::add_batch(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys, const Eigen::VectorXd& weights) {
  const int d = basis_->dim();
  if (xs.rows() != d || ys.rows() != d || xs.cols() != ys.cols() || weights.size() != xs.cols()) {
    throw ConfigError("EDMD batch has inconsistent shape");
  }
  auto lift = [&](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd psi(basis_->observable_size(), m.cols());
    psi.topRows(d) = m;
    psi.bottomRows(basis_->size()) =
        (std::numbers::pi * (basis_->coefficients().transpose() * m)).array().cos().matrix();
    return psi;
  };
  const Eigen::MatrixXd px = lift(xs);
  const Eigen::MatrixXd py = lift(ys);
  const Eigen::MatrixXd pxw = px * weights.asDiagonal();
  gram_.noalias() += pxw * px.transpose();
  cross_.noalias() += py * pxw.transpose();
  total_weight_ += weights.sum();
  count_ += xs.cols();
}

Eigen::MatrixXd EdmdAccumulator::solve(double ridge) const {
  if (ridge < 0.0) throw ConfigError("ridge parameter must be nonnegative");
  if (!(total_weight_ > 0.0)) throw DataError("EDMD has no samples");
  // Sample averages, so the ridge is independent of the data set size.
  Eigen::MatrixXd g = gram_ / total_weight_;
  g.diagonal().array() += ridge;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(g);
  const double max_pivot = ldlt.vectorD().cwiseAbs().maxCoeff();
  const double min_pivot = ldlt.vectorD().minCoeff();
  if (ldlt.info() != Eigen::Success || !(min_pivot > 1e-13 * std::max(max_pivot, 1e-300))) {
    throw DataError("EDMD Gram matrix is singular; raise the ridge parameter");
  }
  // K = A G^-1  <=>  G K^T = A^T (G symmetric).
  return ldlt.solve(cross_.transpose() / total_weight_).transpose();
}

Eigen::MatrixXd train_edmd(const std::vector<Eigen::VectorXd>& xs, const std::vector<Eigen::VectorXd>& ys,
                           const FourierBasis& basis, double ridge) {
  if (xs.size() != ys.size() || xs.empty()) throw DataError("EDMD needs matching, nonempty pair lists");
  EdmdAccumulator acc(basis);
  for (std::size_t i = 0; i < xs.size(); ++i) acc.add(xs[i], ys[i]);
  return acc.solve(ridge);
}

KoopmanBank::KoopmanBank(FourierBasis basis, skeleton::NormalizationParams norm, double ridge, bool per_coordinate)
    : basis_(std::move(basis)), norm_(norm), ridge_(ridge), per_coordinate_(per_coordinate) {
  if (basis_.dim() != kNumJoints) throw ConfigError("Koopman bank basis must act on 7 joint coordinates");
}

bool KoopmanBank::has(Activity a) const { return !matrices_[static_cast<int>(a)].empty(); }

void KoopmanBank::set(Activity a, std::vector<Eigen::MatrixXd> matrices) {
  const std::size_t expected = per_coordinate_ ? 3 : 1;
  if (matrices.size() != expected) throw ConfigError("wrong number of Koopman matrices for activity");
  for (const auto& m : matrices) {
    if (m.rows() != basis_.observable_size() || m.cols() != basis_.observable_size()) {
      throw ConfigError("Koopman matrix shape does not match the basis");
    }
  }
  matrices_[static_cast<int>(a)] = std::move(matrices);
}

const Eigen::MatrixXd& KoopmanBank::matrix(Activity a, int axis) const {
  const auto& m = matrices_[static_cast<int>(a)];
  if (m.empty()) throw ConfigError("no Koopman matrix trained for activity " + std::string(activity_name(a)));
  return per_coordinate_ ? m.at(axis) : m.front();
}

std::string KoopmanBank::to_json() const {
  nlohmann::json j;
  j["format"] = "koopgait-koopman-bank";
  j["version"] = 1;
  auto& h = j["header"];
  h["dim"] = basis_.dim();
  h["order"] = basis_.order();
  h["enumeration"] =
      "coefficient vectors over {0..order}^dim in lexicographic order, first component most significant; "
      "observables = [x, cos(pi c^T x) for c in order]";
  h["observable_size"] = basis_.observable_size();
  h["c_min"] = norm_.c_min();
  h["c_max"] = norm_.c_max();
  h["ridge"] = ridge_;
  h["per_coordinate"] = per_coordinate_;
  h["layout"] = "row-major";
  std::vector<std::string> names;
  for (int a = 0; a < kNumActivities; ++a) names.emplace_back(activity_name(static_cast<Activity>(a)));
  h["activities"] = names;
  j["matrices"] = nlohmann::json::object();
  for (int a = 0; a < kNumActivities; ++a) {
    if (matrices_[a].empty()) continue;
    auto& list = j["matrices"][names[a]];
    list = nlohmann::json::array();
    for (const auto& m : matrices_[a]) {
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
      list.push_back(std::vector<double>(rm.data(), rm.data() + rm.size()));
    }
  }
  return j.dump();
}

KoopmanBank KoopmanBank::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "koopgait-koopman-bank") throw DataError("not a Koopman bank file");
    if (j.at("version") != 1) throw DataError("unsupported Koopman bank version");
    const auto& h = j.at("header");
    FourierBasis basis(h.at("dim").get<int>(), h.at("order").get<int>());
    KoopmanBank bank(basis, skeleton::NormalizationParams(h.at("c_min").get<double>(), h.at("c_max").get<double>()),
                     h.at("ridge").get<double>(), h.at("per_coordinate").get<bool>());
    const int p = basis.observable_size();
    for (const auto& [name, list] : j.at("matrices").items()) {
      std::vector<Eigen::MatrixXd> mats;
      for (const auto& payload : list) {
        const auto v = payload.get<std::vector<double>>();
        if (static_cast<int>(v.size()) != p * p) throw DataError("Koopman matrix payload has wrong size");
        mats.emplace_back(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            v.data(), p, p));
      }
      bank.set(activity_from_name(name), std::move(mats));
    }
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed Koopman bank: ") + e.what());
  }
}

namespace {

using Vector7 = Eigen::Matrix<double, kNumJoints, 1>;

/// Per-axis prediction in meters together with the pieces the Jacobian needs.
struct AxisPrediction {
  Vector7 predicted;
  Eigen::Matrix<double, kNumJoints, kNumJoints> d_normalized;  // K^[7] dPsi/dx̄
};

AxisPrediction predict_axis(const Vector7& coords, double anchor, const KoopmanBank& bank, Activity a, int axis,
                            bool with_jacobian) {
  const auto& norm = bank.normalization();
  const Eigen::VectorXd xbar = ((coords.array() - anchor - norm.c_min()) / norm.range()).matrix();
  const auto& k = bank.matrix(a, axis);
  const auto k7 = k.topRows(kNumJoints);
  AxisPrediction out;
  const Eigen::VectorXd ybar = k7 * eval_observables(xbar, bank.basis());
  out.predicted = (ybar.array() * norm.range() + norm.c_min() + anchor).matrix();
  if (with_jacobian) out.d_normalized = k7 * observables_jacobian(xbar, bank.basis());
  return out;
}

/// 3 x 27 Jacobian of a joint: root (3), rotations (18), lengths (6).
Eigen::Matrix<double, 3, 27> full_joint_jacobian(const skeleton::GaitState& s, const skeleton::LinkLengths& lengths,
                                                 int joint) {
  const auto jj = skeleton::joint_jacobians(s, lengths, joint);
  Eigen::Matrix<double, 3, 27> out;
  out.leftCols<3>() = jj.root;
  for (int l = 0; l < kNumLinks; ++l) {
    out.block<3, 3>(0, 3 + 3 * l) = jj.rotation[l];
    out.col(21 + l) = jj.length[l];
  }
  return out;
}

}  // namespace

JointSet predict_next(const JointSet& x, const KoopmanBank& bank, Activity activity) {
  const int foot = skeleton::SkeletonModel::lower_body().right_foot();
  JointSet out;
  for (int axis = 0; axis < 3; ++axis) {
    const auto p = predict_axis(x.coordinate(axis), x[foot][axis], bank, activity, axis, false);
    for (int j = 0; j < kNumJoints; ++j) out[j][axis] = p.predicted[j];
  }
  return out;
}

KoopmanResidual koopman_factor_residual(const skeleton::GaitState& sk, const skeleton::GaitState& sk1,
                                        const skeleton::LinkLengths& lengths, const KoopmanBank& bank,
                                        Activity activity) {
  const auto& model = skeleton::SkeletonModel::lower_body();
  const int foot = model.right_foot();
  const JointSet xk = skeleton::forward_kinematics(sk, lengths);
  const JointSet xk1 = skeleton::forward_kinematics(sk1, lengths);

  std::array<Eigen::Matrix<double, 3, 27>, kNumJoints> jk;
  std::array<Eigen::Matrix<double, 3, 27>, kNumJoints> jk1;
  for (int j = 0; j < kNumJoints; ++j) {
    jk[j] = full_joint_jacobian(sk, lengths, j);
    jk1[j] = full_joint_jacobian(sk1, lengths, j);
  }

  KoopmanResidual out;
  out.d_lengths.setZero();
  for (int axis = 0; axis < 3; ++axis) {
    const auto p = predict_axis(xk.coordinate(axis), xk[foot][axis], bank, activity, axis, true);

    // Rows of coordinate `axis` for every joint, and of the anchor.
    Eigen::Matrix<double, kNumJoints, 27> dx;
    for (int j = 0; j < kNumJoints; ++j) dx.row(j) = jk[j].row(axis);
    const Eigen::Matrix<double, 1, 27> danchor = jk[foot].row(axis);
    // d(prediction)/dX = range * K7 dPsi * (dx - 1 danchor) / range + 1 danchor
    const Eigen::Matrix<double, kNumJoints, 27> centered = dx.rowwise() - danchor;
    Eigen::Matrix<double, kNumJoints, 27> dpred = p.d_normalized * centered;
    dpred.rowwise() += danchor;

    for (int j = 0; j < kNumJoints; ++j) {
      const int row = 3 * j + axis;
      out.residual[row] = p.predicted[j] - xk1[j][axis];
      out.d_state_k.row(row) = dpred.row(j).head<21>();
      out.d_state_k1.row(row) = -jk1[j].row(axis).head<21>();
      out.d_lengths.row(row) = dpred.row(j).tail<6>() - jk1[j].row(axis).tail<6>();
    }
  }
  return out;
}

namespace {

std::vector<fg::VariableKey> koopman_keys(int keyframe) {
  auto keys = binding::keyframe_keys(keyframe);
  const auto next = binding::keyframe_keys(keyframe + 1);
  keys.insert(keys.end(), next.begin(), next.end());
  const auto lengths = binding::length_keys();
  keys.insert(keys.end(), lengths.begin(), lengths.end());
  return keys;
}

}  // namespace

KoopmanFactor::KoopmanFactor(int keyframe, const KoopmanBank& bank, Activity activity, double sigma)
    : fg::Factor(koopman_keys(keyframe), 21, fg::isotropic_information(21, sigma), "koopman"),
      keyframe_(keyframe),
      bank_(&bank),
      activity_(activity) {}

void KoopmanFactor::evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                             std::vector<Eigen::MatrixXd>* jacobians) const {
  const auto r = koopman_factor_residual(binding::gait_state(values, keyframe_),
                                         binding::gait_state(values, keyframe_ + 1), binding::link_lengths(values),
                                         *bank_, activity_);
  residual = r.residual;
  if (!jacobians) return;
  Eigen::MatrixXd j(21, 48);
  j.leftCols<21>() = r.d_state_k;
  j.middleCols<21>(21) = r.d_state_k1;
  j.rightCols<6>() = r.d_lengths;
  *jacobians = binding::split_columns(j, keys());
}

KoopmanBank train_bank(const std::vector<LabeledTrajectory>& trajectories, const KoopmanTrainingConfig& config) {
  if (config.rotations < 1) throw ConfigError("rotation augmentation count must be at least 1");
  const int foot = skeleton::SkeletonModel::lower_body().right_foot();

  std::vector<Eigen::Matrix3d> rots;
  for (int r = 0; r < config.rotations; ++r) {
    const double angle = 2.0 * std::numbers::pi * r / config.rotations;
    rots.push_back(Eigen::AngleAxisd(angle, skeleton::kUp).toRotationMatrix());
  }

  // Centered pairs (both on x_k's right foot) with their labels.
  struct Pair {
    Eigen::Matrix<double, 3, kNumJoints> x;
    Eigen::Matrix<double, 3, kNumJoints> y;
    Activity a;
  };
  std::vector<Pair> pairs;
  for (const auto& t : trajectories) {
    if (t.frames.size() != t.labels.size()) throw DataError("trajectory frames and labels differ in length");
    for (std::size_t k = 0; k + 1 < t.frames.size(); ++k) {
      Pair p;
      const Eigen::Vector3d anchor = t.frames[k][foot];
      for (int j = 0; j < kNumJoints; ++j) {
        p.x.col(j) = t.frames[k][j] - anchor;
        p.y.col(j) = t.frames[k + 1][j] - anchor;
      }
      p.a = t.labels[k];
      pairs.push_back(p);
    }
  }
  if (pairs.empty()) throw DataError("no consecutive frame pairs to train on");

  double c_min = std::numeric_limits<double>::infinity();
  double c_max = -c_min;
  for (const auto& p : pairs) {
    for (const auto& r : rots) {
      for (const auto* m : {&p.x, &p.y}) {
        const Eigen::Matrix<double, 3, kNumJoints> rm = r * *m;
        c_min = std::min(c_min, rm.minCoeff());
        c_max = std::max(c_max, rm.maxCoeff());
      }
    }
  }
  skeleton::NormalizationParams norm(c_min, c_max);
  FourierBasis basis(kNumJoints, config.order);
  KoopmanBank bank(basis, norm, config.ridge, config.per_coordinate);

  const int n_acc = config.per_coordinate ? 3 : 1;
  for (int a = 0; a < kNumActivities; ++a) {
    std::vector<EdmdAccumulator> accs(n_acc, EdmdAccumulator(bank.basis()));
    constexpr int kBatch = 4096;
    std::vector<Eigen::MatrixXd> bx(n_acc, Eigen::MatrixXd(kNumJoints, kBatch));
    std::vector<Eigen::MatrixXd> by(n_acc, Eigen::MatrixXd(kNumJoints, kBatch));
    std::vector<Eigen::VectorXd> bw(n_acc, Eigen::VectorXd(kBatch));
    std::vector<int> fill(n_acc, 0);
    auto flush = [&](int i) {
      if (fill[i] == 0) return;
      accs[i].add_batch(bx[i].leftCols(fill[i]), by[i].leftCols(fill[i]), bw[i].head(fill[i]));
      fill[i] = 0;
    };
    auto push = [&](int axis, const Eigen::Matrix<double, 3, kNumJoints>& x,
                    const Eigen::Matrix<double, 3, kNumJoints>& y, double w) {
      const int i = config.per_coordinate ? axis : 0;
      bx[i].col(fill[i]) = ((x.row(axis).array() - norm.c_min()) / norm.range()).transpose();
      by[i].col(fill[i]) = ((y.row(axis).array() - norm.c_min()) / norm.range()).transpose();
      bw[i][fill[i]] = w;
      if (++fill[i] == kBatch) flush(i);
    };

    bool any = false;
    for (const auto& p : pairs) {
      if (static_cast<int>(p.a) != a) continue;
      any = true;
      // The vertical coordinate is unchanged by rotations about the vertical
      // axis, so its copies collapse into one weighted sample.
      push(1, p.x, p.y, static_cast<double>(rots.size()));
      for (const auto& r : rots) {
        const Eigen::Matrix<double, 3, kNumJoints> rx = r * p.x;
        const Eigen::Matrix<double, 3, kNumJoints> ry = r * p.y;
        push(0, rx, ry, 1.0);
        push(2, rx, ry, 1.0);
      }
    }
    if (!any) continue;
    std::vector<Eigen::MatrixXd> mats;
    for (int i = 0; i < n_acc; ++i) {
      flush(i);
      mats.push_back(accs[i].solve(config.ridge));
    }
    bank.set(static_cast<Activity>(a), std::move(mats));
  }
  return bank;
}

}  // namespace koopgait::koopman
