#include "koopgait/fgcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>

#include "koopgait/error.hpp"

namespace koopgait::fg {

using skeleton::Rotation;

std::string VariableKey::str() const {
  std::ostringstream os;
  switch (kind) {
    case VariableKind::RootPosition: os << "root[k=" << keyframe << "]"; break;
    case VariableKind::LinkRotation: os << "R[k=" << keyframe << ",link=" << link << "]"; break;
    case VariableKind::LinkLength: os << "l[link=" << link << "]"; break;
  }
  return os.str();
}

void Values::insert(const VariableKey& key, Value value) {
  const bool ok = (key.kind == VariableKind::RootPosition && std::holds_alternative<Eigen::Vector3d>(value)) ||
                  (key.kind == VariableKind::LinkRotation && std::holds_alternative<Rotation>(value)) ||
                  (key.kind == VariableKind::LinkLength && std::holds_alternative<double>(value));
  if (!ok) throw ConfigError("value type does not match variable " + key.str());
  values_.insert_or_assign(key, std::move(value));
}

const Value& Values::at(const VariableKey& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("no value for variable " + key.str());
  return it->second;
}

const Eigen::Vector3d& Values::position(const VariableKey& key) const { return std::get<Eigen::Vector3d>(at(key)); }
const Rotation& Values::rotation(const VariableKey& key) const { return std::get<Rotation>(at(key)); }
double Values::length(const VariableKey& key) const { return std::get<double>(at(key)); }

void Values::retract(const VariableKey& key, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("no value for variable " + key.str());
  std::visit(
      [&](auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Eigen::Vector3d>) {
          v += delta.head<3>();
        } else if constexpr (std::is_same_v<T, Rotation>) {
          v = v.retract(delta.head<3>());
        } else {
          v += delta[0];
        }
      },
      it->second);
}

Eigen::MatrixXd isotropic_information(int dim, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("noise sigma must be positive");
  return Eigen::MatrixXd::Identity(dim, dim) / (sigma * sigma);
}

Factor::Factor(std::vector<VariableKey> keys, int residual_dim, Eigen::MatrixXd information, std::string name)
    : keys_(std::move(keys)), residual_dim_(residual_dim), name_(std::move(name)) {
  set_information(std::move(information));
}

void Factor::set_information(Eigen::MatrixXd information) {
  if (information.rows() != residual_dim_ || information.cols() != residual_dim_) {
    throw ConfigError("factor " + name_ + ": information matrix has wrong shape");
  }
  if (!information.isApprox(information.transpose(), 1e-12)) {
    throw ConfigError("factor " + name_ + ": information matrix not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(information);
  if (llt.info() != Eigen::Success) {
    throw ConfigError("factor " + name_ + ": information matrix not positive definite");
  }
  sqrt_information_ = llt.matrixU();
  information_ = std::move(information);
}

PositionPrior::PositionPrior(VariableKey key, Eigen::Vector3d target, double sigma, std::string name)
    : Factor({key}, 3, isotropic_information(3, sigma), std::move(name)), target_(std::move(target)) {}

void PositionPrior::evaluate(const Values& values, Eigen::VectorXd& residual,
                             std::vector<Eigen::MatrixXd>* jacobians) const {
  residual = values.position(keys()[0]) - target_;
  if (jacobians) jacobians->assign(1, Eigen::MatrixXd::Identity(3, 3));
}

RotationPrior::RotationPrior(VariableKey key, Rotation target, double sigma, std::string name)
    : Factor({key}, 3, isotropic_information(3, sigma), std::move(name)), target_(std::move(target)) {}

void RotationPrior::evaluate(const Values& values, Eigen::VectorXd& residual,
                             std::vector<Eigen::MatrixXd>* jacobians) const {
  const Eigen::Vector3d r = skeleton::so3_log(target_.inverse() * values.rotation(keys()[0]));
  residual = r;
  if (jacobians) jacobians->assign(1, skeleton::right_jacobian_inverse(r));
}

LengthPrior::LengthPrior(VariableKey key, double target, double sigma, std::string name)
    : Factor({key}, 1, isotropic_information(1, sigma), std::move(name)), target_(target) {}

void LengthPrior::evaluate(const Values& values, Eigen::VectorXd& residual,
                           std::vector<Eigen::MatrixXd>* jacobians) const {
  residual.resize(1);
  residual[0] = values.length(keys()[0]) - target_;
  if (jacobians) jacobians->assign(1, Eigen::MatrixXd::Ones(1, 1));
}

void WindowGraph::add_variable(const VariableKey& key) {
  if (has_variable(key)) throw ConfigError("duplicate variable " + key.str());
  variables_.push_back(key);
}

void WindowGraph::add_factor(FactorPtr factor) {
  if (!factor) throw ConfigError("null factor");
  factors_.push_back(std::move(factor));
}

bool WindowGraph::has_variable(const VariableKey& key) const {
  return std::find(variables_.begin(), variables_.end(), key) != variables_.end();
}

void WindowGraph::remove_keyframe(int keyframe) {
  std::erase_if(factors_, [&](const FactorPtr& f) {
    return std::any_of(f->keys().begin(), f->keys().end(),
                       [&](const VariableKey& k) { return k.keyframe == keyframe; });
  });
  std::erase_if(variables_, [&](const VariableKey& k) { return k.keyframe == keyframe; });
}

std::vector<int> WindowGraph::keyframes() const {
  std::set<int> ks;
  for (const auto& v : variables_) {
    if (v.kind != VariableKind::LinkLength) ks.insert(v.keyframe);
  }
  return {ks.begin(), ks.end()};
}

int WindowGraph::tangent_dim() const {
  int n = 0;
  for (const auto& v : variables_) n += v.tangent_dim();
  return n;
}

void WindowGraph::validate() const {
  std::map<VariableKey, int> index;
  for (std::size_t i = 0; i < variables_.size(); ++i) index[variables_[i]] = static_cast<int>(i);
  std::vector<int> parent(variables_.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (const auto& f : factors_) {
    int first = -1;
    for (const auto& k : f->keys()) {
      auto it = index.find(k);
      if (it == index.end()) {
        throw ConfigError("factor " + f->name() + " references missing variable " + k.str());
      }
      if (first < 0) {
        first = it->second;
      } else {
        parent[find(it->second)] = find(first);
      }
    }
  }
  for (std::size_t i = 1; i < variables_.size(); ++i) {
    if (find(static_cast<int>(i)) != find(0)) {
      throw ConfigError("factor graph is disconnected at " + variables_[i].str());
    }
  }
}

namespace {

std::map<VariableKey, int> tangent_offsets(const WindowGraph& graph) {
  std::map<VariableKey, int> offsets;
  int n = 0;
  for (const auto& v : graph.variables()) {
    offsets[v] = n;
    n += v.tangent_dim();
  }
  return offsets;
}

void check_finite(const Factor& f, const Eigen::VectorXd& r, const std::vector<Eigen::MatrixXd>* jac) {
  bool ok = r.allFinite();
  if (jac) {
    for (const auto& j : *jac) ok = ok && j.allFinite();
  }
  if (!ok) {
    std::string keys;
    for (const auto& k : f.keys()) keys += " " + k.str();
    throw SolverError("non-finite residual or Jacobian in factor " + f.name() + " over" + keys);
  }
}

Values retract_all(const WindowGraph& graph, const std::map<VariableKey, int>& offsets, const Values& x,
                   const Eigen::VectorXd& delta) {
  Values out = x;
  for (const auto& v : graph.variables()) {
    out.retract(v, delta.segment(offsets.at(v), v.tangent_dim()));
  }
  return out;
}

}  // namespace

NormalSystem linearize(const WindowGraph& graph, const Values& estimate) {
  NormalSystem sys;
  sys.offsets = tangent_offsets(graph);
  const int n = graph.tangent_dim();
  sys.hessian = Eigen::MatrixXd::Zero(n, n);
  sys.gradient = Eigen::VectorXd::Zero(n);

  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> jac;
  std::vector<Eigen::MatrixXd> whitened;
  for (const auto& f : graph.factors()) {
    f->evaluate(estimate, r, &jac);
    check_finite(*f, r, &jac);
    const auto& u = f->sqrt_information();
    const Eigen::VectorXd rw = u * r;
    sys.cost += rw.squaredNorm();
    const auto& keys = f->keys();
    whitened.resize(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) whitened[i] = u * jac[i];
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const int oi = sys.offsets.at(keys[i]);
      const int di = keys[i].tangent_dim();
      sys.gradient.segment(oi, di).noalias() -= whitened[i].transpose() * rw;
      for (std::size_t j = i; j < keys.size(); ++j) {
        const int oj = sys.offsets.at(keys[j]);
        const int dj = keys[j].tangent_dim();
        const Eigen::MatrixXd block = whitened[i].transpose() * whitened[j];
        sys.hessian.block(oi, oj, di, dj) += block;
        if (j != i) sys.hessian.block(oj, oi, dj, di) += block.transpose();
      }
    }
  }
  return sys;
}

double total_cost(const WindowGraph& graph, const Values& estimate) {
  double cost = 0.0;
  Eigen::VectorXd r;
  for (const auto& f : graph.factors()) {
    f->evaluate(estimate, r, nullptr);
    check_finite(*f, r, nullptr);
    cost += (f->sqrt_information() * r).squaredNorm();
  }
  return cost;
}

void SolverConfig::validate() const {
  if (max_iterations <= 0 || !(initial_damping > 0.0) || !(damping_increase > 1.0) ||
      !(damping_decrease > 0.0 && damping_decrease < 1.0) || !(max_damping > initial_damping) ||
      !(cost_tolerance > 0.0) || !(step_tolerance > 0.0)) {
    throw ConfigError("solver configuration values must be positive (and damping factors on the right side of 1)");
  }
}

SolveResult solve_lm(const WindowGraph& graph, const Values& initial, const SolverConfig& config) {
  config.validate();
  graph.validate();

  SolveResult result;
  result.estimate = initial;
  NormalSystem sys = linearize(graph, result.estimate);
  double cost = sys.cost;
  result.initial_cost = cost;
  double damping = config.initial_damping;
  result.termination = "max iterations";

  for (int it = 0; it < config.max_iterations; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    rec.damping = damping;

    if (cost == 0.0) {
      result.termination = "zero cost";
      break;
    }

    const Eigen::VectorXd scale = sys.hessian.diagonal().cwiseMax(1e-6).cwiseMin(1e32);
    Eigen::MatrixXd damped = sys.hessian;
    damped.diagonal() += damping * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(damped);
    if (llt.info() != Eigen::Success) {
      rec.cost = cost;
      result.report.push_back(rec);
      damping *= config.damping_increase;
      if (damping > config.max_damping) {
        std::ostringstream os;
        os << "damped normal system singular up to damping " << damping / config.damping_increase;
        throw SolverError(os.str());
      }
      continue;
    }
    const Eigen::VectorXd delta = llt.solve(sys.gradient);
    rec.step_norm = delta.norm();
    if (rec.step_norm < config.step_tolerance) {
      rec.cost = cost;
      rec.accepted = false;
      result.report.push_back(rec);
      result.termination = "step tolerance";
      break;
    }

    Values candidate = retract_all(graph, sys.offsets, result.estimate, delta);
    const double new_cost = total_cost(graph, candidate);
    rec.predicted_decrease = 2.0 * delta.dot(sys.gradient) - delta.dot(sys.hessian * delta);
    rec.actual_decrease = cost - new_cost;
    rec.gain_ratio = rec.predicted_decrease > 0.0 ? rec.actual_decrease / rec.predicted_decrease : 0.0;

    if (std::isfinite(new_cost) && new_cost < cost) {
      rec.accepted = true;
      rec.cost = new_cost;
      result.report.push_back(rec);
      result.estimate = std::move(candidate);
      ++result.iterations;
      const double relative = (cost - new_cost) / cost;
      cost = new_cost;
      damping = std::max(damping * config.damping_decrease, 1e-15);
      if (relative < config.cost_tolerance) {
        result.termination = "cost tolerance";
        break;
      }
      sys = linearize(graph, result.estimate);
    } else {
      rec.cost = cost;
      result.report.push_back(rec);
      damping *= config.damping_increase;
      if (damping > config.max_damping) {
        result.termination = "damping cap";
        break;
      }
    }
  }
  result.final_cost = cost;
  return result;
}

void write_iteration_csv(std::ostream& out, const std::vector<IterationRecord>& report) {
  out << "iteration,cost,damping,step_norm\n";
  out.precision(17);
  for (const auto& r : report) {
    out << r.iteration << ',' << r.cost << ',' << r.damping << ',' << r.step_norm << '\n';
  }
}

SlidingWindow::SlidingWindow(int capacity, Anchoring anchoring) : capacity_(capacity), anchoring_(anchoring) {
  if (capacity < 1) throw ConfigError("window capacity must be at least 1");
  if (!(anchoring.position_sigma > 0.0) || !(anchoring.rotation_sigma > 0.0)) {
    throw ConfigError("anchor sigmas must be positive");
  }
}

void SlidingWindow::add_global(const VariableKey& key, const Value& initial) {
  graph_.add_variable(key);
  estimate_.insert(key, initial);
}

std::optional<Values> SlidingWindow::slide(Keyframe keyframe) {
  std::optional<Values> dropped;
  const auto keyframes = graph_.keyframes();
  if (static_cast<int>(keyframes.size()) >= capacity_) {
    const int oldest = keyframes.front();
    Values out;
    for (const auto& v : graph_.variables()) {
      if (v.keyframe == oldest && v.kind != VariableKind::LinkLength) out.insert(v, estimate_.at(v));
    }
    for (const auto& [k, _] : out.entries()) estimate_.erase(k);
    graph_.remove_keyframe(oldest);
    dropped = std::move(out);

    if (keyframes.size() > 1) {
      const int next = keyframes[1];
      for (const auto& v : graph_.variables()) {
        if (v.keyframe != next || v.kind == VariableKind::LinkLength) continue;
        if (v.kind == VariableKind::RootPosition) {
          graph_.add_factor(std::make_shared<PositionPrior>(v, estimate_.position(v), anchoring_.position_sigma,
                                                            "anchor"));
        } else {
          graph_.add_factor(std::make_shared<RotationPrior>(v, estimate_.rotation(v), anchoring_.rotation_sigma,
                                                            "anchor"));
        }
      }
    }
  }
  for (const auto& [key, value] : keyframe.initial.entries()) {
    if (key.keyframe != keyframe.index) throw ConfigError("keyframe variable " + key.str() + " has wrong index");
    graph_.add_variable(key);
    estimate_.insert(key, value);
  }
  for (auto& f : keyframe.factors) graph_.add_factor(std::move(f));
  return dropped;
}

}  // namespace koopgait::fg
