#include "koopgait/config.hpp"

#include <set>

#include <json.hpp>

#include "koopgait/error.hpp"

namespace koopgait {

using nlohmann::json;

void EstimatorConfig::validate() const {
  if (window < 2) throw ConfigError("window must hold at least 2 keyframes");
  if (!(use_imu || use_image || use_depth || use_contact || use_koopman)) {
    throw ConfigError("at least one factor type must be enabled");
  }
  const auto& s = sigmas;
  for (double v : {s.image, s.imu, s.contact, s.koopman, s.twist}) {
    if (!(v > 0.0)) throw ConfigError("factor sigmas must be positive");
  }
  if (!(s.depth_sigma0 > 0.0) || s.depth_kappa < 0.0) throw ConfigError("depth sigma model needs sigma0 > 0, kappa >= 0");
  if (!(initial_length > 0.0)) throw ConfigError("initial link length must be positive");
  if (!(contact_threshold > 0.0 && contact_threshold < 1.0)) throw ConfigError("contact threshold must lie in (0, 1)");
  if (contact_source != "detector" && contact_source != "ground_truth") {
    throw ConfigError("contact_source must be 'detector' or 'ground_truth'");
  }
  if (activity_source != "classifier" && activity_source != "ground_truth") {
    throw ConfigError("activity_source must be 'classifier' or 'ground_truth'");
  }
  if (use_contact && contact_source == "detector" && contact_model.empty()) {
    throw ConfigError("contact factor enabled but no contact model path given");
  }
  if (use_koopman && koopman_bank.empty()) throw ConfigError("Koopman factor enabled but no Koopman bank path given");
  if (use_koopman && activity_source == "classifier" && stgcn_model.empty()) {
    throw ConfigError("Koopman factor enabled but no ST-GCN model path given");
  }
  solver.validate();
}

std::string EstimatorConfig::to_json() const {
  json j;
  j["window"] = window;
  j["factors"] = {{"imu", use_imu}, {"image", use_image}, {"depth", use_depth},
                  {"contact", use_contact}, {"koopman", use_koopman}};
  j["sigmas"] = {{"image", sigmas.image},     {"depth_sigma0", sigmas.depth_sigma0},
                 {"depth_kappa", sigmas.depth_kappa}, {"imu", sigmas.imu},
                 {"contact", sigmas.contact}, {"koopman", sigmas.koopman},
                 {"twist", sigmas.twist}};
  j["solver"] = {{"max_iterations", solver.max_iterations}, {"initial_damping", solver.initial_damping},
                 {"damping_increase", solver.damping_increase}, {"damping_decrease", solver.damping_decrease},
                 {"max_damping", solver.max_damping}, {"cost_tolerance", solver.cost_tolerance},
                 {"step_tolerance", solver.step_tolerance}};
  j["anchoring"] = {{"position_sigma", anchoring.position_sigma}, {"rotation_sigma", anchoring.rotation_sigma}};
  j["initial_length"] = initial_length;
  j["contact_threshold"] = contact_threshold;
  j["contact_source"] = contact_source;
  j["activity_source"] = activity_source;
  j["models"] = {{"koopman_bank", koopman_bank}, {"stgcn_model", stgcn_model}, {"contact_model", contact_model}};
  return j.dump(2);
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

EstimatorConfig EstimatorConfig::from_json(const std::string& text) {
  EstimatorConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j,
               {"window", "factors", "sigmas", "solver", "anchoring", "initial_length", "contact_threshold",
                "contact_source", "activity_source", "models"},
               "");
    read(j, "window", c.window);
    if (j.contains("factors")) {
      const auto& f = j["factors"];
      check_keys(f, {"imu", "image", "depth", "contact", "koopman"}, "factors.");
      read(f, "imu", c.use_imu);
      read(f, "image", c.use_image);
      read(f, "depth", c.use_depth);
      read(f, "contact", c.use_contact);
      read(f, "koopman", c.use_koopman);
    }
    if (j.contains("sigmas")) {
      const auto& s = j["sigmas"];
      check_keys(s, {"image", "depth_sigma0", "depth_kappa", "imu", "contact", "koopman", "twist"}, "sigmas.");
      read(s, "image", c.sigmas.image);
      read(s, "depth_sigma0", c.sigmas.depth_sigma0);
      read(s, "depth_kappa", c.sigmas.depth_kappa);
      read(s, "imu", c.sigmas.imu);
      read(s, "contact", c.sigmas.contact);
      read(s, "koopman", c.sigmas.koopman);
      read(s, "twist", c.sigmas.twist);
    }
    if (j.contains("solver")) {
      const auto& s = j["solver"];
      check_keys(s,
                 {"max_iterations", "initial_damping", "damping_increase", "damping_decrease", "max_damping",
                  "cost_tolerance", "step_tolerance"},
                 "solver.");
      read(s, "max_iterations", c.solver.max_iterations);
      read(s, "initial_damping", c.solver.initial_damping);
      read(s, "damping_increase", c.solver.damping_increase);
      read(s, "damping_decrease", c.solver.damping_decrease);
      read(s, "max_damping", c.solver.max_damping);
      read(s, "cost_tolerance", c.solver.cost_tolerance);
      read(s, "step_tolerance", c.solver.step_tolerance);
    }
    if (j.contains("anchoring")) {
      const auto& a = j["anchoring"];
      check_keys(a, {"position_sigma", "rotation_sigma"}, "anchoring.");
      read(a, "position_sigma", c.anchoring.position_sigma);
      read(a, "rotation_sigma", c.anchoring.rotation_sigma);
    }
    read(j, "initial_length", c.initial_length);
    read(j, "contact_threshold", c.contact_threshold);
    read(j, "contact_source", c.contact_source);
    read(j, "activity_source", c.activity_source);
    if (j.contains("models")) {
      const auto& m = j["models"];
      check_keys(m, {"koopman_bank", "stgcn_model", "contact_model"}, "models.");
      read(m, "koopman_bank", c.koopman_bank);
      read(m, "stgcn_model", c.stgcn_model);
      read(m, "contact_model", c.contact_model);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed estimator config: ") + e.what());
  }
  return c;
}

EstimatorConfig EstimatorConfig::vision_only() {
  EstimatorConfig c;
  c.use_imu = c.use_contact = c.use_koopman = false;
  return c;
}

EstimatorConfig EstimatorConfig::baseline() {
  EstimatorConfig c;
  c.use_koopman = false;
  return c;
}

}  // namespace koopgait
