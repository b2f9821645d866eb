#include "koopgait/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "koopgait/error.hpp"

namespace koopgait {

using skeleton::kNumJoints;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string boxplot_svg(const std::vector<EvaluationReport>& reports) {
  const double width = 160.0 * static_cast<double>(reports.size()) + 80.0;
  const double height = 400.0, top = 30.0, bottom = 360.0;
  double ymax = 0.0;
  for (const auto& r : reports) ymax = std::max(ymax, r.error_percentiles.max);
  if (ymax <= 0.0) ymax = 1.0;
  auto y = [&](double v) { return bottom - (bottom - top) * v / ymax; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"60\" y1=\"" << top << "\" x2=\"60\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    s << "<text x=\"55\" y=\"" << y(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << fmt_short(v)
      << "</text>\n";
  }
  s << "<text x=\"15\" y=\"" << (top + bottom) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 15 "
    << (top + bottom) / 2 << ")\" text-anchor=\"middle\">joint error (m)</text>\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto v = reports[i].flat_errors();
    std::sort(v.begin(), v.end());
    const double cx = 80.0 + 160.0 * static_cast<double>(i) + 60.0;
    const double q1 = quantile_sorted(v, 0.25), q2 = quantile_sorted(v, 0.5), q3 = quantile_sorted(v, 0.75);
    const double lo = v.front(), p95 = quantile_sorted(v, 0.95);
    const char* color = kPalette[i % 6];
    s << "<line x1=\"" << cx << "\" y1=\"" << y(lo) << "\" x2=\"" << cx << "\" y2=\"" << y(p95)
      << "\" stroke=\"black\"/>\n";
    s << "<rect x=\"" << cx - 30 << "\" y=\"" << y(q3) << "\" width=\"60\" height=\"" << y(q1) - y(q3)
      << "\" fill=\"" << color << "\" fill-opacity=\"0.4\" stroke=\"" << color << "\"/>\n";
    s << "<line x1=\"" << cx - 30 << "\" y1=\"" << y(q2) << "\" x2=\"" << cx + 30 << "\" y2=\"" << y(q2)
      << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] > p95) s << "<circle cx=\"" << cx << "\" cy=\"" << y(v[j]) << "\" r=\"1.5\" fill=\"" << color << "\"/>\n";
    }
    s << "<text x=\"" << cx << "\" y=\"" << bottom + 20 << "\" font-size=\"12\" text-anchor=\"middle\">"
      << escape_xml(reports[i].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string depth_svg(const std::vector<EvaluationReport>& reports) {
  const double width = 800.0, height = 400.0, left = 60.0, right = 780.0, top = 30.0, bottom = 360.0;
  std::size_t n = reports.front().truth_depth.size();
  double lo = 1e300, hi = -1e300;
  auto extend = [&](const std::vector<double>& d) {
    for (double v : d) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  };
  extend(reports.front().truth_depth);
  for (const auto& r : reports) {
    extend(r.depth);
    n = std::max(n, r.depth.size());
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const double span = std::max<double>(1.0, static_cast<double>(n) - 1.0);
  auto px = [&](std::size_t k) { return left + (right - left) * static_cast<double>(k) / span; };
  auto py = [&](double v) { return bottom - (bottom - top) * (v - lo) / (hi - lo); };
  auto polyline = [&](const std::vector<double>& d, const std::string& color, const char* dash) {
    std::ostringstream p;
    p << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"" << dash << " points=\"";
    for (std::size_t k = 0; k < d.size(); ++k) p << px(k) << ',' << py(d[k]) << ' ';
    p << "\"/>\n";
    return p.str();
  };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    s << "<text x=\"" << left - 5 << "\" y=\"" << py(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
      << fmt_short(v) << "</text>\n";
  }
  s << "<text x=\"" << (left + right) / 2 << "\" y=\"" << height - 10
    << "\" font-size=\"12\" text-anchor=\"middle\">keyframe</text>\n";
  s << polyline(reports.front().truth_depth, "black", " stroke-dasharray=\"4 3\"");
  s << "<text x=\"" << right - 150 << "\" y=\"" << top << "\" font-size=\"12\">ground truth</text>\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const char* color = kPalette[i % 6];
    s << polyline(reports[i].depth, color, "");
    s << "<text x=\"" << right - 150 << "\" y=\"" << top + 15.0 * static_cast<double>(i + 1)
      << "\" font-size=\"12\" fill=\"" << color << "\">" << escape_xml(reports[i].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

Percentiles percentiles(std::vector<double> values) {
  if (values.empty()) throw DataError("cannot take percentiles of an empty error list");
  std::sort(values.begin(), values.end());
  return {quantile_sorted(values, 0.5), quantile_sorted(values, 0.9), quantile_sorted(values, 0.95), values.back()};
}

std::vector<double> EvaluationReport::flat_errors() const {
  std::vector<double> out;
  out.reserve(errors.size() * kNumJoints);
  for (const auto& e : errors) out.insert(out.end(), e.begin(), e.end());
  return out;
}

double second_difference_rms(const std::vector<double>& series) {
  if (series.size() < 3) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 1; k + 1 < series.size(); ++k) {
    const double d = series[k + 1] - 2.0 * series[k] + series[k - 1];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(series.size() - 2));
}

EvaluationReport evaluate(const std::vector<skeleton::JointSet>& estimate, const std::vector<skeleton::JointSet>& truth,
                          const std::string& name) {
  if (estimate.size() != truth.size()) {
    throw DataError("estimate has " + std::to_string(estimate.size()) + " keyframes, ground truth " +
                    std::to_string(truth.size()));
  }
  if (estimate.empty()) throw DataError("nothing to evaluate");

  EvaluationReport r;
  r.name = name;
  double sq = 0.0;
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    const Eigen::Vector3d ce = estimate[k].centroid();
    const Eigen::Vector3d ct = truth[k].centroid();
    std::array<double, kNumJoints> e{};
    for (int j = 0; j < kNumJoints; ++j) {
      e[j] = ((estimate[k][j] - ce) - (truth[k][j] - ct)).norm();
      sq += (estimate[k][j] - truth[k][j]).squaredNorm();
    }
    r.errors.push_back(e);
    r.depth.push_back(ce.z());
    r.truth_depth.push_back(ct.z());
    if (k > 0) r.max_centroid_jump = std::max(r.max_centroid_jump, (ce - estimate[k - 1].centroid()).norm());
  }
  r.joint_rmse = std::sqrt(sq / static_cast<double>(estimate.size() * kNumJoints));
  r.error_percentiles = percentiles(r.flat_errors());
  r.smoothness = second_difference_rms(r.depth);
  r.truth_smoothness = second_difference_rms(r.truth_depth);
  return r;
}

void add_confusion(EvaluationReport& report, const std::vector<Activity>& predicted,
                   const std::vector<Activity>& truth) {
  if (predicted.size() != truth.size()) throw DataError("activity label counts differ");
  report.confusion = Eigen::MatrixXi::Zero(kNumActivities, kNumActivities);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++report.confusion(static_cast<int>(truth[i]), static_cast<int>(predicted[i]));
  }
}

std::string errors_csv(const std::vector<EvaluationReport>& reports) {
  std::ostringstream s;
  s << "report,keyframe,joint,error\n";
  const auto& names = skeleton::SkeletonModel::lower_body().joint_names();
  for (const auto& r : reports) {
    if (r.name.empty() || r.name.find_first_of(",\n") != std::string::npos) {
      throw ConfigError("report name '" + r.name + "' must be nonempty without commas or newlines");
    }
    for (std::size_t k = 0; k < r.errors.size(); ++k) {
      for (int j = 0; j < kNumJoints; ++j) s << r.name << ',' << k << ',' << names[j] << ',' << fmt(r.errors[k][j]) << '\n';
    }
  }
  return s.str();
}

std::vector<std::pair<std::string, std::vector<double>>> read_errors_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "report,keyframe,joint,error") throw DataError("errors.csv: bad header");
  std::vector<std::pair<std::string, std::vector<double>>> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto last = line.rfind(',');
    const auto first = line.find(',');
    if (first == std::string::npos || last == first) {
      throw DataError("errors.csv line " + std::to_string(lineno) + ": expected 4 fields");
    }
    const std::string name = line.substr(0, first);
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(line.substr(last + 1), &used);
      if (used != line.size() - last - 1) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw DataError("errors.csv line " + std::to_string(lineno) + ": bad error value");
    }
    if (out.empty() || out.back().first != name) out.emplace_back(name, std::vector<double>{});
    out.back().second.push_back(v);
  }
  return out;
}

std::string report_to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["format"] = "koopgait-evaluation";
  j["version"] = 1;
  j["name"] = r.name;
  j["errors"] = r.errors;
  j["depth"] = r.depth;
  j["truth_depth"] = r.truth_depth;
  j["joint_rmse"] = r.joint_rmse;
  j["smoothness"] = r.smoothness;
  j["truth_smoothness"] = r.truth_smoothness;
  j["max_centroid_jump"] = r.max_centroid_jump;
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < r.confusion.rows(); ++i) {
    std::vector<int> row(r.confusion.cols());
    for (int c = 0; c < r.confusion.cols(); ++c) row[c] = r.confusion(i, c);
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j.dump() + "\n";
}

EvaluationReport report_from_json(const std::string& text) {
  EvaluationReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "koopgait-evaluation") throw DataError("not an evaluation file");
    if (j.at("version") != 1) throw DataError("unsupported evaluation version " + j.at("version").dump());
    r.name = j.at("name");
    r.errors = j.at("errors").get<std::vector<std::array<double, kNumJoints>>>();
    r.depth = j.at("depth").get<std::vector<double>>();
    r.truth_depth = j.at("truth_depth").get<std::vector<double>>();
    r.joint_rmse = j.at("joint_rmse");
    r.smoothness = j.at("smoothness");
    r.truth_smoothness = j.at("truth_smoothness");
    r.max_centroid_jump = j.at("max_centroid_jump");
    const auto rows = j.at("confusion").get<std::vector<std::vector<int>>>();
    if (!rows.empty()) {
      r.confusion.resize(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw DataError("ragged confusion matrix");
        for (std::size_t c = 0; c < rows[i].size(); ++c) r.confusion(i, c) = rows[i][c];
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation: ") + e.what());
  }
  r.error_percentiles = percentiles(r.flat_errors());
  return r;
}

void write_report(const std::vector<EvaluationReport>& reports, const std::filesystem::path& dir) {
  if (reports.empty()) throw DataError("no reports to write");
  for (const auto& r : reports) {
    if (r.errors.empty()) throw DataError("report '" + r.name + "' has an empty error list");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());

  write_text(dir / "errors.csv", errors_csv(reports));
  write_text(dir / "boxplot.svg", boxplot_svg(reports));
  write_text(dir / "depth_traj.svg", depth_svg(reports));

  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["keyframes"] = r.errors.size();
    j["error_percentiles"] = {{"p50", r.error_percentiles.p50},
                              {"p90", r.error_percentiles.p90},
                              {"p95", r.error_percentiles.p95},
                              {"max", r.error_percentiles.max}};
    j["joint_rmse"] = r.joint_rmse;
    j["depth_smoothness"] = r.smoothness;
    j["truth_depth_smoothness"] = r.truth_smoothness;
    j["max_centroid_jump"] = r.max_centroid_jump;
    if (r.confusion.size() > 0) {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (int i = 0; i < r.confusion.rows(); ++i) {
        std::vector<int> row(r.confusion.cols());
        for (int c = 0; c < r.confusion.cols(); ++c) row[c] = r.confusion(i, c);
        rows.push_back(row);
      }
      j["confusion"] = rows;
    }
    summary.push_back(j);
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace koopgait
