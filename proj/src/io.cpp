#include "swingid/io.hpp"

#include "swingid/csv.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

namespace swingid::io {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const json& field(const json& doc, const std::string& name, const std::string& where) {
  if (!doc.is_object() || !doc.contains(name)) throw ConfigError(where + ": missing field '" + name + "'");
  return doc.at(name);
}

VectorXd to_vector(const json& v, const std::string& name) {
  if (!v.is_array()) throw ConfigError("field '" + name + "' must be an array of numbers");
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError("field '" + name + "' must be an array of numbers");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

MatrixXd to_matrix(const json& v, const std::string& name) {
  if (!v.is_array() || v.empty()) throw ConfigError("field '" + name + "' must be a non-empty matrix");
  const auto rows = static_cast<Eigen::Index>(v.size());
  const auto cols = static_cast<Eigen::Index>(v[0].is_array() ? v[0].size() : 0);
  MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const VectorXd row = to_vector(v[static_cast<std::size_t>(r)], name);
    if (row.size() != cols) throw ConfigError("field '" + name + "' has ragged rows");
    out.row(r) = row.transpose();
  }
  return out;
}

json from_vector(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json from_matrix(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(from_vector(m.row(r).transpose()));
  return rows;
}

std::vector<BusKind> to_kinds(const json& v) {
  if (!v.is_array()) throw ConfigError("field 'kinds' must be an array");
  std::vector<BusKind> kinds;
  for (const auto& k : v) {
    const std::string s = k.is_string() ? k.get<std::string>() : "";
    if (s == "generator") {
      kinds.push_back(BusKind::Generator);
    } else if (s == "load") {
      kinds.push_back(BusKind::Load);
    } else {
      throw ConfigError("field 'kinds' entries must be \"generator\" or \"load\"");
    }
  }
  return kinds;
}

json from_kinds(const std::vector<BusKind>& kinds) {
  json out = json::array();
  for (const auto k : kinds) out.push_back(to_string(k));
  return out;
}

}  // namespace

json model_to_json(const PowerSystemModel& model) {
  return {{"kinds", from_kinds(model.kinds())},
          {"m", from_vector(model.inertia())},
          {"d", from_vector(model.damping())},
          {"a", from_matrix(model.connectivity())},
          {"P", from_vector(model.injection())}};
}

PowerSystemModel model_from_json(const json& doc) {
  const std::string where = "model";
  auto kinds = to_kinds(field(doc, "kinds", where));
  VectorXd m = to_vector(field(doc, "m", where), "m");
  VectorXd d = to_vector(field(doc, "d", where), "d");
  MatrixXd a = to_matrix(field(doc, "a", where), "a");
  VectorXd p = to_vector(field(doc, "P", where), "P");
  try {
    return PowerSystemModel(std::move(kinds), std::move(m), std::move(d), std::move(a), std::move(p));
  } catch (const ModelError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

PowerSystemModel read_model_file(const std::string& path) { return model_from_json(read_json_file(path)); }

json estimator_to_json(const PinnEstimator& est, const json& metadata) {
  json layers = json::array();
  for (std::size_t l = 0; l < est.weights().size(); ++l) {
    layers.push_back({{"weights", from_matrix(est.weights()[l])}, {"bias", from_vector(est.biases()[l])}});
  }
  const auto& s = est.structure();
  return {{"layer_sizes", est.layer_sizes()},
          {"layers", layers},
          {"inertia_free", from_vector(est.inertia_free())},
          {"damping_free", from_vector(est.damping_free())},
          {"inertia", from_vector(est.inertia())},
          {"damping", from_vector(est.damping())},
          {"time_scale", est.time_scale()},
          {"output_scale", from_vector(est.output_scale())},
          {"structure", {{"kinds", from_kinds(s.kinds)}, {"a", from_matrix(s.connectivity)}, {"P", from_vector(s.injection)}}},
          {"training", metadata}};
}

PinnEstimator estimator_from_json(const json& doc) {
  const std::string where = "estimator";
  const json& st = field(doc, "structure", where);
  KnownStructure s{to_kinds(field(st, "kinds", where)), to_matrix(field(st, "a", where), "a"),
                   to_vector(field(st, "P", where), "P")};
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
  for (const auto& layer : field(doc, "layers", where)) {
    weights.push_back(to_matrix(field(layer, "weights", where), "weights"));
    biases.push_back(to_vector(field(layer, "bias", where), "bias"));
  }
  VectorXd scale = doc.contains("output_scale") ? to_vector(doc.at("output_scale"), "output_scale") : VectorXd();
  try {
    return PinnEstimator(std::move(s), std::move(weights), std::move(biases),
                         to_vector(field(doc, "inertia_free", where), "inertia_free"),
                         to_vector(field(doc, "damping_free", where), "damping_free"),
                         doc.value("time_scale", 1.0), std::move(scale));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("estimator: ") + e.what());
  }
}

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& losses) {
  out << "epoch,L_z,L_c\n";
  for (const auto& r : losses) out << r.epoch << ',' << csv::format(r.measurement) << ',' << csv::format(r.physics) << '\n';
}

void write_ukf_csv(std::ostream& out, const UkfReport& report) {
  if (report.steps.empty()) return;
  out << 't';
  for (Eigen::Index i = 0; i < report.steps[0].inertia.size(); ++i) out << ",m" << i + 1;
  for (Eigen::Index i = 0; i < report.steps[0].damping.size(); ++i) out << ",d" << i + 1;
  out << ",trace_P\n";
  for (const auto& s : report.steps) {
    out << csv::format(s.t);
    for (const double v : s.inertia) out << ',' << csv::format(v);
    for (const double v : s.damping) out << ',' << csv::format(v);
    out << ',' << csv::format(s.trace) << '\n';
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace swingid::io
