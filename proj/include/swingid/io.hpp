#pragma once

#include "swingid/model.hpp"
#include "swingid/pinn.hpp"
#include "swingid/ukf.hpp"

#include <json.hpp>

#include <iosfwd>
#include <stdexcept>
#include <string>

namespace swingid {

/// Malformed or inconsistent user input. The message names the field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

using nlohmann::json;

json model_to_json(const PowerSystemModel& model);
/// Requires `kinds`, `m`, `d`, `a` and `P`; `a` is a dense row-major matrix.
PowerSystemModel model_from_json(const json& doc);
PowerSystemModel read_model_file(const std::string& path);

json estimator_to_json(const PinnEstimator& est, const json& metadata = json::object());
PinnEstimator estimator_from_json(const json& doc);

/// `epoch,L_z,L_c`
void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& losses);
/// `t,m1,..,d1,..,trace_P`
void write_ukf_csv(std::ostream& out, const UkfReport& report);

json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace io
}  // namespace swingid
