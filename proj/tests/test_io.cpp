#include "swingid/io.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

using namespace swingid;
using io::json;

TEST_CASE("model JSON round-trips every field") {
  const auto c = preset(SystemId::C);
  const auto back = io::model_from_json(io::model_to_json(c));
  CHECK(back.kinds() == c.kinds());
  CHECK(back.inertia() == c.inertia());
  CHECK(back.damping() == c.damping());
  CHECK(back.connectivity() == c.connectivity());
  CHECK(back.injection() == c.injection());
}

TEST_CASE("a model document without the connectivity matrix names field a") {
  json doc = io::model_to_json(preset(SystemId::A));
  doc.erase("a");
  try {
    io::model_from_json(doc);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("'a'"));
  }
}

TEST_CASE("malformed model documents are rejected") {
  json doc = io::model_to_json(preset(SystemId::A));
  SECTION("ragged matrix") {
    doc["a"][1] = {1.0, 2.0};
    CHECK_THROWS_AS(io::model_from_json(doc), ConfigError);
  }
  SECTION("unknown bus kind") {
    doc["kinds"][0] = "motor";
    CHECK_THROWS_AS(io::model_from_json(doc), ConfigError);
  }
  SECTION("inconsistent sizes") {
    doc["d"] = {1.0};
    CHECK_THROWS_AS(io::model_from_json(doc), ConfigError);
  }
  SECTION("non-numeric entry") {
    doc["P"][0] = "x";
    CHECK_THROWS_AS(io::model_from_json(doc), ConfigError);
  }
}

TEST_CASE("estimator JSON reproduces the network exactly") {
  const auto s = KnownStructure::of(preset(SystemId::A));
  Eigen::VectorXd scale(4);
  scale << 0.1, 0.2, 0.3, 0.4;
  const NetworkConfig cfg{{5, 4}, 10.0, true};
  const auto est = PinnEstimator::initialize(s, cfg, 3, 0.2, scale);
  const json doc = io::estimator_to_json(est, {{"note", "x"}});
  CHECK(doc.at("layer_sizes") == json({1, 5, 4, 4}));
  CHECK(doc.at("training").at("note") == "x");
  const auto back = io::estimator_from_json(json::parse(doc.dump()));
  CHECK(back.pack() == est.pack());
  CHECK(back.output_scale() == est.output_scale());
  CHECK(back.time_scale() == 10.0);
  for (const double t : {0.0, 0.37, 1.9}) {
    const auto a = est.forward(t), b = back.forward(t);
    CHECK(a.u == b.u);
    CHECK(a.u_dot == b.u_dot);
    CHECK(a.u_ddot == b.u_ddot);
  }
}

TEST_CASE("loss and UKF tables use the documented headers") {
  std::ostringstream loss;
  io::write_loss_csv(loss, {{0, 0.5, 0.25}, {1, 0.125, 0.0625}});
  CHECK(loss.str() == "epoch,L_z,L_c\n0,0.5,0.25\n1,0.125,0.0625\n");

  UkfReport r;
  r.steps.push_back({0.0, Eigen::Vector2d(1, 2), Eigen::Vector4d(3, 4, 5, 6), 7});
  std::ostringstream ukf;
  io::write_ukf_csv(ukf, r);
  CHECK(ukf.str() == "t,m1,m2,d1,d2,d3,d4,trace_P\n0,1,2,3,4,5,6,7\n");
}

TEST_CASE("unreadable JSON files raise ConfigError") {
  CHECK_THROWS_AS(io::read_json_file("/nonexistent/spec.json"), ConfigError);
}
